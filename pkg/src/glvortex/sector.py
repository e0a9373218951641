"""Fourier-sector quadratic forms and their constrained spectra.

A perturbation is split as eps = sum_j eps_j(r) e^{i(j+1) theta}, eps_j = a_j + i b_j.
Each sector form is a one-dimensional quadratic form in e(r) against the
measure r dr.  Discretization: nodes 0 = r_0 < r_1 < ... < r_M, midpoint
differences for e', trapezoid weights for the zeroth-order terms, e(0) = 0
for every sector except j = -1, and a free (natural) end at r_M.

The Q_0 potential 1/r^2 - (1 - rho^2) is replaced by its well-balanced
discrete counterpart, i.e. the potential for which the sampled profile is an
exact null vector of the discrete operator at interior nodes.  This keeps the
factorization Q_0(e) = int rho^2 |(e/rho)'|^2 r dr exact on the grid; the
difference to the sampled analytic potential is O(h^2) and reported.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import linalg as sla
from scipy import optimize, sparse
from scipy.io import mmwrite
from scipy.sparse import linalg as spla

from .fields import CutoffSpec
from .profile import eval_profile, one_minus_rho_sq, rho_over_r

ZERO_INPUT = "zero-input"

DEFAULT_STEPS = ((5.0, 0.005), (20.0, 0.02), (60.0, 0.1))


class SectorError(RuntimeError):
    """Discretization inconsistency (e.g. an indefinite Gram matrix)."""


# -- grid ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Nodes r_0 = 0 < r_1 < ... < r_M."""

    r: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        if r[0] != 0.0 or np.any(np.diff(r) <= 0):
            raise ValueError("radial grid must start at 0 and increase strictly")
        object.__setattr__(self, "r", r)

    @classmethod
    def graded(cls, refine=1, segments=DEFAULT_STEPS):
        """Piecewise uniform grid; ``refine`` divides every step."""
        pieces = []
        start = 0.0
        for stop, step in segments:
            h = step / refine
            n = int(round((stop - start) / h))
            pieces.append(start + h * np.arange(n))
            start = stop
        pieces.append(np.array([start]))
        return cls(np.concatenate(pieces))

    @property
    def M(self):
        return len(self.r) - 1

    @property
    def r_max(self):
        return float(self.r[-1])

    @cached_property
    def dr(self):
        return np.diff(self.r)

    @cached_property
    def mid(self):
        return 0.5 * (self.r[1:] + self.r[:-1])

    @cached_property
    def conductance(self):
        return self.mid / self.dr

    @cached_property
    def weights(self):
        """Trapezoid weights for the measure r dr."""
        cell = np.zeros_like(self.r)
        cell[:-1] += 0.5 * self.dr
        cell[1:] += 0.5 * self.dr
        return self.r * cell

    @cached_property
    def stiffness(self):
        """Matrix of sum_k c_k (e_{k+1} - e_k)^2."""
        c = self.conductance
        n = len(self.r)
        diag = np.zeros(n)
        diag[:-1] += c
        diag[1:] += c
        return sparse.diags([diag, -c, -c], [0, 1, -1], format="csc")

    def integrate(self, f):
        return float(np.dot(self.weights, f))

    def derivative_form(self, e, f=None):
        """Midpoint approximation of int e' f' r dr."""
        f = e if f is None else f
        return float(np.dot(self.conductance, np.diff(e) * np.diff(f)))

    def meta(self):
        return {
            "nodes": int(len(self.r)),
            "r_max": self.r_max,
            "first_step": float(self.dr[0]),
            "max_step": float(self.dr.max()),
        }

    def check(self):
        issues = []
        core = self.dr[self.r[:-1] < 1.0]
        if core.size == 0 or core.max() > 0.01:
            issues.append("core step exceeds 0.01")
        if self.r_max < 60.0:
            issues.append(f"grid ends at r = {self.r_max:g} < 60")
        return issues


@dataclass
class RadialFunction:
    """Real sector profile e(r_i) on a RadialGrid, for sector index j."""

    grid: RadialGrid
    values: np.ndarray
    j: int
    tol: float = 1e-8

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.r.shape:
            raise ValueError("values do not match the grid")
        if self.j != -1:
            scale = max(1.0, float(np.max(np.abs(v))))
            if abs(v[0]) > self.tol * scale:
                raise ValueError(f"sector j={self.j} requires e(0) = 0, got {v[0]:.3g}")
            v = v.copy()
            v[0] = 0.0
        self.values = v

    @classmethod
    def from_callable(cls, grid, fn, j):
        return cls(grid, fn(grid.r), j)


# -- assembled forms ----------------------------------------------------------------


def _profile_samples(grid, profile):
    r = grid.r
    rho = eval_profile(profile, r, 0)
    drho = eval_profile(profile, r, 1)
    rho_r = rho_over_r(profile, r)
    omr = one_minus_rho_sq(profile, r)
    return rho, drho, rho_r, omr


def well_balanced_potential(grid, rho, omr):
    """Discrete potential making rho a null vector of the Q_0 operator.

    Interior nodes use -(S rho)_i / (w_i rho_i); node M keeps the sampled
    analytic value 1/r^2 - (1 - rho^2); node 0 carries zero weight.
    """
    r = grid.r
    S = grid.stiffness
    V = np.zeros_like(r)
    Srho = S @ rho
    V[1:-1] = -Srho[1:-1] / (grid.weights[1:-1] * rho[1:-1])
    V[-1] = 1.0 / r[-1] ** 2 - omr[-1]
    return V


@dataclass(eq=False)
class SectorOperatorBundle:
    """Discrete Q_{R,j}, I_R and H_j Gram forms on one radial grid."""

    j: int
    R: float
    grid: RadialGrid
    profile_hash: str
    q_potential: np.ndarray
    i_weight: np.ndarray
    gram_potential: np.ndarray
    h_potential: dict
    constraints: dict
    diagnostics: dict
    warnings: list = field(default_factory=list)

    @property
    def pinned_origin(self):
        return self.j != -1

    @property
    def free(self):
        f = np.ones(len(self.grid.r), dtype=bool)
        if self.pinned_origin:
            f[0] = False
        return f

    def _matrix(self, diag):
        return (self.grid.stiffness + sparse.diags(self.grid.weights * diag)).tocsc()

    @cached_property
    def q_matrix(self):
        return self._matrix(self.q_potential)

    @cached_property
    def gram_matrix(self):
        return self._matrix(self.gram_potential)

    @cached_property
    def i_matrix(self):
        return sparse.diags(self.grid.weights * self.i_weight).tocsc()

    def _vec(self, e):
        if isinstance(e, RadialFunction):
            return e.values
        return np.asarray(e, dtype=float)

    def q_value(self, e):
        x = self._vec(e)
        return float(x @ (self.q_matrix @ x))

    def i_value(self, e):
        x = self._vec(e)
        return float(self.grid.integrate(self.i_weight * x**2))

    def gram_value(self, e):
        x = self._vec(e)
        return float(x @ (self.gram_matrix @ x))

    def h_sector_value(self, e):
        """||e e^{i(j+1) theta}||_H^2 / (2 pi) for real e."""
        x = self._vec(e)
        g = self.grid
        rho = self.h_potential["rho"]
        omr = self.h_potential["omr"]
        dx = np.diff(x) / g.dr
        xr = x * rho
        dxr = np.diff(xr) / g.dr
        omr_mid = 0.5 * (omr[1:] + omr[:-1])
        grad = float(np.sum(g.mid * g.dr * (dxr**2 + omr_mid * dx**2)))
        zeroth = self.h_potential["zeroth"]
        return grad + g.integrate(zeroth * x**2)

    def h_sector_matrix(self):
        g = self.grid
        rho = self.h_potential["rho"]
        omr = self.h_potential["omr"]
        n = len(g.r)
        # (x rho)' on edges and x' on edges
        D = sparse.diags([-1.0 / g.dr, 1.0 / g.dr], [0, 1], shape=(n - 1, n))
        Dr = D @ sparse.diags(rho)
        omr_mid = 0.5 * (omr[1:] + omr[:-1])
        Wm = sparse.diags(g.mid * g.dr)
        A = Dr.T @ Wm @ Dr + D.T @ Wm @ sparse.diags(omr_mid) @ D
        return (A + sparse.diags(g.weights * self.h_potential["zeroth"])).tocsc()

    def report(self, **extra):
        rep = {
            "j": self.j,
            "R": self.R,
            "grid_meta": self.grid.meta(),
            "profile_hash": self.profile_hash,
            "diagnostics": self.diagnostics,
            "warnings": list(self.warnings),
        }
        rep.update(extra)
        return rep

    def dump_matrices(self, directory):
        """Write Q, I and Gram matrices in Matrix Market coordinate format."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        tag = f"j{self.j}_R{self.R:g}"
        paths = []
        for name, mat in (("Q", self.q_matrix), ("I", self.i_matrix), ("G", self.gram_matrix)):
            p = d / f"{name}_{tag}.mtx"
            mmwrite(str(p), sparse.coo_matrix(mat))
            paths.append(p)
        return paths


def assemble_sector(j, R, grid, profile):
    """Assemble the sector-j forms for cutoff scale R (R = inf gives chi_R = 1)."""
    j = int(j)
    rho, drho, rho_r, omr = _profile_samples(grid, profile)
    r = grid.r
    chi_R = CutoffSpec(R)(r) if np.isfinite(R) else np.ones_like(r)
    chi = CutoffSpec(1.0)(r)
    Vwb = well_balanced_potential(grid, rho, omr)

    inv_r2 = np.zeros_like(r)
    inv_r2[1:] = 1.0 / r[1:] ** 2
    extra = (j**2 + 2 * j * (1.0 - (1.0 - chi_R) ** 2 * rho**2)) * inv_r2
    q_pot = Vwb + extra
    q_pot[0] = 0.0  # zero weight at the origin

    gram = j**2 / (1.0 + r**2) + (j + 1) ** 2 * inv_r2 / (1.0 + r**2)
    h_zero = j**2 * rho**2 * inv_r2 + omr * (j + 1) ** 2 * inv_r2
    if j == -1:
        # rho^2 j^2 / r^2 stays finite at the origin
        h_zero = rho_r**2
    analytic = np.zeros_like(r)
    analytic[1:] = inv_r2[1:] - omr[1:]
    gap = np.abs(Vwb[1:-1] - analytic[1:-1])

    constraints = {
        "b0": grid.weights * chi * rho,
        "plus": grid.weights * chi * (drho - rho_r),
        "minus": grid.weights * chi * (drho + rho_r),
    }
    bundle = SectorOperatorBundle(
        j=j,
        R=float(R),
        grid=grid,
        profile_hash=profile.content_hash,
        q_potential=q_pot,
        i_weight=rho**2 * chi_R**2,
        gram_potential=gram,
        h_potential={"rho": rho, "omr": omr, "zeroth": h_zero, "drho": drho, "rho_r": rho_r, "chi": chi},
        constraints=constraints,
        diagnostics={
            "potential_gap_max": float(gap.max()),
            "potential_gap_core": float(gap[r[1:-1] < 1.0].max()),
        },
        warnings=grid.check(),
    )
    for w in bundle.warnings:
        warnings.warn(f"sector j={j}: {w}", stacklevel=2)
    return bundle


# -- identities ---------------------------------------------------------------------


@dataclass
class IdentityCheck:
    form_value: float
    factorized_value: float
    boundary_flux: float
    asserted: bool

    @property
    def residual(self):
        return abs(self.form_value - self.factorized_value)

    def to_dict(self):
        return {
            "form_value": self.form_value,
            "factorized_value": self.factorized_value,
            "boundary_flux": self.boundary_flux,
            "residual": self.residual,
            "asserted": self.asserted,
        }


def q0_identity_check(e, bundle, flux_tol=1e-10):
    """Compare Q_0(e) with int rho^2 |(e/rho)'|^2 r dr on the grid.

    ``form_value`` is the discrete Q_0(e) with the flux through r_M removed,
    the discrete counterpart of the half-line value.  With the well-balanced
    potential the two numbers agree to rounding.  ``asserted`` is False when
    the flux itself is not negligible, i.e. when e has not decayed at r_M.
    """
    if bundle.j != 0:
        raise ValueError("q0_identity_check needs the j = 0 bundle")
    x = e.values if isinstance(e, RadialFunction) else np.asarray(e, dtype=float)
    rho = bundle.h_potential["rho"]
    g = bundle.grid
    total = bundle.q_value(x)
    flux = _end_flux(bundle, x)
    phi = np.zeros_like(x)
    phi[1:] = x[1:] / rho[1:]
    c = g.conductance[1:]
    fact = float(np.sum(c * rho[1:-1] * rho[2:] * np.diff(phi[1:]) ** 2))
    # the edge (0, 1) term c_0 e_1^2 is absorbed by the potential at node 1
    return IdentityCheck(total - flux, fact, flux, bool(abs(flux) <= flux_tol))


def _end_flux(bundle, x):
    g = bundle.grid
    rho = bundle.h_potential["rho"]
    c = g.conductance[-1]
    w = g.weights[-1]
    return float(x[-1] ** 2 * (c * (rho[-1] - rho[-2]) / rho[-1] + w * bundle.q_potential[-1]))


def difference_integral(bundle, e, kind):
    """Right-hand sides of the sector comparisons.

    ``kind='j2'``: int j^2 |e|^2 / r^2 r dr;  ``kind='minus2'``:
    4 int rho^2 (1 - chi_R)^2 |e|^2 / r^2 r dr.
    """
    g = bundle.grid
    x = e.values if isinstance(e, RadialFunction) else np.asarray(e, float)
    inv_r2 = np.zeros_like(g.r)
    inv_r2[1:] = 1.0 / g.r[1:] ** 2
    if kind == "j2":
        return g.integrate(bundle.j**2 * inv_r2 * x**2)
    if kind == "minus2":
        rho = bundle.h_potential["rho"]
        chi_R = CutoffSpec(bundle.R)(g.r) if np.isfinite(bundle.R) else np.ones_like(g.r)
        return g.integrate(4 * rho**2 * (1 - chi_R) ** 2 * inv_r2 * x**2)
    raise ValueError(kind)


# -- eigenproblems ------------------------------------------------------------------


@dataclass
class BlockProblem:
    """Symmetric pencil (A, B) on free unknowns with optional single constraint."""

    name: str
    A: sparse.spmatrix
    B: sparse.spmatrix
    constraint: np.ndarray | None
    layout: list  # [(sector j, node indices into the unknown vector)]
    grid: RadialGrid

    @property
    def size(self):
        return self.A.shape[0]

    def split(self, x):
        """Full-grid sector profiles from a block vector."""
        out = []
        n = len(self.grid.r)
        for j, (idx, nodes) in self.layout:
            v = np.zeros(n)
            v[nodes] = x[idx]
            out.append((j, v))
        return out


def _free_nodes(bundle):
    return np.nonzero(bundle.free)[0]


def single_block(bundle, with_i, constraint=None, name=None):
    nodes = _free_nodes(bundle)
    A = bundle.q_matrix
    B = bundle.gram_matrix
    if with_i:
        A = A + 2 * bundle.i_matrix
        B = B + bundle.i_matrix
    A = A[nodes][:, nodes].tocsc()
    B = B[nodes][:, nodes].tocsc()
    c = None if constraint is None else np.asarray(constraint)[nodes]
    layout = [(bundle.j, (np.arange(len(nodes)), nodes))]
    return BlockProblem(name or f"j{bundle.j}", A, B, c, layout, bundle.grid)


def pair_block(bplus, bminus, sign, constraint=None, name=None, i_factor=1.0, gram_i_factor=0.5):
    """Coupled (e, f) in sectors (j, -j): Q_{R,j}(e) + Q_{R,-j}(f) + I_R(e + sign f).

    Unknowns are interleaved node by node to keep the matrices banded.
    ``constraint`` is a pair of full-grid vectors (for e and for f).
    """
    n = len(bplus.grid.r)
    I = sparse.diags(bplus.grid.weights * bplus.i_weight)
    Qp, Qm = bplus.q_matrix, bminus.q_matrix
    Gp, Gm = bplus.gram_matrix, bminus.gram_matrix
    Ablk = sparse.bmat([[Qp + i_factor * I, sign * i_factor * I], [sign * i_factor * I, Qm + i_factor * I]])
    Bblk = sparse.bmat([[Gp + gram_i_factor * I, sign * gram_i_factor * I], [sign * gram_i_factor * I, Gm + gram_i_factor * I]])
    # interleave: unknown 2i -> e_i, 2i+1 -> f_i
    perm = np.empty(2 * n, dtype=int)
    perm[0::2] = np.arange(n)
    perm[1::2] = n + np.arange(n)
    keep = np.ones(2 * n, dtype=bool)
    if bplus.pinned_origin:
        keep[0] = False
    if bminus.pinned_origin:
        keep[1] = False
    sel = perm[keep]
    A = Ablk.tocsr()[sel][:, sel].tocsc()
    B = Bblk.tocsr()[sel][:, sel].tocsc()
    c = None
    if constraint is not None:
        c = np.concatenate(constraint)[sel]
    pos = np.arange(len(sel))
    e_mask = sel < n
    layout = [
        (bplus.j, (pos[e_mask], sel[e_mask])),
        (bminus.j, (pos[~e_mask], sel[~e_mask] - n)),
    ]
    return BlockProblem(name or f"pair{bplus.j}{'+' if sign > 0 else '-'}", A, B, c, layout, bplus.grid)


def count_below(A, B, shift):
    """Number of generalized eigenvalues below ``shift`` (Sylvester inertia).

    Uses an unpivoted LU of the banded matrix A - shift B, whose pivots carry
    the inertia.
    """
    K = (A - shift * B).tocsc()
    lu = spla.splu(K, permc_spec="NATURAL", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
    if not (np.all(lu.perm_r == np.arange(K.shape[0])) and np.all(lu.perm_c == np.arange(K.shape[0]))):
        raise SectorError("inertia count needs an unpivoted factorization")
    return int(np.sum(lu.U.diagonal() < 0))


def _lowest_pairs(A, B, k=4, sigma=-3.0):
    k = min(k, A.shape[0] - 2)
    vals, vecs = spla.eigsh(A, k=k, M=B, sigma=sigma, which="LM")
    order = np.argsort(vals)
    return vals[order], vecs[:, order]


@dataclass
class EigenResult:
    lam: float
    vector: np.ndarray
    problem: BlockProblem
    certified: bool
    unconstrained: tuple

    def witness(self):
        return [RadialFunction(self.problem.grid, v, j) for j, v in self.problem.split(self.vector)]


def min_eig_constrained(problem: BlockProblem, sigma=-3.0, certify=True):
    """Smallest eigenvalue of A x = lam B x restricted to c . x = 0.

    The unconstrained bottom of the spectrum comes from shift-invert Lanczos;
    with one constraint the constrained minimum is the root of
    c^T (A - lam B)^{-1} c in (lam_1, lam_2) (interlacing), found by Brent's
    method on sparse factorizations.
    """
    A, B, c = problem.A, problem.B, problem.constraint
    if count_below(B, sparse.csc_matrix(B.shape), 0.0) != 0:
        raise SectorError(f"{problem.name}: Gram matrix is not positive definite")
    vals, vecs = _lowest_pairs(A, B, sigma=sigma)
    if certify:
        lo = vals[0] - 1e-9 * (1 + abs(vals[0]))
        if count_below(A, B, lo) != 0:
            raise SectorError(f"{problem.name}: Lanczos missed eigenvalues below {vals[0]:.6g}")
    if c is None:
        x = vecs[:, 0]
        return EigenResult(float(vals[0]), x / np.sqrt(x @ (B @ x)), problem, certify, (float(vals[0]), float(vals[1])))

    cn = c / np.linalg.norm(c)
    g = vecs.T @ cn
    scale = np.sqrt(cn @ spla.spsolve(B.tocsc(), cn))
    cands = [(vals[k], vecs[:, k]) for k in range(len(vals)) if abs(g[k]) < 1e-10 * scale]

    def secular(lam):
        return float(cn @ spla.splu((A - lam * B).tocsc()).solve(cn))

    l1, l2 = vals[0], vals[1]
    root = None
    if abs(g[0]) >= 1e-10 * scale and l2 - l1 > 1e-13 * (1 + abs(l1)):
        d = 1e-9 * (l2 - l1)
        a, b = l1 + d, l2 - d
        fa, fb = secular(a), secular(b)
        if fa < 0 < fb:
            root = optimize.brentq(secular, a, b, xtol=1e-15 * (1 + abs(l1)), rtol=4 * np.finfo(float).eps, maxiter=200)
    if root is not None:
        x = spla.splu((A - root * B).tocsc()).solve(cn)
        cands.append((root, x))
    if not cands:
        raise SectorError(f"{problem.name}: constrained minimum not bracketed")
    lam, x = min(cands, key=lambda t: t[0])
    x = x / np.sqrt(x @ (B @ x))
    return EigenResult(float(lam), x, problem, certify, (float(l1), float(l2)))


def min_eig_dense(problem: BlockProblem):
    """Dense oracle: QR complement of the constraint and a full symmetric solve."""
    A = problem.A.toarray()
    B = problem.B.toarray()
    if problem.constraint is not None:
        C = problem.constraint.reshape(-1, 1)
        Qm, _ = np.linalg.qr(C, mode="complete")
        Z = Qm[:, 1:]
        A = Z.T @ A @ Z
        B = Z.T @ B @ Z
    else:
        Z = None
    try:
        np.linalg.cholesky(B)
    except np.linalg.LinAlgError as exc:
        raise SectorError(f"{problem.name}: Gram matrix is not positive definite") from exc
    vals, vecs = sla.eigh(A, B, subset_by_index=[0, 0])
    x = vecs[:, 0] if Z is None else Z @ vecs[:, 0]
    return float(vals[0]), x


# -- full combined form -------------------------------------------------------------


def combined_blocks(R, grid, profile, j_max=6, constrained=True):
    """Blocks of Q_R + 2 I_R against ||.||_{H_j}^2 + I_R, sector by sector."""
    bundles = {j: assemble_sector(j, R, grid, profile) for j in range(-j_max, j_max + 1)}
    b0 = bundles[0]
    blocks = [
        single_block(b0, with_i=True, name="a0"),
        single_block(b0, with_i=False, constraint=b0.constraints["b0"] if constrained else None, name="b0"),
    ]
    for j in range(1, j_max + 1):
        bp, bm = bundles[j], bundles[-j]
        ca = cb = None
        if j == 1 and constrained:
            ca = (b0.constraints["plus"], b0.constraints["minus"])
            cb = (b0.constraints["plus"], -b0.constraints["minus"])
        blocks.append(pair_block(bp, bm, +1, ca, name=f"a{j}"))
        blocks.append(pair_block(bp, bm, -1, cb, name=f"b{j}"))
    return bundles, blocks


@dataclass
class CoercivityReport:
    R: float
    lam_min: float
    block: str
    per_block: dict
    grid_meta: dict

    def to_dict(self):
        return {
            "R": self.R,
            "lambda_min": self.lam_min,
            "kappa_estimate": self.lam_min,
            "argmin_block": self.block,
            "per_block": self.per_block,
            "grid_meta": self.grid_meta,
        }


def constrained_coercivity(R, grid, profile, j_max=6):
    """Smallest constrained eigenvalue over all sector blocks."""
    _, blocks = combined_blocks(R, grid, profile, j_max)
    per = {}
    for blk in blocks:
        per[blk.name] = min_eig_constrained(blk).lam
    name = min(per, key=per.get)
    return CoercivityReport(float(R), per[name], name, per, grid.meta())


def q0_min_eigvec(bundle):
    """Bottom of the unconstrained Q_0 pencil and its H_0 correlation with rho."""
    blk = single_block(bundle, with_i=False, name="q0")
    res = min_eig_constrained(blk)
    nodes = blk.layout[0][1][1]
    rho = bundle.h_potential["rho"][nodes]
    x = res.vector
    G = blk.B
    corr = abs(x @ (G @ rho)) / np.sqrt((x @ (G @ x)) * (rho @ (G @ rho)))
    return res.lam, float(corr), res


# -- local form on the translation pair ---------------------------------------------------


@dataclass
class QlocValue:
    value: float
    boundary_flux: float
    norm_sq: float

    @property
    def bulk(self):
        return self.value - self.boundary_flux


def qloc_pm(u, v, sign, profile, grid=None):
    """Q_loc^{+-}(u, v) for u in sector 1 and v in sector -1.

    Q_loc = int |u'|^2 + |v'|^2 + 4 u^2/r^2 - (1 - rho^2)(u^2 + v^2) + rho^2 (u +- v)^2.
    Also returns the flux through the last node and the squared norm
    ||u||_{H_1}^2 + ||v||_{H_-1}^2 + int rho^2 (u +- v)^2.
    """
    grid = u.grid if grid is None else grid
    bp = assemble_sector(1, np.inf, grid, profile)
    bm = assemble_sector(-1, np.inf, grid, profile)
    blk = pair_block(bp, bm, 1 if sign > 0 else -1, gram_i_factor=1.0)
    n = len(grid.r)
    x_full = np.zeros(2 * n)
    x_full[0::2] = u.values
    x_full[1::2] = v.values
    keep = np.ones(2 * n, dtype=bool)
    keep[0] = False
    x = x_full[keep]
    Ax = blk.A @ x
    val = float(x @ Ax)
    flux = float(x[-2:] @ Ax[-2:])
    nrm = float(x @ (blk.B @ x))
    return QlocValue(val, flux, nrm)


def translation_pair(grid, profile, c=1.0):
    """(u, v) = c((rho' - rho/r)/2, (rho' + rho/r)/2): u + v = c rho', u - v = -c rho/r."""
    drho = eval_profile(profile, grid.r, 1)
    rr = rho_over_r(profile, grid.r)
    return RadialFunction(grid, c * 0.5 * (drho - rr), 1), RadialFunction(grid, c * 0.5 * (drho + rr), -1)


# -- dyadic scan --------------------------------------------------------------------


@dataclass
class ScanResult:
    R_selected: float | None
    kappa_estimate: float | str
    window_masses: dict
    pigeonhole_bound: float | None
    q_value: float | None = None
    norm_value: float | None = None

    def to_dict(self):
        return {
            "R_selected": self.R_selected,
            "kappa_estimate": self.kappa_estimate,
            "window_masses": {str(k): v for k, v in self.window_masses.items()},
            "pigeonhole_bound": self.pigeonhole_bound,
            "Q_R": self.q_value,
            "norm": self.norm_value,
        }


def _window_mass(grid, modes, R):
    r = grid.r
    inside = (r >= R) & (r <= 2 * R)
    inv_r2 = np.zeros_like(r)
    inv_r2[1:] = 1.0 / r[1:] ** 2
    total = np.zeros_like(r)
    for j in (1, -1):
        a, b = modes.get(j, (np.zeros_like(r), np.zeros_like(r)))
        total += a**2 + b**2
    return grid.integrate(np.where(inside, total * inv_r2, 0.0))


def sector_energy(modes, R, grid, profile, bundles=None):
    """(Q_R(eps), ||eps||_H^2 + I_R(eps)) / (2 pi) from sector data.

    ``modes`` maps j to (a_j, b_j) full-grid arrays.
    """
    zero = np.zeros_like(grid.r)
    js = sorted(set(modes) | {-j for j in modes})
    bundles = bundles or {}
    for j in js:
        if j not in bundles:
            bundles[j] = assemble_sector(j, R, grid, profile)

    def get(j):
        return modes.get(j, (zero, zero))

    q = 0.0
    h = 0.0
    for j in js:
        a, b = get(j)
        bj = bundles[j]
        q += bj.q_value(a) + bj.q_value(b)
        h += bj.h_sector_value(a) + bj.h_sector_value(b)
    b0 = bundles[0] if 0 in bundles else assemble_sector(0, R, grid, profile)
    a0, _ = get(0)
    i_tot = b0.i_value(a0)
    for j in js:
        if j >= 1:
            aj, bj_ = get(j)
            am, bm = get(-j)
            i_tot += 0.5 * (b0.i_value(aj + am) + b0.i_value(bj_ - bm))
    return q + 2 * i_tot, h + i_tot


def coercivity_scan(R0, N0, modes, grid, profile):
    """Pick R in {R0 2^k} with the smallest window mass; return the energy ratio there."""
    if R0 < 1:
        raise ValueError("base scale must be at least 1")
    if all(not (np.any(a) or np.any(b)) for a, b in modes.values()):
        return ScanResult(None, ZERO_INPUT, {}, None)
    radii = [R0 * 2.0**k for k in range(N0)]
    masses = {R: _window_mass(grid, modes, R) for R in radii}
    R_sel = min(masses, key=masses.get)
    h1 = 0.0
    for j in (1, -1):
        a, b = modes.get(j, (np.zeros_like(grid.r),) * 2)
        bj = assemble_sector(j, R_sel, grid, profile)
        h1 += bj.gram_value(a) + bj.gram_value(b)
    bound = 2.0 / N0 * h1
    q, nrm = sector_energy(modes, R_sel, grid, profile)
    return ScanResult(R_sel, q / nrm, masses, bound, q, nrm)


def project_constraints(modes, grid, profile):
    """Remove the three constraint components from sector data (Euclidean projection)."""
    b0 = assemble_sector(0, 1.0, grid, profile)
    c = b0.constraints
    out = {j: (np.array(a, float), np.array(b, float)) for j, (a, b) in modes.items()}
    zero = np.zeros_like(grid.r)
    for j in (0, 1, -1):
        out.setdefault(j, (zero.copy(), zero.copy()))

    def fix(vecs, cons):
        x = np.concatenate(vecs)
        cc = np.concatenate(cons)
        x = x - (cc @ x) / (cc @ cc) * cc
        n = len(vecs[0])
        return [x[k * n:(k + 1) * n] for k in range(len(vecs))]

    a0, b0v = out[0]
    (b0v,) = fix([b0v], [c["b0"]])
    a1, b1 = out[1]
    am1, bm1 = out[-1]
    a1, am1 = fix([a1, am1], [c["plus"], c["minus"]])
    b1, bm1 = fix([b1, bm1], [c["plus"], -c["minus"]])
    out[0] = (a0, b0v)
    out[1] = (a1, b1)
    out[-1] = (am1, bm1)
    return out



def random_modes(grid, seed=0, js=range(-3, 4), width=(1.0, 6.0)):
    """Seeded smooth sector data: a_j, b_j ~ r^{|j+1|} times a Gaussian mixture."""
    rng = np.random.default_rng(seed)
    r = grid.r
    modes = {}
    for j in js:
        pair = []
        for _ in range(2):
            s = rng.uniform(*width, 2)
            c = rng.normal(size=2)
            env = c[0] * np.exp(-(r / s[0]) ** 2) + c[1] * np.exp(-(r / s[1]) ** 2)
            pair.append(r ** abs(j + 1) / (1.0 + r) ** abs(j + 1) * env)
        modes[int(j)] = tuple(pair)
    return modes

# -- norm equivalence ---------------------------------------------------------------


def norm_equivalence(grid, profile, js=range(-4, 5)):
    """Extreme ratios ||e e^{i(j+1)theta}||_H^2 / (2 pi ||e||_{H_j}^2) per sector.

    Dense solve: the spectrum clusters at 1 (high frequencies), which stalls
    Lanczos.  Use a moderate grid.
    """
    out = {}
    for j in js:
        b = assemble_sector(j, 1.0, grid, profile)
        nodes = _free_nodes(b)
        H = b.h_sector_matrix()[nodes][:, nodes].toarray()
        G = b.gram_matrix[nodes][:, nodes].toarray()
        w = sla.eigh(H, G, eigvals_only=True)
        out[int(j)] = (float(w[0]), float(w[-1]))
    return out


def write_report(path, report):
    Path(path).write_text(json.dumps(report, indent=2, default=float))
