"""Gross-Pitaevskii evolution of perturbed vortices and modulation tracking.

The field is Psi = B + w with B = e^{i gamma} V1(x - c) a stationary
Ginzburg-Landau solution, so w obeys

    i w_t + Laplace w + (1 - |B|^2) w + eta (B + w) = 0,   eta = |B|^2 - |Psi|^2.

w is held at zero on the two outermost grid layers (Dirichlet data on the
second layer), expanded in the matching sine basis.  The default integrator
is the conservative Crank-Nicolson scheme

    i (w1 - w0)/dt + Laplace m + (1 - |B|^2) m + (eta0 + eta1)/2 (B + m) = 0,
    m = (w0 + w1)/2,

solved by fixed-point iteration with the Laplacian inverted exactly.  It
conserves the discrete energy E_h(w) = int 1/2 |grad w|^2 - 1/2 (1 - |B|^2)|w|^2
+ 1/4 eta^2 up to the iteration tolerance, and keeps w = 0 exactly.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft as sfft
from scipy.interpolate import RegularGridInterpolator

from .fields import CutoffSpec, Field2D, UsageError, d_e, h_norm
from .grid import Grid2D, vortex_sample, vortex_sample_transformed

log = logging.getLogger(__name__)

DELTA_DEFAULT = 0.05
ALPHA_DEFAULT = 0.2
PATCH_STEP = 0.05
CHI = CutoffSpec(1.0)


class StepRejected(RuntimeError):
    pass


class ModulationFailure(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


# -- time stepping --------------------------------------------------------------------


def _dst(a):
    return sfft.dstn(a, type=1, axes=(0, 1), norm="ortho")


class Stepper:
    """Time stepper for the perturbation w of a Field2D."""

    def __init__(self, f: Field2D, dt=None, method="cn", tol=1e-13, max_iter=60):
        if method not in ("cn", "rk4"):
            raise UsageError("method must be 'cn' or 'rk4'")
        self.template = f
        g = f.grid
        self.grid = g
        self.inner = Grid2D(g.L - g.h, g.N - 2)
        self.symbol = self.inner.neg_laplacian_symbol
        self.h = g.h
        self.dt = float(g.h**2 if dt is None else dt)
        if self.dt <= 0:
            raise UsageError("dt must be positive")
        self.method = method
        if method == "rk4" and self.dt > 0.14 * g.h**2 * 2.0:
            log.warning("rk4: dt=%.3g exceeds the explicit stability budget ~0.28 h^2", self.dt)
        self.tol = tol
        self.max_iter = max_iter
        base = f.base
        self.B = base.V[2:-2, 2:-2]
        self.omb = base.one_minus_rho2[2:-2, 2:-2]
        self.w = f.perturbation[2:-2, 2:-2].copy()
        self.t = 0.0
        self.iterations = []
        self.rejections = 0

    # helpers

    def eta(self, w):
        return -2 * np.real(w * np.conj(self.B)) - np.abs(w) ** 2

    def laplacian(self, w):
        return _dst(-self.symbol * _dst(w))

    def energy(self, w=None):
        """Discrete renormalized energy of B + w (w vanishing at the boundary)."""
        w = self.w if w is None else w
        wh = _dst(w)
        grad = float(np.sum(self.symbol * np.abs(wh) ** 2))
        pot = float(np.sum(self.omb * np.abs(w) ** 2))
        et = self.eta(w)
        return self.h**2 * (0.5 * grad - 0.5 * pot + 0.25 * float(np.sum(et**2)))

    def field(self, w=None):
        w = self.w if w is None else w
        full = np.zeros((self.grid.N, self.grid.N), dtype=complex)
        full[2:-2, 2:-2] = w
        f = self.template
        return Field2D(self.grid, full, f.profile, f.center, f.phase)

    def time_derivative(self, w):
        return 1j * (self.laplacian(w) + self.omb * w + self.eta(w) * (self.B + w))

    # schemes

    def _cn(self, w0, dt):
        eta0 = self.eta(w0)
        denom = 2j / dt - self.symbol
        m = w0 + 0.5 * dt * self.time_derivative(w0)
        for k in range(1, self.max_iter + 1):
            w1 = 2 * m - w0
            etab = 0.5 * (eta0 + self.eta(w1))
            rhs = (2j / dt) * w0 - self.omb * m - etab * (self.B + m)
            m_new = _dst(_dst(rhs) / denom)
            change = float(np.max(np.abs(m_new - m))) if m.size else 0.0
            m = m_new
            if k >= 2 and change <= self.tol:
                self.iterations.append(k)
                return 2 * m - w0
        raise StepRejected(f"fixed point stalled at change {change:.3g} after {self.max_iter} iterations")

    def _rk4(self, w0, dt):
        F = self.time_derivative
        k1 = F(w0)
        k2 = F(w0 + 0.5 * dt * k1)
        k3 = F(w0 + 0.5 * dt * k2)
        k4 = F(w0 + dt * k3)
        return w0 + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    def _advance(self, w0, dt, depth=0):
        try:
            return self._cn(w0, dt) if self.method == "cn" else self._rk4(w0, dt)
        except StepRejected as exc:
            if depth >= 6:
                raise
            self.rejections += 1
            log.warning("step rejected at t=%.6g (%s); retrying with dt/2", self.t, exc)
            half = self._advance(w0, 0.5 * dt, depth + 1)
            return self._advance(half, 0.5 * dt, depth + 1)

    def step(self):
        if np.any(self.w):
            self.w = self._advance(self.w, self.dt)
        self.t += self.dt
        return self.w


def step(f: Field2D, dt=None, method="cn"):
    """One time step; returns the new Field2D."""
    s = Stepper(f, dt, method)
    s.step()
    return s.field()


def evolve(f: Field2D, T, dt=None, method="cn"):
    s = Stepper(f, dt, method)
    n = int(round(T / s.dt))
    for _ in range(n):
        s.step()
    return s.field(), s


# -- modulation ------------------------------------------------------------------------


class Patch:
    """Fine quadrature patch on supp chi = B_2 with access to w(. + b).

    ``interp="spectral"`` evaluates the sine series of w exactly off-grid;
    ``interp="bilinear"`` interpolates grid values of w and of its spectral
    derivatives, with O(h^2) bias.
    """

    def __init__(self, f: Field2D, step=PATCH_STEP, interp="spectral"):
        if interp not in ("spectral", "bilinear"):
            raise UsageError("interp must be 'spectral' or 'bilinear'")
        self.f = f
        self.interp = interp
        n = int(round(2.0 / step))
        self.x = step * np.arange(-n, n + 1)
        self.X, self.Y = np.meshgrid(self.x, self.x, indexing="ij")
        self.wq = CHI(np.hypot(self.X, self.Y)) * step**2
        ref = vortex_sample(f.profile, self.X, self.Y)
        self.V, self.Vx, self.Vy = ref.V, ref.Vx, ref.Vy
        self.omr = ref.one_minus_rho2
        self.Z = (self.Vx, self.Vy, 1j * self.V)
        self.coeffs = f.grid.sine_coefficients(f.perturbation) if np.any(f.perturbation) else None
        self._tables = None

    def _bilinear(self, b, derivatives, laplacian):
        g = self.f.grid
        if self._tables is None:
            w = self.f.perturbation
            wx, wy = g.gradient(w)
            self._tables = [RegularGridInterpolator((g.x, g.x), a) for a in (w, wx, wy, g.laplacian(w))]
        pts = np.stack([(self.X + b[0]).ravel(), (self.Y + b[1]).ravel()], axis=-1)
        pick = [0] + ([1, 2] if derivatives else []) + ([3] if laplacian else [])
        out = [self._tables[i](pts).reshape(self.X.shape) for i in pick]
        return out if len(out) > 1 else out[0]

    def psi(self, b, derivatives=False, laplacian=False):
        """Psi(x + b) and optionally its gradient and Laplacian on the patch."""
        f = self.f
        g = f.grid
        reach = max(abs(self.x[0]), abs(self.x[-1])) + max(abs(b[0]), abs(b[1]))
        if reach > g.L - 2 * g.h:
            raise UsageError(f"shift {b} moves the patch outside the grid")
        s = vortex_sample_transformed(f.profile, self.X + b[0], self.Y + b[1], f.center, f.phase)
        val, dx, dy, lap = s.V, s.Vx, s.Vy, s.lap
        if self.coeffs is not None:
            if self.interp == "spectral":
                parts = g.evaluate_at(self.coeffs, self.x + b[0], self.x + b[1], derivatives, laplacian)
            else:
                parts = self._bilinear(b, derivatives, laplacian)
            if not (derivatives or laplacian):
                parts = [parts]
            val = val + parts[0]
            k = 1
            if derivatives:
                dx = dx + parts[1]
                dy = dy + parts[2]
                k = 3
            if laplacian:
                lap = lap + parts[k]
        return val, dx, dy, lap

    def integral(self, u, z):
        return float(np.sum(self.wq * np.real(u * np.conj(z))))


def xi(f: Field2D, b, phi, patch=None):
    """(int chi <eps, d_x V1>, int chi <eps, d_y V1>, int chi <eps, i V1>), eps = e^{-i phi} Psi(. + b) - V1."""
    P = patch or Patch(f)
    val, *_ = P.psi(b)
    eps = np.exp(-1j * phi) * val - P.V
    return np.array([P.integral(eps, z) for z in P.Z])


def xi_jacobian(f: Field2D, b, phi, patch=None):
    """Analytic derivative of xi in (b1, b2, phi)."""
    P = patch or Patch(f)
    val, dx, dy, _ = P.psi(b, derivatives=True)
    rot = np.exp(-1j * phi)
    J = np.empty((3, 3))
    for k, z in enumerate(P.Z):
        J[k, 0] = P.integral(rot * dx, z)
        J[k, 1] = P.integral(rot * dy, z)
        J[k, 2] = -P.integral(1j * rot * val, z)
    return J


def m0_matrix(profile, grid=None):
    """The matrix of chi-weighted Gram integrals of (d_x V1, d_y V1, i V1) on the patch."""
    grid = grid or Grid2D(30.0, 64)
    P = Patch(Field2D.vortex(grid, profile))
    return np.array([[P.integral(zi, zk) for zk in P.Z] for zi in P.Z])


@dataclass
class ModulationState:
    t: float
    a: np.ndarray
    phi: float
    M: np.ndarray
    F: np.ndarray
    cond: float
    residual: float
    iterations: int
    history: list = field(default_factory=list)
    estimate_A: float | None = None
    eps_h: float | None = None

    def rates(self):
        return np.linalg.solve(self.M, self.F)


def modulation_system(f: Field2D, a, phi, patch=None):
    """(M_eps, F_eps) of the modulation equations at parameters (a, phi)."""
    P = patch or Patch(f)
    val, dx, dy, lap = P.psi(a, derivatives=True, laplacian=True)
    rot = np.exp(-1j * phi)
    V = P.V
    eps = rot * val - V
    ex = rot * dx - P.Vx
    ey = rot * dy - P.Vy
    # Laplace V1 = -(1 - |V1|^2) V1
    lap_eps = rot * lap + P.omr * V
    eta_e = -2 * np.real(eps * np.conj(V)) - np.abs(eps) ** 2
    Lop = lap_eps + P.omr * eps + eta_e * (V + eps)
    I = P.integral
    Vx, Vy = P.Vx, P.Vy
    M = np.array(
        [
            [I(Vx, Vx) + I(Vx, ex), I(Vx, ey), I(1j * Vx, eps)],
            [I(Vy, ex), I(Vy, Vy) + I(Vy, ey), I(1j * Vy, eps)],
            [I(V, 1j * ex), I(V, 1j * ey), I(V, V) + I(V, eps)],
        ]
    )
    F = np.array([I(Lop, 1j * Vx), I(Lop, 1j * Vy), I(Lop, V)])
    return M, F


def modulate(
    f: Field2D, guess=((0.0, 0.0), 0.0), tol=1e-10, max_iter=40, t=0.0, estimate=False, alpha=None, interp="spectral"
):
    """Newton solve of xi(f, a, phi) = 0 starting from ``guess``."""
    b0 = np.asarray(guess[0], dtype=float)
    phi0 = float(guess[1])
    if alpha is not None:
        dist = d_e(Field2D.vortex(f.grid, f.profile), f.transformed(b0, -phi0))
        if dist > alpha:
            raise ModulationFailure(f"d_E = {dist:.3g} exceeds the modulation threshold {alpha}", [])
    P = Patch(f, interp=interp)
    b = b0.copy()
    phi = phi0
    hist = []
    res = np.inf
    for it in range(1, max_iter + 1):
        r = xi(f, b, phi, P)
        res = float(np.max(np.abs(r)))
        hist.append(res)
        if res <= tol:
            break
        J = xi_jacobian(f, b, phi, P)
        step_ = np.linalg.solve(J, -r)
        b = b + step_[:2]
        phi = phi + step_[2]
        if not np.all(np.isfinite(step_)) or np.max(np.abs(b)) > 5.0 or (it > 5 and res > 10 * hist[0]):
            raise ModulationFailure("Newton iteration left the modulation neighbourhood", hist)
    else:
        raise ModulationFailure(f"Newton did not converge (residual {res:.3g})", hist)
    M, F = modulation_system(f, b, phi, P)
    state = ModulationState(t, b, phi, M, F, float(np.linalg.cond(M)), res, it, hist)
    if estimate:
        eps_h = h_norm(f.transformed(b, -phi).eps, f.profile)
        rhs = h_norm(f.transformed(b0, -phi0).eps, f.profile)
        lhs = eps_h + float(np.sum(np.abs(b - b0))) + abs(np.exp(1j * phi) - np.exp(1j * phi0))
        state.eps_h = eps_h
        state.estimate_A = lhs / rhs if rhs > 0 else 0.0
    return state


def modulation_rhs(f: Field2D, state: ModulationState, cond_cap=1e6, patch=None):
    """(a1', a2', phi') from M_eps (a', phi') = F_eps at the state's parameters."""
    M, F = modulation_system(f, state.a, state.phi, patch)
    cond = np.linalg.cond(M)
    if cond > cond_cap:
        raise ModulationFailure(f"modulation matrix is near singular (cond {cond:.3g})", [])
    return np.linalg.solve(M, F)


def unwrap_phase(phi, previous):
    return phi + 2 * np.pi * np.round((previous - phi) / (2 * np.pi))


# -- linearization check ---------------------------------------------------------------


def linearized_residual(eps, grid, profile, window_fraction=0.8):
    """|| Laplace eps + (1 - |V1|^2) eps - 2 <V1, eps> V1 || in the box interior.

    Fourth-order differences on the nodes at least two layers from the edge,
    weighted by a smooth window vanishing at ``window_fraction`` L.
    """
    from .fields import reference_vortex, window

    e = eps.values if hasattr(eps, "values") else np.asarray(eps)
    ref = reference_vortex(grid, profile)
    h = grid.h
    lap = np.zeros_like(e)
    c = e[2:-2, 2:-2]
    for ax in (0, 1):
        def sh(k):
            sl = [slice(2, -2), slice(2, -2)]
            n = e.shape[ax]
            sl[ax] = slice(2 + k, n - 2 + k)
            return e[tuple(sl)]
        lap[2:-2, 2:-2] += (-sh(-2) + 16 * sh(-1) - 30 * c + 16 * sh(1) - sh(2)) / (12 * h**2)
    res = lap + ref.one_minus_rho2 * e - 2 * np.real(ref.V * np.conj(e)) * ref.V
    wts = window(grid.R, window_fraction * grid.L)
    wts[:2] = wts[-2:] = 0
    wts[:, :2] = wts[:, -2:] = 0
    return float(np.sqrt(np.sum(wts * np.abs(res) ** 2) * h**2))


# -- experiments ------------------------------------------------------------------------


@dataclass
class EvolutionRun:
    """Diagnostics of one evolution with modulation tracking."""

    config: dict
    times: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    d_e: list = field(default_factory=list)
    a: list = field(default_factory=list)
    phi: list = field(default_factory=list)
    rates: list = field(default_factory=list)
    ode_a: list = field(default_factory=list)
    ode_phi: list = field(default_factory=list)
    d0: float = 0.0
    truncated: str | None = None
    rejections: int = 0

    @property
    def ratio(self):
        if self.d0 == 0:
            return [0.0 for _ in self.d_e]
        return [d / self.d0 for d in self.d_e]

    def summary(self):
        e = np.asarray(self.energy)
        e0 = e[0] if len(e) else 0.0
        drift = float(np.max(np.abs(e - e0))) if len(e) else 0.0
        out = {
            "d0": self.d0,
            "max_ratio": float(max(self.ratio)) if self.ratio else 0.0,
            "energy0": float(e0),
            "energy_drift": drift,
            "energy_drift_rel": drift / abs(e0) if e0 else 0.0,
            "max_rate": float(max(self.rates)) if self.rates else 0.0,
            "rate_constant": float(max(self.rates)) / self.d0 if self.d0 and self.rates else 0.0,
            "truncated": self.truncated,
            "rejections": self.rejections,
            "final_quartile_trend": self.final_quartile_trend(),
        }
        if self.ode_a:
            da = np.abs(np.asarray(self.ode_a) - np.asarray(self.a[: len(self.ode_a)]))
            dp = np.abs(np.asarray(self.ode_phi) - np.asarray(self.phi[: len(self.ode_phi)]))
            out["track_gap"] = float(np.max(da.sum(axis=1) + dp))
        return out

    def final_quartile_trend(self):
        """Fitted growth of the ratio over the final quartile, relative to its maximum."""
        t = np.asarray(self.times)
        r = np.asarray(self.ratio)
        if len(t) < 8 or max(r) == 0:
            return 0.0
        sel = t >= t[0] + 0.75 * (t[-1] - t[0])
        slope = np.polyfit(t[sel], r[sel], 1)[0]
        return float(slope * (t[sel][-1] - t[sel][0]) / max(r))

    def write_csv(self, path, digits=17):
        fmt = f"{{:.{digits}g}}"
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "energy", "d_E", "a1", "a2", "phi", "rate"])
            for k, t in enumerate(self.times):
                wr.writerow(
                    [fmt.format(v) for v in (t, self.energy[k], self.d_e[k], self.a[k][0], self.a[k][1], self.phi[k], self.rates[k])]
                )

    def write_manifest(self, path):
        Path(path).write_text(json.dumps({"config": self.config, "summary": self.summary()}, indent=2, default=float))


def orbital_stability_experiment(
    f0: Field2D,
    T,
    dt=None,
    every=None,
    delta=DELTA_DEFAULT,
    alpha=ALPHA_DEFAULT,
    ode_track=False,
    method="cn",
    snapshot_dir=None,
    snapshot_every=None,
    config=None,
):
    """Evolve, modulate every ``every`` steps and record the diagnostics series."""
    vort = Field2D.vortex(f0.grid, f0.profile)
    d0 = d_e(vort, f0)
    if d0 > delta:
        raise UsageError(f"initial distance {d0:.3g} exceeds delta = {delta}")
    s = Stepper(f0, dt, method)
    n_steps = int(round(T / s.dt))
    every = every or max(1, int(round(0.5 / s.dt)))
    run = EvolutionRun(dict(config or {}, dt=s.dt, T=T, every=every, method=method), d0=d0)

    state = None
    guess = ((0.0, 0.0), 0.0)
    ode = None
    ode_rate = None
    prev_field = None

    def record(fld, t):
        nonlocal state, guess
        if d0 == 0 and not np.any(fld.perturbation):
            run.times.append(t)
            run.energy.append(s.energy())
            run.d_e.append(0.0)
            run.a.append((0.0, 0.0))
            run.phi.append(0.0)
            run.rates.append(0.0)
            state = None
            return True
        try:
            st = modulate(fld, guess, t=t)
        except ModulationFailure as exc:
            run.truncated = f"t={t:.6g}: {exc}"
            return False
        phi = unwrap_phase(st.phi, guess[1])
        st.phi = phi
        modf = fld.transformed(st.a, -phi)
        dist = d_e(vort, modf)
        if dist > alpha:
            run.truncated = f"t={t:.6g}: modulated distance {dist:.3g} above alpha = {alpha}"
            return False
        rate = st.rates()
        run.times.append(t)
        run.energy.append(s.energy())
        run.d_e.append(dist)
        run.a.append((float(st.a[0]), float(st.a[1])))
        run.phi.append(float(phi))
        run.rates.append(float(np.abs(rate[:2]).sum() + abs(rate[2])))
        guess = (tuple(st.a), phi)
        state = st
        return True

    f = s.field()
    if not record(f, 0.0):
        return run
    if ode_track:
        ode = np.array([*run.a[0], run.phi[0]])
        run.ode_a.append(tuple(ode[:2]))
        run.ode_phi.append(float(ode[2]))
        ode_rate = _ode_rate(f, ode)
        prev_field = f
    for k in range(1, n_steps + 1):
        s.step()
        f_new = None
        if ode_track:
            f_new = s.field()
            pred = ode + s.dt * ode_rate
            rate_new = _ode_rate(f_new, pred)
            ode = ode + 0.5 * s.dt * (ode_rate + rate_new)
            ode_rate = _ode_rate(f_new, ode)
            prev_field = f_new
        if k % every == 0:
            f_snap = f_new if f_new is not None else s.field()
            if not record(f_snap, s.t):
                break
            if ode_track:
                run.ode_a.append(tuple(ode[:2]))
                run.ode_phi.append(float(ode[2]))
            if snapshot_dir is not None and snapshot_every and (k // every) % snapshot_every == 0:
                f_snap.meta = {"t": s.t}
                f_snap.save(Path(snapshot_dir) / f"snap_{k:07d}.bin")
    run.rejections = s.rejections
    del prev_field
    return run


def perturbation_at_distance(grid, profile, recipe, distance, tol=1e-10, max_iter=20):
    """Field V1 + s w with the recipe amplitude rescaled so that d_E(V1, .) = distance."""
    vort = Field2D.vortex(grid, profile)

    def dist(amp):
        return d_e(vort, Field2D.from_recipe(grid, profile, recipe.scaled(amp / recipe.amplitude)))

    if distance == 0 or recipe.amplitude == 0:
        return Field2D.from_recipe(grid, profile, recipe.scaled(0.0))
    a0, d0 = recipe.amplitude, dist(recipe.amplitude)
    a1 = a0 * distance / d0
    d1 = dist(a1)
    for _ in range(max_iter):
        if abs(d1 - distance) <= tol * distance or d1 == d0:
            break
        a0, d0, a1 = a1, d1, a1 + (distance - d1) * (a1 - a0) / (d1 - d0)
        d1 = dist(a1)
    return Field2D.from_recipe(grid, profile, recipe.scaled(a1 / recipe.amplitude))


def _ode_rate(f, params):
    if not np.any(f.perturbation) and f.is_centered:
        return np.zeros(3)
    M, F = modulation_system(f, params[:2], params[2])
    return np.linalg.solve(M, F)
