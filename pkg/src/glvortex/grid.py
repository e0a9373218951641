"""Cartesian grids, sine-spectral calculus and analytic vortex evaluation.

Perturbations vanish on the boundary of the box [-L, L]^2, so they are
expanded in the Dirichlet sine basis sin(k pi (x + L) / (2L)), k = 1..N-2.
Derivatives, Laplacians and off-grid evaluation are exact for that basis.
The vortex itself is never differenced: V1 and its gradient are evaluated
from the profile.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import fft as sfft

from .profile import SHOOT_START, eval_profile, one_minus_rho_sq, series_coefficients


@dataclass(frozen=True)
class Grid2D:
    """Uniform N x N grid on [-L, L]^2 (endpoints included)."""

    half_width: float
    resolution: int

    def __post_init__(self):
        if self.resolution < 8:
            raise ValueError("resolution must be at least 8")
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")

    @property
    def L(self):
        return self.half_width

    @property
    def N(self):
        return self.resolution

    @cached_property
    def h(self):
        return 2.0 * self.half_width / (self.resolution - 1)

    @cached_property
    def x(self):
        return np.linspace(-self.half_width, self.half_width, self.resolution)

    @cached_property
    def mesh(self):
        return np.meshgrid(self.x, self.x, indexing="ij")

    @property
    def X(self):
        return self.mesh[0]

    @property
    def Y(self):
        return self.mesh[1]

    @cached_property
    def R(self):
        return np.hypot(self.X, self.Y)

    @cached_property
    def weights(self):
        """Trapezoidal area weights."""
        w1 = np.full(self.N, self.h)
        w1[0] = w1[-1] = 0.5 * self.h
        return np.outer(w1, w1)

    def integrate(self, f):
        return float(np.sum(self.weights * f))

    @cached_property
    def wavenumbers(self):
        k = np.arange(1, self.N - 1)
        return k * np.pi / (2.0 * self.L)

    @cached_property
    def neg_laplacian_symbol(self):
        k = self.wavenumbers
        return k[:, None] ** 2 + k[None, :] ** 2

    def same_as(self, other):
        return self.half_width == other.half_width and self.resolution == other.resolution

    # -- sine-spectral transforms -----------------------------------------

    def sine_coefficients(self, w):
        """Coefficients c_kl with w_ij = sum c_kl sin(k pi i/(N-1)) sin(l pi j/(N-1))."""
        inner = np.asarray(w)[1:-1, 1:-1]
        return sfft.idstn(inner, type=1, axes=(0, 1)) * 4.0

    def from_sine_coefficients(self, c):
        out = np.zeros((self.N, self.N), dtype=np.result_type(c, float))
        out[1:-1, 1:-1] = sfft.dstn(c, type=1, axes=(0, 1)) * 0.25
        return out

    def _cos_synth(self, c, axis):
        """Evaluate sum_k c_k k' cos(.) at all N nodes along ``axis``."""
        k = self.wavenumbers
        shape = [1, 1]
        shape[axis] = -1
        scaled = c * k.reshape(shape)
        pad = [(0, 0), (0, 0)]
        pad[axis] = (1, 1)
        padded = np.pad(scaled, pad)
        return 0.5 * sfft.dct(padded, type=1, axis=axis)

    def _sin_synth(self, c, axis):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (1, 1)
        return np.pad(0.5 * sfft.dst(c, type=1, axis=axis), pad)

    def gradient(self, w):
        """Spectral gradient of a field that vanishes on the boundary."""
        c = self.sine_coefficients(w)
        gx = self._sin_synth(self._cos_synth(c, 0), 1)
        gy = self._cos_synth(self._sin_synth(c, 0), 1)
        return gx, gy

    def laplacian(self, w):
        c = self.sine_coefficients(w)
        return self.from_sine_coefficients(-self.neg_laplacian_symbol * c)

    def sample_matrices(self, pts):
        """Sine and scaled-cosine synthesis matrices at arbitrary 1-D points."""
        k = self.wavenumbers
        phase = np.outer(np.asarray(pts) + self.L, k)
        S = np.sin(phase)
        C = np.cos(phase) * k[None, :]
        inside = (pts >= -self.L) & (pts <= self.L)
        S[~inside] = 0.0
        C[~inside] = 0.0
        return S, C

    def evaluate_at(self, coeffs, xs, ys, derivatives=False, laplacian=False):
        """Evaluate a sine series on the tensor grid xs x ys.

        Returns the values, and optionally the gradient and Laplacian, all
        exact for the sine representation.
        """
        Sx, Cx = self.sample_matrices(xs)
        Sy, Cy = self.sample_matrices(ys)
        val = Sx @ coeffs @ Sy.T
        out = [val]
        if derivatives:
            out.append(Cx @ coeffs @ Sy.T)
            out.append(Sx @ coeffs @ Cy.T)
        if laplacian:
            out.append(Sx @ (-self.neg_laplacian_symbol * coeffs) @ Sy.T)
        return out if len(out) > 1 else val


def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    out = np.zeros_like(t)
    one = t >= 1.0
    mid = (t > 0.0) & ~one
    with np.errstate(over="ignore"):
        # 1 / (1 + e^{1/t - 1/(1-t)}) without 0/0 at the ends
        out[mid] = 1.0 / (1.0 + np.exp(1.0 / t[mid] - 1.0 / (1.0 - t[mid])))
    out[one] = 1.0
    return out


# -- analytic vortex ----------------------------------------------------------


_SERIES_RADIUS = 0.02


@dataclass
class VortexSample:
    """V1 and related quantities sampled at a set of points."""

    V: np.ndarray
    Vx: np.ndarray
    Vy: np.ndarray
    one_minus_rho2: np.ndarray
    r: np.ndarray

    @property
    def lap(self):
        # V1 solves the Ginzburg-Landau equation
        return -self.one_minus_rho2 * self.V


def vortex_sample(profile, X, Y):
    """Evaluate V1 = rho(r) e^{i theta} and its gradient at points (X, Y).

    Uses V1 = f(r) (x + i y) with f = rho/r, so that the gradient is
    d_x V1 = g x z + f, d_y V1 = g y z + i f with g = f'/r.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    r = np.hypot(X, Y)
    flat = r.ravel()
    f = np.empty_like(flat)
    g = np.empty_like(flat)
    small = flat < _SERIES_RADIUS
    c1, c3, c5, c7 = series_coefficients(profile.slope_at_origin)
    rs = flat[small]
    f[small] = c1 + c3 * rs**2 + c5 * rs**4 + c7 * rs**6
    g[small] = 2 * c3 + 4 * c5 * rs**2 + 6 * c7 * rs**4
    rb = flat[~small]
    rho = eval_profile(profile, rb, 0)
    drho = eval_profile(profile, rb, 1)
    fb = rho / rb
    f[~small] = fb
    g[~small] = (drho - fb) / rb**2
    f = f.reshape(r.shape)
    g = g.reshape(r.shape)
    z = X + 1j * Y
    V = f * z
    Vx = g * X * z + f
    Vy = g * Y * z + 1j * f
    omr = one_minus_rho_sq(profile, flat).reshape(r.shape)
    return VortexSample(V, Vx, Vy, omr, r)


def vortex_hessian(profile, X, Y):
    """Second derivatives (Vxx, Vxy, Vyy) of V1 = f(r) z.

    With g = f'/r and k = g'/r: Vxx = k x^2 z + g z + 2 g x,
    Vxy = k x y z + g (y + i x), Vyy = k y^2 z + g z + 2 i g y.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    r = np.hypot(X, Y).ravel()
    g = np.empty_like(r)
    k = np.empty_like(r)
    # k = rho''/r^3 - 3 g / r^2 cancels badly near the core
    small = r < 0.05
    c1, c3, c5, c7 = series_coefficients(profile.slope_at_origin)
    rs = r[small]
    g[small] = 2 * c3 + 4 * c5 * rs**2 + 6 * c7 * rs**4
    k[small] = 8 * c5 + 24 * c7 * rs**2
    rb = r[~small]
    rho = eval_profile(profile, rb, 0)
    drho = eval_profile(profile, rb, 1)
    d2rho = eval_profile(profile, rb, 2)
    gb = (drho - rho / rb) / rb**2
    g[~small] = gb
    k[~small] = d2rho / rb**3 - 3.0 * gb / rb**2
    g = g.reshape(X.shape)
    k = k.reshape(X.shape)
    z = X + 1j * Y
    Vxx = k * X**2 * z + g * z + 2 * g * X
    Vxy = k * X * Y * z + g * (Y + 1j * X)
    Vyy = k * Y**2 * z + g * z + 2j * g * Y
    return Vxx, Vxy, Vyy


def vortex_sample_transformed(profile, X, Y, center=(0.0, 0.0), phase=0.0):
    """Sample e^{i phase} V1(x - center)."""
    s = vortex_sample(profile, np.asarray(X) - center[0], np.asarray(Y) - center[1])
    rot = np.exp(1j * phase)
    if phase != 0.0:
        s = VortexSample(rot * s.V, rot * s.Vx, rot * s.Vy, s.one_minus_rho2, s.r)
    return s


__all__ = [
    "Grid2D",
    "VortexSample",
    "smooth_step",
    "vortex_sample",
    "vortex_sample_transformed",
    "SHOOT_START",
]
