"""Analytic perturbation recipes.

A recipe is a callable ``(X, Y) -> complex array``.  Recipes are analytic so
that translated or phase-rotated copies can be evaluated exactly instead of
being interpolated.  Every recipe is multiplied by a smooth taper that vanishes
well before the box edge.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .grid import smooth_step


def taper(r, L, start=0.8, stop=0.95):
    return 1.0 - smooth_step((r - start * L) / ((stop - start) * L))


@dataclass(frozen=True)
class Perturbation:
    """A sum of simple analytic building blocks.

    ``family`` is one of ``none``, ``bump``, ``random``, ``extended`` or
    ``mode``.  ``shift`` and ``phase`` realize the map w -> e^{i phase} w(. + shift).
    """

    family: str = "none"
    amplitude: float = 0.0
    width: float = 1.0
    center: tuple = (0.5, 0.0)
    seed: int = 0
    n_terms: int = 3
    shift: tuple = (0.0, 0.0)
    phase: float = 0.0
    extra: dict = field(default_factory=dict)

    def shifted(self, a, alpha=0.0):
        return replace(
            self,
            shift=(self.shift[0] + a[0], self.shift[1] + a[1]),
            phase=self.phase + alpha,
        )

    def scaled(self, factor):
        return replace(self, amplitude=self.amplitude * factor)

    def to_dict(self):
        return {
            "family": self.family,
            "amplitude": self.amplitude,
            "width": self.width,
            "center": list(self.center),
            "seed": self.seed,
            "n_terms": self.n_terms,
            "shift": list(self.shift),
            "phase": self.phase,
            "extra": dict(self.extra),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("center", "shift"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def parse(cls, spec, seed=0):
        """Parse ``family[:amplitude[:width]]``, e.g. ``bump:0.02``."""
        parts = spec.split(":")
        family = parts[0]
        if family not in _FAMILIES:
            raise ValueError(f"unknown perturbation family {family!r}")
        amp = float(parts[1]) if len(parts) > 1 else (0.0 if family == "none" else 0.02)
        width = float(parts[2]) if len(parts) > 2 else 1.0
        return cls(family=family, amplitude=amp, width=width, seed=seed)

    def __call__(self, X, Y, L):
        Xs = np.asarray(X) + self.shift[0]
        Ys = np.asarray(Y) + self.shift[1]
        w = _FAMILIES[self.family](self, Xs, Ys, L)
        # taper is centred on the box, not on the shifted frame
        w = w * taper(np.hypot(X, Y), L)
        if self.phase:
            w = w * np.exp(1j * self.phase)
        return w


def _none(p, X, Y, L):
    return np.zeros(np.shape(X), dtype=complex)


def _bump(p, X, Y, L):
    coef = p.extra.get("coefficient", (1.0 + 0.5j) / abs(1.0 + 0.5j))
    cx, cy = p.center
    return p.amplitude * coef * np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / p.width**2)


def _random(p, X, Y, L):
    """Random sum of Gaussians, compactly supported for practical purposes."""
    rng = np.random.default_rng(p.seed)
    radius = p.extra.get("radius", 3.0)
    w = np.zeros(np.shape(X), dtype=complex)
    for _ in range(p.n_terms):
        c = rng.uniform(-radius, radius, 2)
        s = rng.uniform(0.6, 1.5)
        a = rng.normal() + 1j * rng.normal()
        w = w + a * np.exp(-((X - c[0]) ** 2 + (Y - c[1]) ** 2) / s**2)
    return p.amplitude * w / (np.sqrt(p.n_terms) * 1.5)


def _extended(p, X, Y, L):
    """Angular modes with 1/r decay, reaching the far field."""
    rng = np.random.default_rng(p.seed)
    z = X + 1j * Y
    r2 = X**2 + Y**2
    w = np.zeros(np.shape(X), dtype=complex)
    for _ in range(p.n_terms):
        m = int(rng.integers(-3, 4))
        a = rng.normal() + 1j * rng.normal()
        zm = z ** m if m >= 0 else np.conj(z) ** (-m)
        w = w + a * zm / (1.0 + r2 / p.width**2) ** ((abs(m) + 1) / 2.0)
    return p.amplitude * w / np.sqrt(p.n_terms)


def _mode(p, X, Y, L):
    """Single Fourier-sector mode e(r) e^{i(j+1) theta} with a Gaussian-type e."""
    j = int(p.extra.get("j", 0))
    n = j + 1
    z = X + 1j * Y
    r2 = X**2 + Y**2
    zn = z ** n if n >= 0 else np.conj(z) ** (-n)
    env = np.exp(-r2 / p.width**2)
    return p.amplitude * zn * env


_FAMILIES = {
    "none": _none,
    "bump": _bump,
    "random": _random,
    "extended": _extended,
    "mode": _mode,
}
