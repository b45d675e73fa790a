"""Polar product quadrature on geodesic balls of the flat torus.

Used for integrands that are sharply peaked at a point (bubbles, Green
singularities, Moser cores) where the uniform grid cannot resolve them.
Radial panels are Gauss-Legendre; the angle uses the trapezoid rule,
which is spectrally accurate for smooth periodic integrands.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .surface import TorusGeometry

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


def panel_nodes(breaks: Sequence[float], order: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes and weights on consecutive ``breaks``."""
    x, w = gauss_legendre(order)
    b = np.asarray(breaks, dtype=float)
    if np.any(np.diff(b) <= 0):
        raise ValueError("panel breaks must be strictly increasing")
    a, c = b[:-1, None], b[1:, None]
    nodes = 0.5 * (c - a) * x[None, :] + 0.5 * (a + c)
    weights = 0.5 * (c - a) * w[None, :]
    return nodes.ravel(), weights.ravel()


def geometric_breaks(lo: float, hi: float, ratio: float = 2.0) -> list[float]:
    """``lo, lo*ratio, ..., hi`` (the last step shortened to land on ``hi``)."""
    if not 0 < lo < hi:
        raise ValueError("need 0 < lo < hi")
    out = [lo]
    while out[-1] * ratio < hi * (1 - 1e-9):
        out.append(out[-1] * ratio)
    out.append(hi)
    return out


def uniform_breaks(lo: float, hi: float, n: int) -> list[float]:
    return list(np.linspace(lo, hi, n + 1))


@dataclass(frozen=True, eq=False)
class PolarRule:
    """Nodes ``p + r (cos t, sin t)`` with weights ``r dr dt``."""

    geom: TorusGeometry
    center: tuple[float, float]
    r: np.ndarray
    wr: np.ndarray
    n_theta: int = 64

    @classmethod
    def build(cls, geom: TorusGeometry, center, breaks: Sequence[float], order: int = 20,
              n_theta: int = 64) -> "PolarRule":
        if breaks[-1] >= 0.5 * min(geom.Lx, geom.Ly):
            raise ValueError("polar ball must fit inside the fundamental domain")
        r, wr = panel_nodes(breaks, order)
        return cls(geom, (float(center[0]), float(center[1])), r, wr, n_theta)

    @cached_property
    def theta(self) -> np.ndarray:
        return (np.arange(self.n_theta) + 0.5) * (2 * math.pi / self.n_theta)

    @cached_property
    def offsets(self) -> np.ndarray:
        """Displacements from the centre, shape ``(nr, nt, 2)``."""
        c, s = np.cos(self.theta), np.sin(self.theta)
        return np.stack([self.r[:, None] * c[None, :], self.r[:, None] * s[None, :]], axis=-1)

    @cached_property
    def points(self) -> np.ndarray:
        pts = self.offsets + np.asarray(self.center)
        pts[..., 0] %= self.geom.Lx
        pts[..., 1] %= self.geom.Ly
        return pts

    @cached_property
    def radius(self) -> np.ndarray:
        return np.broadcast_to(self.r[:, None], (self.r.size, self.n_theta))

    @cached_property
    def unit(self) -> np.ndarray:
        return self.offsets / self.r[:, None, None]

    @cached_property
    def weights(self) -> np.ndarray:
        return (self.wr * self.r)[:, None] * np.full(self.n_theta, 2 * math.pi / self.n_theta)[None, :]

    def integrate(self, values) -> float:
        return float(np.sum(np.asarray(values) * self.weights))
