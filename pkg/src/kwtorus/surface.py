"""Flat rectangular torus: geometry, Laplace-Beltrami eigenbasis, quadrature.

The Laplacian is the geometer's one, ``Delta = -div grad``, so every
nonconstant eigenvalue is positive.  Eigenfunctions are the real Fourier
modes ``sqrt(2/V) cos(k.x)`` and ``sqrt(2/V) sin(k.x)`` with
``k = 2 pi (m/Lx, n/Ly)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class TorusGeometry:
    """Rectangle ``[0, Lx) x [0, Ly)`` with periodic identification.

    Samples live on the uniform ``N x N`` grid ``x_i = i Lx / N``,
    ``y_j = j Ly / N``; arrays are indexed ``values[i, j]``.
    """

    Lx: float
    Ly: float
    N: int

    def __post_init__(self):
        if not (self.Lx > 0 and self.Ly > 0):
            raise ValueError(f"torus sides must be positive, got Lx={self.Lx}, Ly={self.Ly}")
        if not _is_pow2(self.N) or self.N < 16:
            raise ValueError(f"N must be a power of two >= 16, got {self.N}")

    @property
    def volume(self) -> float:
        return self.Lx * self.Ly

    @property
    def cell_area(self) -> float:
        return self.volume / self.N**2

    @property
    def h(self) -> float:
        """Grid spacing along the shorter side."""
        return min(self.Lx, self.Ly) / self.N

    @cached_property
    def x(self) -> np.ndarray:
        return np.arange(self.N) * (self.Lx / self.N)

    @cached_property
    def y(self) -> np.ndarray:
        return np.arange(self.N) * (self.Ly / self.N)

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    @cached_property
    def mode_indices(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer wave numbers ``(m, n)`` in fft2 layout."""
        m = np.fft.fftfreq(self.N, d=1.0 / self.N).round().astype(int)
        return np.meshgrid(m, m, indexing="ij")

    @cached_property
    def wavevectors(self) -> tuple[np.ndarray, np.ndarray]:
        m, n = self.mode_indices
        return TWO_PI * m / self.Lx, TWO_PI * n / self.Ly

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        """Laplacian eigenvalue of every fft2 slot."""
        m, n = self.mode_indices
        return 4.0 * math.pi**2 * (m**2 / self.Lx**2 + n**2 / self.Ly**2)

    @cached_property
    def nyquist(self) -> np.ndarray:
        """Mask of fft2 slots carrying a Nyquist index on either axis."""
        m, n = self.mode_indices
        half = self.N // 2
        return (np.abs(m) == half) | (np.abs(n) == half)

    def grid_for(self, M: int) -> tuple[np.ndarray, np.ndarray]:
        """Mesh of an ``M x M`` grid on the same torus (used for padding)."""
        x = np.arange(M) * (self.Lx / M)
        y = np.arange(M) * (self.Ly / M)
        return np.meshgrid(x, y, indexing="ij")

    def wrap(self, point) -> tuple[float, float]:
        x, y = float(point[0]) % self.Lx, float(point[1]) % self.Ly
        # tiny negatives round up to exactly L under %
        return (0.0 if x == self.Lx else x, 0.0 if y == self.Ly else y)

    def describe(self) -> dict:
        return {"Lx": self.Lx, "Ly": self.Ly, "N": self.N}


def _is_pow2(n) -> bool:
    return isinstance(n, (int, np.integer)) and n > 0 and (n & (n - 1)) == 0


def build_torus(Lx: float, Ly: float, N: int) -> TorusGeometry:
    if isinstance(N, float) and N.is_integer():
        N = int(N)
    return TorusGeometry(float(Lx), float(Ly), N)


class Mode(NamedTuple):
    m: int
    n: int
    kind: str  # "cos" or "sin"
    eigenvalue: float


@dataclass(frozen=True)
class EigenBasis:
    """The lowest nonconstant real Fourier modes of a torus, sorted by eigenvalue."""

    geom: TorusGeometry
    modes: tuple[Mode, ...]
    distinct_eigenvalues: tuple[float, ...]
    multiplicities: tuple[int, ...]
    level: tuple[int, ...] = field(repr=False)  # 1-based eigenvalue level of each mode

    def __len__(self) -> int:
        return len(self.modes)

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([md.eigenvalue for md in self.modes])

    def evaluate(self, k: int, x, y) -> np.ndarray:
        """Value of mode ``k`` at points ``(x, y)``."""
        md = self.modes[k]
        theta = TWO_PI * (md.m * np.asarray(x) / self.geom.Lx + md.n * np.asarray(y) / self.geom.Ly)
        trig = np.cos(theta) if md.kind == "cos" else np.sin(theta)
        return math.sqrt(2.0 / self.geom.volume) * trig

    def grid(self, k: int) -> np.ndarray:
        X, Y = self.geom.mesh
        return self.evaluate(k, X, Y)

    def matrix(self) -> np.ndarray:
        """All modes stacked as ``(len(self), N, N)``."""
        return np.stack([self.grid(k) for k in range(len(self))])

    def level_modes(self, ell: int) -> list[int]:
        """Indices of the modes spanning ``E_ell`` (first ``ell`` distinct eigenvalues)."""
        if ell > len(self.distinct_eigenvalues):
            raise ValueError(f"ell={ell} exceeds the {len(self.distinct_eigenvalues)} resolved eigenvalues")
        return [k for k, lv in enumerate(self.level) if lv <= ell]


def eigenbasis(geom: TorusGeometry, max_modes: int) -> EigenBasis:
    """Lowest ``max_modes`` nonconstant modes, grouped by distinct eigenvalue.

    Only wave numbers strictly below the Nyquist index are representable;
    for these the grid quadrature is exactly orthonormal.
    """
    if max_modes < 4:
        raise ValueError("max_modes must be >= 4")
    half = geom.N // 2
    available = (2 * half - 1) ** 2 - 1
    if max_modes > available:
        raise ValueError(f"max_modes={max_modes} exceeds the {available} modes representable on N={geom.N}")

    cands = []
    for m in range(0, half):
        for n in range(-half + 1, half):
            if m == 0 and n <= 0:
                continue
            lam = 4.0 * math.pi**2 * (m**2 / geom.Lx**2 + n**2 / geom.Ly**2)
            cands.append((lam, m, n))
    cands.sort()
    modes: list[Mode] = []
    for lam, m, n in cands:
        modes.append(Mode(m, n, "cos", lam))
        modes.append(Mode(m, n, "sin", lam))
        if len(modes) >= max_modes:
            break
    modes = modes[:max_modes]

    distinct: list[float] = []
    mult: list[int] = []
    level: list[int] = []
    for md in modes:
        if distinct and math.isclose(md.eigenvalue, distinct[-1], rel_tol=1e-12):
            mult[-1] += 1
        else:
            distinct.append(md.eigenvalue)
            mult.append(1)
        level.append(len(distinct))
    return EigenBasis(geom, tuple(modes), tuple(distinct), tuple(mult), tuple(level))


def first_eigenvalue(geom: TorusGeometry) -> float:
    return 4.0 * math.pi**2 / max(geom.Lx, geom.Ly) ** 2


def distinct_eigenvalue(geom: TorusGeometry, ell: int) -> float:
    """``lambda_ell`` (1-based) of the torus; ``ell = 0`` returns 0."""
    if ell == 0:
        return 0.0
    lam = np.unique(geom.eigenvalues[~geom.nyquist])
    lam = lam[lam > 0]
    if ell > lam.size:
        raise ValueError(f"ell={ell} exceeds the eigenvalues resolved on N={geom.N}")
    return float(lam[ell - 1])


def geodesic_distance(geom: TorusGeometry, x, y):
    """Flat-torus distance; broadcasts over leading axes of ``x`` and ``y``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx = np.abs(x[..., 0] - y[..., 0]) % geom.Lx
    dy = np.abs(x[..., 1] - y[..., 1]) % geom.Ly
    dx = np.minimum(dx, geom.Lx - dx)
    dy = np.minimum(dy, geom.Ly - dy)
    d = np.hypot(dx, dy)
    return float(d) if d.ndim == 0 else d


def distance_grid(geom: TorusGeometry, p, X=None, Y=None) -> np.ndarray:
    """Distance from ``p`` to every grid node (or to the given mesh)."""
    if X is None:
        X, Y = geom.mesh
    dx = np.abs(X - p[0]) % geom.Lx
    dy = np.abs(Y - p[1]) % geom.Ly
    return np.hypot(np.minimum(dx, geom.Lx - dx), np.minimum(dy, geom.Ly - dy))


def integrate(geom: TorusGeometry, values) -> float:
    """Uniform trapezoidal quadrature ``(V / N^2) sum values``."""
    values = np.asarray(values)
    if values.shape != (geom.N, geom.N):
        raise ValueError(f"expected samples of shape {(geom.N, geom.N)}, got {values.shape}")
    return float(values.sum() * geom.cell_area)


def quad_any(geom: TorusGeometry, values) -> float:
    """Trapezoidal quadrature on a square grid of any size over the same torus."""
    values = np.asarray(values)
    return float(values.sum() * geom.volume / values.size)
