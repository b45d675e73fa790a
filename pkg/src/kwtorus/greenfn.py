"""Green functions of ``Delta - alpha`` on the flat torus.

``G`` solves ``(Delta - alpha) G = 8 pi delta_p - 8 pi / Vol`` with zero
mean, or, for ``ell >= 1``, the same equation tested against functions
orthogonal to ``E_ell`` with every ``E_ell`` coefficient of ``G`` zeroed.

Two independent evaluators are provided:

* the *split* representation ``G = chi S + w``, where ``S`` is the exact
  planar Helmholtz kernel with ``S ~ -4 log r``, ``chi`` is an erfc
  cutoff, and the smooth remainder ``w`` is solved spectrally;
* an Ewald (heat-kernel) sum that needs no grid at all.

The Robin constant ``A = lim (G + 4 log r)`` comes from the first
(``method="split"``) or from a radial fit of Ewald values at grid points
(``method="extrapolate"``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy import integrate, special

from .fields import (
    SpectralField,
    WeightFunction,
    perp_mask,
    periodic_patch,
    quadratic_peak,
    trig_eval,
)
from .surface import TorusGeometry, distance_grid

EIGHT_PI = 8.0 * math.pi
EULER_GAMMA = float(np.euler_gamma)
RESONANCE_TOL = 1e-8
DISAGREEMENT_TOL = 1e-3


class ResonantAlphaError(ValueError):
    pass


# -- planar kernel ------------------------------------------------------------

@dataclass(frozen=True)
class HelmholtzKernel:
    """Radial solution of ``(-Delta_std - alpha) S = 8 pi delta`` in the plane."""

    alpha: float

    @property
    def s0(self) -> float:
        """Finite part ``lim_{r->0} S(r) + 4 log r``."""
        if self.alpha == 0:
            return 0.0
        return -4.0 * (math.log(math.sqrt(abs(self.alpha)) / 2.0) + EULER_GAMMA)

    def S(self, r):
        r = np.asarray(r, dtype=float)
        a = self.alpha
        if a > 0:
            return -2.0 * math.pi * special.y0(math.sqrt(a) * r)
        if a < 0:
            return 4.0 * special.k0(math.sqrt(-a) * r)
        return -4.0 * np.log(r)

    def dS(self, r):
        r = np.asarray(r, dtype=float)
        a = self.alpha
        if a > 0:
            k = math.sqrt(a)
            return 2.0 * math.pi * k * special.y1(k * r)
        if a < 0:
            k = math.sqrt(-a)
            return -4.0 * k * special.k1(k * r)
        return -4.0 / r

    def T(self, r):
        """``S + 4 log r - s0``; vanishes at the origin."""
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        big = r > 1e-12
        if self.alpha != 0:
            rb = r[big]
            out[big] = self.S(rb) + 4.0 * np.log(rb) - self.s0
        return out

    def dT(self, r):
        """Radial derivative of :meth:`T`."""
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        big = r > 1e-12
        if self.alpha != 0:
            rb = r[big]
            out[big] = self.dS(rb) + 4.0 / rb
        return out


@dataclass(frozen=True)
class Cutoff:
    """``chi(r) = erfc((r - r_mid) / sigma) / 2``: one on ``[0, r1]`` and zero
    beyond ``r2`` to well below double precision."""

    r1: float
    r2: float

    @property
    def r_mid(self) -> float:
        return 0.5 * (self.r1 + self.r2)

    @property
    def sigma(self) -> float:
        return (self.r2 - self.r1) / 12.4

    @classmethod
    def for_torus(cls, geom: TorusGeometry) -> "Cutoff":
        L = min(geom.Lx, geom.Ly)
        return cls(L / 8.0, 0.45 * L)

    def chi(self, r):
        return 0.5 * special.erfc((np.asarray(r, dtype=float) - self.r_mid) / self.sigma)

    def dchi(self, r):
        z = (np.asarray(r, dtype=float) - self.r_mid) / self.sigma
        return -np.exp(-z * z) / (self.sigma * math.sqrt(math.pi))

    def d2chi(self, r):
        z = (np.asarray(r, dtype=float) - self.r_mid) / self.sigma
        return 2.0 * z * np.exp(-z * z) / (self.sigma**2 * math.sqrt(math.pi))


# -- the Green function ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GreenFunction:
    geom: TorusGeometry
    source: tuple[float, float]
    alpha: float
    ell: int
    field: SpectralField = dc_field(repr=False)
    robin: float
    regular_part: SpectralField = dc_field(repr=False)
    kernel: HelmholtzKernel = dc_field(repr=False)
    cutoff: Cutoff = dc_field(repr=False)
    w_hat: np.ndarray = dc_field(repr=False)
    w_at_p: float = 0.0

    def _rel(self, points):
        pts = np.asarray(points, dtype=float)
        d = pts - np.asarray(self.source)
        d[..., 0] = (d[..., 0] + 0.5 * self.geom.Lx) % self.geom.Lx - 0.5 * self.geom.Lx
        d[..., 1] = (d[..., 1] + 0.5 * self.geom.Ly) % self.geom.Ly - 0.5 * self.geom.Ly
        return d, np.hypot(d[..., 0], d[..., 1])

    def w(self, points, deriv=(0, 0)) -> np.ndarray:
        return trig_eval(self.geom, self.w_hat, points, deriv, tol=1e-17)

    def evaluate(self, points) -> np.ndarray:
        """Pointwise ``G`` (singular at the source) from the split form."""
        _, r = self._rel(points)
        with np.errstate(divide="ignore", invalid="ignore"):
            core = np.where(r < self.cutoff.r2 + 8 * self.cutoff.sigma,
                            self.cutoff.chi(r) * self.kernel.S(np.maximum(r, 1e-300)), 0.0)
        return core + self.w(points)

    def grad(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Pointwise gradient of ``G`` away from the source."""
        d, r = self._rel(points)
        cut, ker = self.cutoff, self.kernel
        with np.errstate(invalid="ignore", divide="ignore"):
            radial = cut.dchi(r) * ker.S(r) + cut.chi(r) * ker.dS(r)
            radial = np.where(r < cut.r2 + 8 * cut.sigma, radial, 0.0)
            ux, uy = d[..., 0] / r, d[..., 1] / r
        return radial * ux + self.w(points, (1, 0)), radial * uy + self.w(points, (0, 1))

    def _log_part(self, r):
        """``(1 - chi)(4 log r - s0)``, zero at the source."""
        out = np.zeros_like(r)
        pos = r > 0
        out[pos] = 0.5 * special.erfc(-(r[pos] - self.cutoff.r_mid) / self.cutoff.sigma) * (
            4.0 * np.log(r[pos]) - self.kernel.s0)
        return out

    def regular(self, points) -> np.ndarray:
        """``psi = G + 4 log r - A`` (``r`` the geodesic distance to the source); ``psi(p) = 0``."""
        _, r = self._rel(points)
        return self.cutoff.chi(r) * self.kernel.T(r) + self._log_part(r) + self.w(points) - self.w_at_p

    def regular_grad(self, points) -> tuple[np.ndarray, np.ndarray]:
        d, r = self._rel(points)
        cut, ker = self.cutoff, self.kernel
        chi, dchi = cut.chi(r), cut.dchi(r)
        radial = dchi * ker.T(r) + chi * ker.dT(r)
        pos = r > 0
        logpart = np.zeros_like(r)
        logpart[pos] = (-dchi[pos] * (4.0 * np.log(r[pos]) - ker.s0)
                        + 0.5 * special.erfc(-(r[pos] - cut.r_mid) / cut.sigma) * 4.0 / r[pos])
        radial = radial + logpart
        with np.errstate(invalid="ignore", divide="ignore"):
            ux = np.where(pos, d[..., 0] / np.where(pos, r, 1.0), 0.0)
            uy = np.where(pos, d[..., 1] / np.where(pos, r, 1.0), 0.0)
        return (radial * ux + self.w(points, (1, 0)),
                radial * uy + self.w(points, (0, 1)))

    def sampled(self) -> SpectralField:
        """Exact ``G`` at the grid nodes; a node at the source takes the truncated-series value."""
        X, Y = self.geom.mesh
        pts = np.stack([X, Y], axis=-1)
        _, r = self._rel(pts)
        vals = np.where(r > 0, self.evaluate(pts), self.field.values)
        return SpectralField(self.geom, vals)

    def coefficient_identity_error(self, basis) -> float:
        """max over retained modes of ``|(lambda_k - alpha) <G, e_k> - 8 pi e_k(p)|`` off ``E_ell``."""
        from .fields import analyze

        c = analyze(self.field.values, basis)
        lam = basis.eigenvalues
        ek = np.array([basis.evaluate(k, *self.source) for k in range(len(basis))])
        in_E = np.array([lv <= self.ell for lv in basis.level]) if self.ell else np.zeros(len(basis), bool)
        err = np.abs((lam - self.alpha) * c - EIGHT_PI * ek)
        err[in_E] = np.abs(c[in_E])
        return float(err.max())


def _check_resonance(geom: TorusGeometry, alpha: float, ell: int) -> np.ndarray:
    removed = perp_mask(geom, ell) if ell else (geom.eigenvalues == 0)
    retained = ~(removed | geom.nyquist)
    gap = np.abs(geom.eigenvalues[retained] - alpha)
    if gap.size and gap.min() < RESONANCE_TOL:
        lam = geom.eigenvalues[retained][np.argmin(gap)]
        raise ResonantAlphaError(f"resonant alpha: {alpha} is within {RESONANCE_TOL} of eigenvalue {lam}")
    return removed


def _radial_hankel(func, kmag: float, upper: float, breaks) -> float:
    """``2 pi int_0^upper func(r) J0(k r) r dr``."""
    val, _ = integrate.quad(lambda r: func(r) * special.j0(kmag * r) * r, 0.0, upper,
                            points=breaks, limit=400, epsabs=1e-15, epsrel=1e-13)
    return 2.0 * math.pi * val


def green_solve(geom: TorusGeometry, alpha: float, p, ell: int = 0) -> GreenFunction:
    """Green function with source ``p`` (wrapped into the fundamental domain)."""
    if ell < 0:
        raise ValueError("ell must be >= 0")
    p = geom.wrap(p)
    removed = _check_resonance(geom, alpha, ell)
    N, V = geom.N, geom.volume
    kx, ky = geom.wavevectors
    lam = geom.eigenvalues
    phase = np.exp(-1j * (kx * p[0] + ky * p[1]))
    retained = ~(removed | geom.nyquist)

    # truncated eigen-expansion on the grid
    g_hat = np.zeros((N, N), dtype=complex)
    g_hat[retained] = (N * N / V) * EIGHT_PI * phase[retained] / (lam[retained] - alpha)
    field_ = SpectralField(geom, np.fft.ifft2(g_hat).real, mean_zero=True)

    kernel = HelmholtzKernel(alpha)
    cut = Cutoff.for_torus(geom)
    r = distance_grid(geom, p)
    f = np.zeros_like(r)
    live = r > 0.5 * cut.r1
    rl = r[live]
    f[live] = -kernel.S(rl) * (cut.d2chi(rl) + cut.dchi(rl) / rl) - 2.0 * cut.dchi(rl) * kernel.dS(rl)
    f_hat = np.fft.fft2(f)

    w_hat = np.zeros((N, N), dtype=complex)
    w_hat[retained] = -f_hat[retained] / (lam[retained] - alpha)
    # removed slots (mean, E_ell): cancel the cutoff kernel's own coefficient
    upper = cut.r2 + 8.0 * cut.sigma
    breaks = [cut.r1, cut.r_mid, cut.r2]
    chiS = lambda rr: cut.chi(rr) * kernel.S(rr)  # noqa: E731
    kmag = np.sqrt(lam)
    cache: dict[float, float] = {}
    for idx in zip(*np.nonzero(removed & ~geom.nyquist)):
        key = round(float(kmag[idx]), 12)
        if key not in cache:
            cache[key] = _radial_hankel(chiS, float(kmag[idx]), upper, breaks)
        w_hat[idx] = -(N * N / V) * phase[idx] * cache[key]

    w_p = float(trig_eval(geom, w_hat, np.array([p]))[0])
    robin = w_p + kernel.s0

    G = GreenFunction(geom, p, float(alpha), ell, field_, robin, field_, kernel, cut, w_hat, w_p)
    X, Y = geom.mesh
    reg = SpectralField(geom, G.regular(np.stack([X, Y], axis=-1)))
    object.__setattr__(G, "regular_part", reg)
    return G


# -- Ewald evaluator (independent of the grid solve) ----------------------------

def _ein(z: float) -> float:
    """Entire exponential integral ``sum_{j>=1} z^j / (j j!)``."""
    total, term, j = 0.0, 1.0, 0
    while True:
        j += 1
        term *= z / j
        add = term / j
        total += add
        if abs(add) <= 1e-17 * max(1.0, abs(total)) or j > 400:
            return total


_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


def _geometric_nodes(s: float, levels: int = 10):
    """Quadrature nodes on ``[0, s]`` refined geometrically towards 0."""
    edges = [0.0] + [s * 4.0 ** (-k) for k in range(levels, -1, -1)]
    xs, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        xs.append(0.5 * (b - a) * _GL_X + 0.5 * (a + b))
        ws.append(0.5 * (b - a) * _GL_W)
    return np.concatenate(xs), np.concatenate(ws)


@dataclass(frozen=True)
class EwaldGreen:
    geom: TorusGeometry
    alpha: float
    source: tuple[float, float]
    ell: int = 0

    @cached_property
    def s(self) -> float:
        return 0.02 * self.geom.Lx * self.geom.Ly

    @cached_property
    def _recip(self):
        g = self.geom
        kmax = math.sqrt(44.0 / self.s) + 1.0
        mx = int(math.ceil(kmax * g.Lx / (2 * math.pi)))
        my = int(math.ceil(kmax * g.Ly / (2 * math.pi)))
        m, n = np.meshgrid(np.arange(-mx, mx + 1), np.arange(-my, my + 1), indexing="ij")
        m, n = m.ravel(), n.ravel()
        keep = (m != 0) | (n != 0)
        m, n = m[keep], n[keep]
        kx, ky = 2 * math.pi * m / g.Lx, 2 * math.pi * n / g.Ly
        k2 = kx**2 + ky**2
        if np.min(np.abs(k2 - self.alpha)) < RESONANCE_TOL:
            raise ResonantAlphaError(f"resonant alpha: {self.alpha}")
        weight = np.exp(-(k2 - self.alpha) * self.s) / (g.volume * (k2 - self.alpha))
        return kx, ky, k2, weight

    @cached_property
    def _projected(self):
        if self.ell == 0:
            return np.empty(0), np.empty(0), np.empty(0)
        from .surface import distinct_eigenvalue

        lam_ell = distinct_eigenvalue(self.geom, self.ell)
        kx, ky, k2, _ = self._recip
        sel = k2 <= lam_ell * (1 + 1e-12)
        return kx[sel], ky[sel], 1.0 / (self.geom.volume * (k2[sel] - self.alpha))

    @cached_property
    def _images(self):
        g = self.geom
        rho_max = math.sqrt(4.0 * self.s * 44.0)
        ix = int(math.ceil(rho_max / g.Lx)) + 1
        iy = int(math.ceil(rho_max / g.Ly)) + 1
        a, b = np.meshgrid(np.arange(-ix, ix + 1), np.arange(-iy, iy + 1), indexing="ij")
        return a.ravel() * g.Lx, b.ravel() * g.Ly

    def _constant(self) -> float:
        a, s, V = self.alpha, self.s, self.geom.volume
        return s / V if a == 0 else math.expm1(a * s) / (a * V)

    def _image_regular(self, rho2: np.ndarray) -> np.ndarray:
        """``int_0^s (e^{alpha t} - 1) e^{-rho^2/4t} / (4 pi t) dt``."""
        if self.alpha == 0:
            return np.zeros_like(rho2)
        t, wt = _geometric_nodes(self.s)
        kern = np.expm1(self.alpha * t) / (4 * math.pi * t) * wt
        flat = rho2.ravel()
        out = np.empty(flat.size)
        chunk = 4096
        for i in range(0, flat.size, chunk):
            blk = flat[i:i + chunk, None]
            out[i:i + chunk] = np.exp(-blk / (4 * t[None, :])) @ kern
        return out.reshape(rho2.shape)

    def evaluate(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        shape = pts.shape[:-1]
        pts = pts.reshape(-1, 2)
        dx = pts[:, 0] - self.source[0]
        dy = pts[:, 1] - self.source[1]
        kx, ky, _, weight = self._recip
        recip = np.cos(np.outer(dx, kx) + np.outer(dy, ky)) @ weight
        ox, oy = self._images
        # fold into the fundamental cell first so the image lattice is centred
        dx = (dx + 0.5 * self.geom.Lx) % self.geom.Lx - 0.5 * self.geom.Lx
        dy = (dy + 0.5 * self.geom.Ly) % self.geom.Ly - 0.5 * self.geom.Ly
        rho2 = (dx[:, None] + ox[None, :]) ** 2 + (dy[:, None] + oy[None, :]) ** 2
        real = special.exp1(rho2 / (4 * self.s)) / (4 * math.pi) + self._image_regular(rho2)
        total = recip + real.sum(axis=1) - self._constant()
        pkx, pky, pw = self._projected
        if pkx.size:
            total -= np.cos(np.outer(dx, pkx) + np.outer(dy, pky)) @ pw
        return (EIGHT_PI * total).reshape(shape)

    def robin(self) -> float:
        _, _, _, weight = self._recip
        ox, oy = self._images
        rho2 = ox**2 + oy**2
        far = rho2 > 0
        real = (special.exp1(rho2[far] / (4 * self.s)) / (4 * math.pi)
                + self._image_regular(rho2[far])).sum()
        _, _, pw = self._projected
        bracket = weight.sum() + real - self._constant() - pw.sum()
        return (EIGHT_PI * bracket + 2.0 * _ein(self.alpha * self.s)
                - 2.0 * EULER_GAMMA + 2.0 * math.log(4.0 * self.s))


# -- Robin constant --------------------------------------------------------------

class RadialFit(NamedTuple):
    robin: float
    curvature: float
    npoints: int


def extrapolate_fit(G: GreenFunction, inner: float = 4.0, outer: float = 16.0) -> RadialFit:
    """Least-squares ``G + 4 log r - T(r) ~ a + b r^2`` over grid points with
    ``r in [inner h, outer h]``, using Ewald values of ``G``.

    ``T = S + 4 log r - s0`` is the planar kernel's own regular part
    (identically zero when ``alpha = 0``).  For ``alpha != 0`` it carries the
    ``r^2 log r`` terms that a polynomial fit cannot absorb.
    """
    geom = G.geom
    r = distance_grid(geom, G.source)
    hgrid = geom.h
    sel = (r >= inner * hgrid) & (r <= outer * hgrid)
    X, Y = geom.mesh
    pts = np.stack([X[sel], Y[sel]], axis=-1)
    rs = r[sel]
    ew = EwaldGreen(geom, G.alpha, G.source, G.ell)
    y = ew.evaluate(pts) + 4.0 * np.log(rs) - HelmholtzKernel(G.alpha).T(rs)
    design = np.column_stack([np.ones_like(rs), rs**2])
    (a, b), *_ = np.linalg.lstsq(design, y, rcond=None)
    return RadialFit(float(a), float(b), int(rs.size))


def robin_constant(G: GreenFunction, method: str = "split") -> float:
    if method == "split":
        return G.robin
    if method == "extrapolate":
        return extrapolate_fit(G).robin
    raise ValueError(f"unknown Robin method {method!r}; expected 'split' or 'extrapolate'")


class RobinComparison(NamedTuple):
    split: float
    extrapolate: float
    gap: float
    under_resolved: bool


def compare_methods(G: GreenFunction) -> RobinComparison:
    a = robin_constant(G, "split")
    b = robin_constant(G, "extrapolate")
    gap = abs(a - b)
    return RobinComparison(a, b, gap, gap > DISAGREEMENT_TOL)


# -- landscape -----------------------------------------------------------------

@dataclass(frozen=True)
class RobinLandscape:
    robin: float
    points: np.ndarray = dc_field(repr=False)  # (n, n, 2)
    values: np.ndarray = dc_field(repr=False)  # A + 2 log h
    argmax: tuple[float, float]
    max_value: float
    degenerate: bool


def robin_landscape(geom: TorusGeometry, alpha: float, h: WeightFunction, ell: int = 0,
                    sample_grid: int = 16) -> RobinLandscape:
    """``p -> A_{alpha,p} + 2 log h(p)`` on a coarse grid.

    On a flat torus ``A`` does not depend on ``p`` so a single solve is
    enough; the landscape is then the ``2 log h`` surface shifted by ``A``.
    """
    if sample_grid < 3:
        raise ValueError("sample_grid must be >= 3")
    A = green_solve(geom, alpha, (0.0, 0.0), ell).robin
    xs = np.arange(sample_grid) * geom.Lx / sample_grid
    ys = np.arange(sample_grid) * geom.Ly / sample_grid
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vals = A + 2.0 * np.log(h.evaluate(X, Y))
    spread = float(vals.max() - vals.min())
    i, j = np.unravel_index(int(np.argmax(vals)), vals.shape)
    di, dj, _, ok = quadratic_peak(periodic_patch(vals, i, j))
    pt = geom.wrap((xs[i] + di * geom.Lx / sample_grid, ys[j] + dj * geom.Ly / sample_grid))
    best = A + 2.0 * math.log(h.at(pt))
    if best < vals[i, j]:
        pt, best = (float(xs[i]), float(ys[j])), float(vals[i, j])
    return RobinLandscape(A, np.stack([X, Y], axis=-1), vals, pt, float(best), spread < 1e-12 or not ok)
