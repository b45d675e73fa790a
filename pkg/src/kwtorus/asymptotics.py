"""Explicit constructions: the bubble, concentration and far-field
diagnostics, the concentrating test functions phi_eps and their projected
variant, the Moser sequence with its divergence probe, and the eigen-ray.

The concentrating objects live on scales far below the grid spacing, so
their integrals are split as

    int_Sigma F(phi) = int_Sigma F(w)  +  int_{B(p)} [F(phi) - F(w)]

where ``w`` is a smooth periodic field equal to ``phi`` outside the ball
``B(p)``.  The first term uses the uniform grid, the second a polar rule
centred at ``p``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy import integrate, special

from .fields import (
    SpectralField,
    WeightFunction,
    bilinear_sample,
    perp_mask,
    project_perp,
    trig_eval,
)
from .functional import EIGHT_PI, FunctionalParams, eval_J
from .greenfn import GreenFunction, green_solve
from .quadrature import PolarRule, geometric_breaks, uniform_breaks
from .surface import EigenBasis, TorusGeometry, distance_grid, eigenbasis, first_eigenvalue

FOUR_PI = 4.0 * math.pi


# -- bubble ------------------------------------------------------------------------

def bubble_profile(y) -> np.ndarray:
    """``-2 log(1 + |y|^2 / 8)``; ``y`` holds planar points (last axis 2) or radii."""
    y = np.asarray(y, dtype=float)
    r2 = np.sum(y * y, axis=-1) if (y.ndim and y.shape[-1] == 2) else y * y
    return -2.0 * np.log1p(r2 / 8.0)


def bubble_mass(cut: float = 100.0) -> float:
    """``int_{R^2} e^phi`` by radial quadrature on ``[0, cut]`` plus the exact tail."""
    body, _ = integrate.quad(lambda r: 2 * math.pi * r / (1 + r * r / 8) ** 2, 0.0, cut,
                             points=[1.0, 3.0, 10.0], limit=200, epsabs=1e-13, epsrel=1e-12)
    tail = 8.0 * math.pi / (1.0 + cut * cut / 8.0)
    return body + tail


def inner_energy_check(R: float) -> float:
    """``int_{B_R} |grad phi|^2 - (16 pi log(1 + R^2/8) - 16 pi)`` by radial quadrature."""
    if not R > 0:
        raise ValueError("R must be positive")
    val, _ = integrate.quad(lambda r: 2 * math.pi * r * (4 * r / (8 + r * r)) ** 2, 0.0, R,
                            points=[min(1.0, R / 2), min(3.0, R)], limit=400,
                            epsabs=1e-13, epsrel=1e-12)
    return val - (16 * math.pi * math.log1p(R * R / 8) - 16 * math.pi)


def infimum_formula(A_max_combined: float) -> float:
    """``-8 pi - 8 pi log pi - 4 pi max_p (A_p + 2 log h(p))``."""
    return -8.0 * math.pi - 8.0 * math.pi * math.log(math.pi) - FOUR_PI * A_max_combined


def bubble_seed(geom: TorusGeometry, center, scale: Optional[float] = None) -> SpectralField:
    """Mean-zero bubble of width ``scale`` (default two grid cells) centred at ``center``."""
    scale = 2.0 * geom.h if scale is None else scale
    r = distance_grid(geom, center)
    vals = -2.0 * np.log1p(r * r / (8.0 * scale * scale))
    return SpectralField(geom, vals - vals.mean(), mean_zero=True)


# -- sampling helpers --------------------------------------------------------------------

def _sampler(u) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(u, SpectralField):
        return lambda pts: bilinear_sample(u.geom, u.values, pts)
    if hasattr(u, "evaluate"):
        return u.evaluate
    raise TypeError("expected a SpectralField or an object with evaluate(points)")


class ProfileError(NamedTuple):
    phi_error: float
    psi_ratio_error: float


def rescaled_profile_error(u, x0, r_scale: float, R: float, n_r: int = 64,
                           n_theta: int = 64) -> ProfileError:
    """Compare ``u(x0 + r_scale y) - u(x0)`` with the bubble on ``|y| <= R``.

    ``u`` is a grid field (sampled bilinearly) or any object with a pointwise
    ``evaluate``.  ``psi_ratio_error`` is ``nan`` unless ``|u(x0)| > 1``.
    """
    geom = u.geom
    if not r_scale * R < 0.5 * min(geom.Lx, geom.Ly):
        raise ValueError("rescaled ball does not fit in the torus")
    sample = _sampler(u)
    rho = np.linspace(0.0, R, n_r)
    th = np.linspace(0.0, 2 * math.pi, n_theta, endpoint=False)
    y = np.stack([rho[:, None] * np.cos(th)[None, :], rho[:, None] * np.sin(th)[None, :]], axis=-1)
    pts = np.asarray(x0, dtype=float) + r_scale * y
    pts[..., 0] %= geom.Lx
    pts[..., 1] %= geom.Ly
    vals = sample(pts)
    u0 = float(sample(np.asarray([x0], dtype=float))[0])
    phi_err = float(np.max(np.abs(vals - u0 - bubble_profile(y))))
    ratio = float(np.max(np.abs(vals / u0 - 1.0))) if abs(u0) > 1 else float("nan")
    return ProfileError(phi_err, ratio)


def ball_integral(geom: TorusGeometry, fn, center, radius: float, n_panels: int = 16,
                  n_theta: int = 128) -> float:
    """``int_{B_radius(center)} fn(points)`` for a smooth pointwise ``fn``."""
    rule = PolarRule.build(geom, center, uniform_breaks(0.0, radius, n_panels), 16, n_theta)
    return rule.integrate(fn(rule.points))


def concentration_fraction(u, h: WeightFunction, center, radius: float) -> float:
    """``int_{B} h e^u / int_Sigma h e^u`` for a grid field or a test-function bundle."""
    geom = h.geom
    if not radius < 0.5 * min(geom.Lx, geom.Ly):
        raise ValueError("radius must be below half the shorter side")
    if isinstance(u, TestFunctionBundle):
        return u.mass_fraction(center, radius)
    from .fields import exp_mass

    total = exp_mass(u, h).value
    hat = u.hat
    inside = ball_integral(geom, lambda pts: h.evaluate(pts[..., 0], pts[..., 1])
                           * np.exp(trig_eval(geom, hat, pts)), center, radius)
    return inside / total


def far_field_gap(u, G: GreenFunction, delta: float) -> float:
    """``sup |u - G|`` over grid nodes at distance ``>= delta`` from the source."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    vals = u.field.values if isinstance(u, TestFunctionBundle) else np.asarray(u.values)
    geom = G.geom
    r = distance_grid(geom, G.source)
    sel = r >= delta
    if not sel.any():
        return 0.0
    X, Y = geom.mesh
    ref = G.evaluate(np.stack([X[sel], Y[sel]], axis=-1))
    return float(np.max(np.abs(vals[sel] - ref)))


# -- test functions ------------------------------------------------------------------------

def schedule_R(eps: float) -> float:
    return eps ** (-1.0 / 3.0)


def smoothstep_cutoff(t):
    """Quintic ``1 - (6t^5 - 15t^4 + 10t^3)`` clamped to [0, 1]; value and ``d/dt``."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    val = 1.0 - t**3 * (10.0 - 15.0 * t + 6.0 * t * t)
    der = -30.0 * t * t * (1.0 - t) ** 2
    return val, der


def e_ell_basis(geom: TorusGeometry, ell: int) -> Optional[EigenBasis]:
    if ell == 0:
        return None
    count = int(np.count_nonzero(perp_mask(geom, ell) & ~geom.nyquist)) - 1
    return eigenbasis(geom, max(count, 4)) if count >= 4 else None


class _Local(NamedTuple):
    """Pointwise pieces of a Green function on a polar rule."""

    r: np.ndarray
    unit: np.ndarray
    G: np.ndarray
    Gr: np.ndarray       # radial derivative of the cutoff kernel part
    psi: np.ndarray
    psi_r: np.ndarray    # radial derivative of the non-w part of psi
    w: np.ndarray
    wx: np.ndarray
    wy: np.ndarray


def _local_parts(G: GreenFunction, rule: PolarRule) -> _Local:
    r = rule.radius
    cut, ker = G.cutoff, G.kernel
    pts = rule.points
    w = G.w(pts)
    wx = G.w(pts, (1, 0))
    wy = G.w(pts, (0, 1))
    chi, dchi = cut.chi(r), cut.dchi(r)
    S, dS = ker.S(r), ker.dS(r)
    one_minus = 0.5 * special.erfc(-(r - cut.r_mid) / cut.sigma)
    logterm = 4.0 * np.log(r) - ker.s0
    psi = chi * ker.T(r) + one_minus * logterm + w - G.w_at_p
    psi_r = dchi * ker.T(r) + chi * ker.dT(r) - dchi * logterm + one_minus * 4.0 / r
    return _Local(r, rule.unit, chi * S + w, dchi * S + chi * dS, psi, psi_r, w, wx, wy)


@dataclass(frozen=True, eq=False)
class TestFunctionBundle:
    geom: TorusGeometry
    eps: float
    R: float
    p: tuple[float, float]
    alpha: float
    ell: int
    weight: WeightFunction = dc_field(repr=False)
    green: GreenFunction = dc_field(repr=False)
    A: float
    c: float
    h_p: float
    field: SpectralField = dc_field(repr=False)
    psi_field: SpectralField = dc_field(repr=False)
    mean: float
    proj_coeffs: np.ndarray = dc_field(repr=False)
    dirichlet: float
    l2_G: float
    log_mass: float
    J: float
    expected: dict
    residuals: dict
    eta_grad_max: float

    @property
    def r_in(self) -> float:
        return self.R * self.eps

    @property
    def continuity_gap(self) -> float:
        """``|c - 2 log(1 + R^2/8) - (-4 log(R eps) + A)|``."""
        return abs(self.c - 2.0 * math.log1p(self.R**2 / 8.0) - (-4.0 * math.log(self.r_in) + self.A))

    @property
    def schedule_term(self) -> float:
        """``(R eps)^2 log R``, which must vanish along the schedule."""
        return self.r_in**2 * math.log(self.R)

    def eta(self, r):
        return smoothstep_cutoff((np.asarray(r) - self.r_in) / self.r_in)[0]

    def evaluate(self, points) -> np.ndarray:
        """Pointwise ``phi_eps``."""
        pts = np.asarray(points, dtype=float)
        _, r = self.green._rel(pts)
        out = np.empty(r.shape)
        ri = self.r_in
        inner = r <= ri
        ann = (r > ri) & (r < 2 * ri)
        outer = ~(inner | ann)
        out[inner] = self.c - 2.0 * np.log1p(r[inner] ** 2 / (8.0 * self.eps**2))
        if ann.any():
            ra = r[ann]
            eta = self.eta(ra)
            out[ann] = -4.0 * np.log(ra) + self.A + (1.0 - eta) * self.green.regular(pts[ann])
        if outer.any():
            out[outer] = self.green.evaluate(pts[outer])
        return out

    def mass_fraction(self, center, radius: float) -> float:
        """Share of ``int h e^phi`` inside ``B_radius(center)``; the ball must be centred at ``p``."""
        if np.hypot(*(np.asarray(center) - np.asarray(self.p))) > 1e-14:
            raise ValueError("mass fraction is only available for balls centred at the bubble")
        ri = self.r_in
        if radius <= ri:
            breaks = [0.0] + geometric_breaks(min(self.eps / 2, radius / 2), radius)
        else:
            breaks = _phi_breaks(self.eps, ri, self.green, radius)
        rule = PolarRule.build(self.geom, self.p, breaks, 20, 64)
        loc = _local_parts(self.green, rule)
        phi, _ = _phi_on_rule(self, loc)
        h = self.weight.evaluate(rule.points[..., 0], rule.points[..., 1])
        inside = rule.integrate(h * np.exp(phi))
        return inside / math.exp(self.log_mass)


def _phi_breaks(eps: float, ri: float, G: GreenFunction, stop: Optional[float] = None) -> list[float]:
    cut = G.cutoff
    br = [0.0] + geometric_breaks(min(eps / 2, ri / 2), ri)
    br += uniform_breaks(ri, 2 * ri, 4)[1:]
    if 2 * ri < cut.r1:
        br += geometric_breaks(2 * ri, cut.r1)[1:]
        br += uniform_breaks(cut.r1, cut.r2, 16)[1:]
    else:
        br += uniform_breaks(2 * ri, cut.r2, 16)[1:]
    if stop is not None:
        br = [b for b in br if b < stop] + [stop]
    return br


def _phi_on_rule(b: TestFunctionBundle, loc: _Local):
    """``phi`` and its gradient (x, y) on a polar rule."""
    r, ri, eps = loc.r, b.r_in, b.eps
    inner = r <= ri
    ann = (r > ri) & (r < 2 * ri)
    eta, deta_dt = smoothstep_cutoff((r - ri) / ri)
    deta = deta_dt / ri
    # radial derivative of the explicit (non-w) part, and the weight on grad w
    phi = np.where(inner, b.c - 2.0 * np.log1p(r * r / (8 * eps * eps)), 0.0)
    radial = np.where(inner, -4.0 * r / (r * r + 8 * eps * eps), 0.0)
    wfac = np.zeros_like(r)
    # annulus: -4 log r + A + (1 - eta) psi
    phi = np.where(ann, -4.0 * np.log(r) + b.A + (1 - eta) * loc.psi, phi)
    radial = np.where(ann, -4.0 / r - deta * loc.psi + (1 - eta) * (loc.psi_r - 0.0), radial)
    wfac = np.where(ann, 1 - eta, wfac)
    # outside: G = chi S + w
    out = ~(inner | ann)
    phi = np.where(out, loc.G, phi)
    radial = np.where(out, loc.Gr, radial)
    wfac = np.where(out, 1.0, wfac)
    # in the annulus psi_r above excludes grad w, which enters through wfac
    gx = radial * loc.unit[..., 0] + wfac * loc.wx
    gy = radial * loc.unit[..., 1] + wfac * loc.wy
    return phi, (gx, gy)


def build_test_function(geom: TorusGeometry, eps: float, p, alpha: float, h: WeightFunction,
                        ell: int = 0, green: Optional[GreenFunction] = None,
                        n_theta: int = 64) -> TestFunctionBundle:
    """Concentrating test function at ``p`` with the ``R = eps^{-1/3}`` schedule.

    Integrals are accurate far below the grid scale; see the module docstring.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    R = schedule_R(eps)
    ri = R * eps
    if not 2 * ri < 0.25 * min(geom.Lx, geom.Ly):
        raise ValueError(f"eps={eps} too large for the R-schedule: need 2 R eps < min(Lx, Ly)/4")
    G = green if green is not None else green_solve(geom, alpha, p, ell)
    p = G.source
    A = G.robin
    c = 2.0 * math.log1p(R * R / 8.0) - 4.0 * math.log(R) - 4.0 * math.log(eps) + A
    h_p = h.at(p)
    V = geom.volume

    # grid part: the smooth field w (equal to phi outside the polar ball)
    N = geom.N
    w_grid = np.fft.ifft2(G.w_hat).real
    kx, ky = geom.wavevectors
    wx_grid = np.fft.ifft2(1j * kx * G.w_hat).real
    wy_grid = np.fft.ifft2(1j * ky * G.w_hat).real
    X, Y = geom.mesh
    dA = geom.cell_area
    h_grid = h.grid

    rule = PolarRule.build(geom, p, _phi_breaks(eps, ri, G), 20, n_theta)
    loc = _local_parts(G, rule)
    stub = _Stub(c=c, A=A, eps=eps, r_in=ri)
    phi, (gx, gy) = _phi_on_rule(stub, loc)
    h_pol = h.evaluate(rule.points[..., 0], rule.points[..., 1])

    def total(grid_vals, pol_phi, pol_w):
        return float(grid_vals.sum() * dA) + rule.integrate(pol_phi - pol_w)

    dirichlet = total(wx_grid**2 + wy_grid**2, gx**2 + gy**2, loc.wx**2 + loc.wy**2)
    int_phi = total(w_grid, phi, loc.w)
    int_phi2 = total(w_grid**2, phi**2, loc.w**2)
    int_G2 = _green_l2(G, w_grid, dA, n_theta)
    mean = int_phi / V
    mass = total(h_grid * np.exp(w_grid), h_pol * np.exp(phi), h_pol * np.exp(loc.w))
    log_mass = math.log(mass)

    # projection onto E_ell^perp for ell >= 1
    basis = e_ell_basis(geom, ell)
    if basis is not None:
        modes_grid = basis.matrix()
        modes_pol = np.stack([basis.evaluate(k, rule.points[..., 0], rule.points[..., 1])
                              for k in range(len(basis))])
        coeffs = np.array([total(w_grid * modes_grid[k], phi * modes_pol[k], loc.w * modes_pol[k])
                           for k in range(len(basis))])
        lam = basis.eigenvalues
        shift_grid = mean + np.tensordot(coeffs, modes_grid, 1)
        shift_pol = mean + np.tensordot(coeffs, modes_pol, 1)
        e_psi = dirichlet - float(np.sum(lam * coeffs**2))
        l2_psi = int_phi2 - V * mean**2 - float(np.sum(coeffs**2))
        mass_psi = total(h_grid * np.exp(w_grid - shift_grid), h_pol * np.exp(phi - shift_pol),
                         h_pol * np.exp(loc.w - shift_pol))
        log_mass_psi = math.log(mass_psi)
    else:
        coeffs = np.zeros(0)
        e_psi = dirichlet
        l2_psi = int_phi2 - V * mean**2
        log_mass_psi = log_mass - mean
    J = 0.5 * (e_psi - alpha * l2_psi) - EIGHT_PI * log_mass_psi

    expected = {
        "dirichlet": (-32 * math.pi * math.log(eps) - 16 * math.pi * math.log(8) - 16 * math.pi
                      + 8 * math.pi * A + alpha * int_G2),
        "log_mass": -math.log(8) + math.log(math.pi * h_p) - 2 * math.log(eps) + A,
        "J": infimum_formula(2 * math.log(h_p) + A),
    }
    residuals = {
        "dirichlet": abs(dirichlet - expected["dirichlet"]),
        "log_mass": abs(log_mass - expected["log_mass"]),
        "J": abs(J - expected["J"]),
    }

    pts = np.stack([X, Y], axis=-1)
    grid_field = SpectralField(geom, np.zeros((N, N)))  # placeholder until the bundle exists
    bundle = TestFunctionBundle(geom, eps, R, p, float(alpha), ell, h, G, A, c, h_p, grid_field,
                                grid_field, mean, coeffs, dirichlet, int_G2, log_mass, J,
                                expected, residuals, 1.875 / ri)
    phi_grid = SpectralField(geom, bundle.evaluate(pts))
    object.__setattr__(bundle, "field", phi_grid)
    psi_grid = project_perp(phi_grid, ell)
    object.__setattr__(bundle, "psi_field", psi_grid)
    return bundle


class _Stub(NamedTuple):
    c: float
    A: float
    eps: float
    r_in: float


def _green_l2(G: GreenFunction, w_grid: np.ndarray, dA: float, n_theta: int) -> float:
    """``int G^2`` via the same grid-plus-polar split (log^2 singularity at the source)."""
    cut = G.cutoff
    breaks = [0.0] + geometric_breaks(1e-12, cut.r1, 4.0) + uniform_breaks(cut.r1, cut.r2, 16)[1:]
    rule = PolarRule.build(G.geom, G.source, breaks, 20, n_theta)
    loc = _local_parts(G, rule)
    return float((w_grid**2).sum() * dA) + rule.integrate(loc.G**2 - loc.w**2)


def eta_gradient_ok(bundle: TestFunctionBundle) -> bool:
    """Check ``|grad eta| <= 4 / (R eps)`` at grid nodes and on a fine radial sample."""
    ri = bundle.r_in
    r = np.concatenate([distance_grid(bundle.geom, bundle.p).ravel(), np.linspace(ri, 2 * ri, 2001)])
    _, d = smoothstep_cutoff((r - ri) / ri)
    return bool(np.max(np.abs(d / ri)) <= 4.0 / ri)


# -- Moser sequence ------------------------------------------------------------------------

@dataclass(frozen=True)
class MoserSpec:
    k: float
    r: float
    p: tuple[float, float] = (0.5, 0.5)
    zeta_center: tuple[float, float] = (0.0, 0.0)
    zeta_radius: float = 0.15

    @property
    def core(self) -> float:
        return self.r * self.k ** (-0.25)

    def validate(self, geom: TorusGeometry):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if not 0 < self.r < min(geom.Lx, geom.Ly) / 4:
            raise ValueError("r must lie in (0, min(Lx, Ly)/4)")
        from .surface import geodesic_distance

        if geodesic_distance(geom, self.p, self.zeta_center) <= self.r + self.zeta_radius:
            raise ValueError("overlapping supports: the far cutoff meets the Moser ball")


def moser_profile(spec: MoserSpec, rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    a = spec.core
    with np.errstate(divide="ignore"):
        mid = 4.0 * np.log(spec.r / np.maximum(rho, 1e-300))
    return np.where(rho <= a, math.log(spec.k), np.where(rho <= spec.r, mid, 0.0))


def zeta_profile(spec: MoserSpec, rho) -> np.ndarray:
    """C^2 bump ``(1 - rho^2/R^2)^3`` on ``rho < R``."""
    s = np.clip(1.0 - (np.asarray(rho, dtype=float) / spec.zeta_radius) ** 2, 0.0, None)
    return s**3


def moser_exact(spec: MoserSpec) -> dict:
    """Closed-form radial integrals of the two pieces."""
    a, r, L = spec.core, spec.r, math.log(spec.k)
    R = spec.zeta_radius
    x = math.log(r / a)
    return {
        "int_M": 2.0 * math.pi * (r * r - a * a),
        "int_M2": math.pi * a * a * L * L + 32 * math.pi * (r * r / 4 - a * a * (x * x / 2 + x / 2 + 0.25)),
        "energy_M": 8 * math.pi * L,
        "int_zeta": math.pi * R * R / 4.0,
        "int_zeta2": math.pi * R * R / 7.0,
        "energy_zeta": 6.0 * math.pi / 5.0,
    }


def balancing_constant(spec: MoserSpec, geom: TorusGeometry) -> float:
    """``t_k = -int M_k / int zeta`` on the grid (so the grid field has zero mean)."""
    M, Z = _moser_pieces_grid(spec, geom)
    return -float(M.sum()) / float(Z.sum())


def _moser_pieces_grid(spec: MoserSpec, geom: TorusGeometry):
    M = moser_profile(spec, distance_grid(geom, spec.p))
    Z = zeta_profile(spec, distance_grid(geom, spec.zeta_center))
    return M, Z


def moser_sequence(spec: MoserSpec, geom: TorusGeometry) -> SpectralField:
    """Grid samples of ``M~_k = M_k + t_k zeta`` (zero mean in grid quadrature)."""
    spec.validate(geom)
    M, Z = _moser_pieces_grid(spec, geom)
    t = -float(M.sum()) / float(Z.sum())
    vals = M + t * Z
    return SpectralField(geom, vals - vals.mean(), mean_zero=True)


def grid_dirichlet(values: np.ndarray, geom: TorusGeometry) -> float:
    """Forward-difference Dirichlet energy on the periodic grid."""
    dx, dy = geom.Lx / geom.N, geom.Ly / geom.N
    ex = (np.roll(values, -1, axis=0) - values) / dx
    ey = (np.roll(values, -1, axis=1) - values) / dy
    return float(np.sum(ex * ex + ey * ey) * geom.cell_area)


def moser_energy(spec: MoserSpec, geom: TorusGeometry) -> float:
    """Grid Dirichlet energy of the concentrated piece ``M_k`` (exactly ``8 pi log k`` in the continuum)."""
    spec.validate(geom)
    M, _ = _moser_pieces_grid(spec, geom)
    return grid_dirichlet(M, geom)


class MoserEvaluation(NamedTuple):
    J: float
    energy: float
    l2: float
    log_mass: float
    t_k: float
    coeffs: np.ndarray


def _moser_rules(spec: MoserSpec, geom: TorusGeometry, n_theta: int):
    a, r = spec.core, spec.r
    br = [0.0, a / 2, a] + geometric_breaks(a, r, 1.5)[1:]
    core = PolarRule.build(geom, spec.p, br, 20, n_theta)
    far = PolarRule.build(geom, spec.zeta_center, uniform_breaks(0.0, spec.zeta_radius, 8), 20, n_theta)
    return core, far


def moser_functional(spec: MoserSpec, geom: TorusGeometry, alpha: float, beta: float,
                     h: WeightFunction, ell: int = 0, n_theta: int = 128) -> MoserEvaluation:
    """``J_{alpha,beta}`` of ``M~_k`` (or its ``E_ell^perp`` projection) by exact radial
    integrals plus polar quadrature of the mass; the core is far below grid scale."""
    spec.validate(geom)
    ex = moser_exact(spec)
    t = -ex["int_M"] / ex["int_zeta"]
    energy = ex["energy_M"] + t * t * ex["energy_zeta"]
    l2 = ex["int_M2"] + t * t * ex["int_zeta2"]
    core, far = _moser_rules(spec, geom, n_theta)
    basis = e_ell_basis(geom, ell)
    if basis is not None:
        coeffs = np.array([_radial_mode_coeff(basis, k, spec, t) for k in range(len(basis))])
        energy -= float(np.sum(basis.eigenvalues * coeffs**2))
        l2 -= float(np.sum(coeffs**2))

        def shift(pts):
            return sum(c * basis.evaluate(k, pts[..., 0], pts[..., 1]) for k, c in enumerate(coeffs))

        modes = basis.matrix()
        shift_grid = np.tensordot(coeffs, modes, 1)
    else:
        coeffs = np.zeros(0)

        def shift(pts):
            return 0.0

        shift_grid = 0.0
    hc = h.evaluate(core.points[..., 0], core.points[..., 1])
    hf = h.evaluate(far.points[..., 0], far.points[..., 1])
    sc, sf = shift(core.points), shift(far.points)
    Mc = moser_profile(spec, core.radius)
    Zf = t * zeta_profile(spec, far.radius)
    base = float(np.sum(h.grid * np.exp(-shift_grid)) * geom.cell_area)
    mass = (base + core.integrate(hc * (np.exp(Mc - sc) - np.exp(-sc)))
            + far.integrate(hf * (np.exp(Zf - sf) - np.exp(-sf))))
    log_mass = math.log(mass)
    J = 0.5 * (energy - alpha * l2) - beta * log_mass
    return MoserEvaluation(J, energy, l2, log_mass, t, coeffs)


def _radial_mode_coeff(basis: EigenBasis, k: int, spec: MoserSpec, t: float) -> float:
    """``<M~_k, e_k>`` through Hankel transforms of the two radial pieces."""
    md = basis.modes[k]
    kmag = math.sqrt(md.eigenvalue)
    a, r = spec.core, spec.r

    def hankel(f, lo, hi):
        v, _ = integrate.quad(lambda s: f(s) * special.j0(kmag * s) * s, lo, hi,
                              limit=200, epsabs=1e-15, epsrel=1e-13)
        return 2 * math.pi * v

    Lk = math.log(spec.k)
    m_part = hankel(lambda s: Lk, 0.0, a) + hankel(lambda s: 4 * math.log(r / s), a, r)
    z_part = hankel(lambda s: (1 - (s / spec.zeta_radius) ** 2) ** 3, 0.0, spec.zeta_radius)
    return (basis.evaluate(k, *spec.p) * m_part + t * basis.evaluate(k, *spec.zeta_center) * z_part)


def projected_moser_field(spec: MoserSpec, geom: TorusGeometry, ell: int) -> SpectralField:
    return project_perp(moser_sequence(spec, geom), ell)


class DivergenceProbe(NamedTuple):
    ks: list
    J: list
    slope: float
    intercept: float
    theory_slope: float
    strictly_decreasing: bool


def divergence_probe_beta(geom: TorusGeometry, alpha: float, beta: float, ks: Sequence[float],
                          r: float, ell: int = 0, h: Optional[WeightFunction] = None,
                          p=(0.5, 0.5)) -> DivergenceProbe:
    """J along the Moser sequence and its least-squares slope against ``log k``."""
    if not beta > EIGHT_PI:
        raise ValueError("beta must exceed 8 pi for the divergence probe")
    ks = [float(k) for k in ks]
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValueError("ks must be increasing")
    from .fields import uniform

    h = uniform(geom) if h is None else h
    Js = [moser_functional(MoserSpec(k, r, p), geom, alpha, beta, h, ell).J for k in ks]
    x = np.log(ks)
    slope, icpt = np.polyfit(x, Js, 1)
    dec = all(b < a for a, b in zip(Js, Js[1:]))
    return DivergenceProbe(ks, Js, float(slope), float(icpt), FOUR_PI - beta / 2.0, dec)


# -- eigen-ray -----------------------------------------------------------------------------

def ray_direction(geom: TorusGeometry) -> SpectralField:
    """Unit-norm first eigenfunction ``sqrt(2/V) cos(2 pi x / L)`` along the longer side."""
    X, Y = geom.mesh
    if geom.Lx >= geom.Ly:
        vals = np.cos(2 * math.pi * X / geom.Lx)
    else:
        vals = np.cos(2 * math.pi * Y / geom.Ly)
    return SpectralField(geom, math.sqrt(2.0 / geom.volume) * vals, mean_zero=True)


def eigen_ray(geom: TorusGeometry, alpha: float, ts: Sequence[float],
              h: Optional[WeightFunction] = None) -> list[float]:
    """``J_{alpha, 8 pi}(t u_0)`` along the first eigenfunction."""
    if alpha < first_eigenvalue(geom) * (1 - 1e-14):
        raise ValueError("the eigen-ray probe needs alpha >= lambda_1")
    from .fields import uniform

    h = uniform(geom) if h is None else h
    u0 = ray_direction(geom)
    params = FunctionalParams(alpha, EIGHT_PI, h)
    return [eval_J(u0 * float(t), params) for t in ts]


def ray_secant_slope(Js: Sequence[float], ts: Sequence[float]) -> float:
    return (Js[-1] - Js[-2]) / (ts[-1] - ts[-2])
