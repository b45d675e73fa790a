"""Functions on the torus in spectral form, subspace projections and the
exponential mass ``int h e^u``.

A :class:`SpectralField` keeps its grid samples as the primary data; the
eigenbasis coefficients are derived from the FFT on demand.  For fields
whose spectrum lies below the Nyquist index the two views agree to
round-off.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .surface import EigenBasis, TorusGeometry, TWO_PI, distinct_eigenvalue, quad_any

LOG_OVERFLOW = 700.0


@dataclass(frozen=True, eq=False)
class SpectralField:
    geom: TorusGeometry
    values: np.ndarray
    mean_zero: bool = False

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.geom.N, self.geom.N):
            raise ValueError(f"field shape {vals.shape} does not match grid N={self.geom.N}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.mean_zero and abs(self.mean) > 1e-12 * max(1.0, np.abs(vals).max()):
            raise ValueError(f"field tagged mean-zero has mean {self.mean:.3e}")

    @cached_property
    def hat(self) -> np.ndarray:
        return np.fft.fft2(self.values)

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    def integral(self) -> float:
        return float(self.values.sum() * self.geom.cell_area)

    def coefficients(self, basis: EigenBasis) -> np.ndarray:
        return analyze(self.values, basis)

    def inner(self, other: "SpectralField") -> float:
        return float(np.sum(self.values * other.values) * self.geom.cell_area)

    def l2_norm(self) -> float:
        return math.sqrt(max(self.inner(self), 0.0))

    def max(self) -> float:
        return float(self.values.max())

    def evaluate(self, points, method: str = "spectral") -> np.ndarray:
        """Sample at arbitrary points; ``method`` is ``spectral`` or ``bilinear``."""
        if method == "bilinear":
            return bilinear_sample(self.geom, self.values, points)
        if method == "spectral":
            return trig_eval(self.geom, self.hat, points)
        raise ValueError(f"unknown sampling method {method!r}")

    def with_values(self, values, mean_zero: bool = False) -> "SpectralField":
        return SpectralField(self.geom, values, mean_zero)

    def __add__(self, other):
        if isinstance(other, SpectralField):
            return SpectralField(self.geom, self.values + other.values)
        return SpectralField(self.geom, self.values + other)

    def __sub__(self, other):
        if isinstance(other, SpectralField):
            return SpectralField(self.geom, self.values - other.values)
        return SpectralField(self.geom, self.values - other)

    def __mul__(self, scalar):
        return SpectralField(self.geom, self.values * float(scalar), self.mean_zero)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.geom, -self.values, self.mean_zero)


def zeros(geom: TorusGeometry) -> SpectralField:
    return SpectralField(geom, np.zeros((geom.N, geom.N)), mean_zero=True)


def from_function(geom: TorusGeometry, fn, mean_zero: bool = False) -> SpectralField:
    X, Y = geom.mesh
    vals = np.asarray(fn(X, Y), dtype=float)
    if mean_zero:
        vals = vals - vals.mean()
    return SpectralField(geom, vals, mean_zero)


# -- coefficient transforms ------------------------------------------------

def _mode_slots(basis: EigenBasis):
    N = basis.geom.N
    ms = np.array([md.m % N for md in basis.modes])
    ns = np.array([md.n % N for md in basis.modes])
    is_cos = np.array([md.kind == "cos" for md in basis.modes])
    return ms, ns, is_cos


def analyze(values, basis: EigenBasis) -> np.ndarray:
    """Inner products ``<u, e_k>`` with every basis mode."""
    geom = basis.geom
    values = np.asarray(values)
    if values.shape != (geom.N, geom.N):
        raise ValueError(f"samples of shape {values.shape} do not match grid N={geom.N}")
    hat = np.fft.fft2(values)
    ms, ns, is_cos = _mode_slots(basis)
    picked = hat[ms, ns]
    scale = math.sqrt(2.0 / geom.volume) * geom.cell_area
    return np.where(is_cos, picked.real, -picked.imag) * scale


def synthesize(basis: EigenBasis, coeffs, mean: float = 0.0) -> SpectralField:
    """Grid field ``mean + sum_k c_k e_k``."""
    geom = basis.geom
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (len(basis),):
        raise ValueError(f"expected {len(basis)} coefficients, got shape {coeffs.shape}")
    N = geom.N
    hat = np.zeros((N, N), dtype=complex)
    ms, ns, is_cos = _mode_slots(basis)
    amp = coeffs * math.sqrt(2.0 / geom.volume) * N * N / 2.0
    plus = np.where(is_cos, amp, -1j * amp)
    np.add.at(hat, (ms, ns), plus)
    np.add.at(hat, ((-ms) % N, (-ns) % N), np.conj(plus))
    hat[0, 0] += mean * N * N
    return SpectralField(geom, np.fft.ifft2(hat).real, mean_zero=(mean == 0.0))


# -- quadratic form and projections ----------------------------------------

def quadratic_form(u: SpectralField, alpha: float) -> float:
    """``int |grad u|^2 - alpha u^2`` evaluated by Parseval."""
    geom = u.geom
    weight = geom.eigenvalues - alpha
    return float(np.sum(weight * np.abs(u.hat) ** 2) * geom.volume / geom.N**4)


def h1_alpha_norm(u: SpectralField, alpha: float) -> float:
    """``||u||_{1,alpha}``; for alpha at or above lambda_1 the signed quadratic form."""
    q = quadratic_form(u, alpha)
    from .surface import first_eigenvalue

    if alpha >= first_eigenvalue(u.geom):
        return q
    if q < -1e-12 * max(1.0, u.l2_norm() ** 2):
        raise ArithmeticError(f"negative quadratic form {q:.3e} with alpha below lambda_1")
    return math.sqrt(max(q, 0.0))


def project_mean_zero(u: SpectralField) -> SpectralField:
    return SpectralField(u.geom, u.values - u.values.mean(), mean_zero=True)


def perp_mask(geom: TorusGeometry, ell: int) -> np.ndarray:
    """fft2 slots removed by the ``E_ell``-complement projection (mean included)."""
    lam_ell = distinct_eigenvalue(geom, ell)
    return geom.eigenvalues <= lam_ell * (1 + 1e-12)


def project_perp(u: SpectralField, ell: int) -> SpectralField:
    """Zero every coefficient with eigenvalue ``<= lambda_ell`` (the mean included)."""
    if ell < 0:
        raise ValueError("ell must be >= 0")
    if ell == 0:
        return project_mean_zero(u)
    hat = u.hat.copy()
    hat[perp_mask(u.geom, ell)] = 0.0
    vals = np.fft.ifft2(hat).real
    return SpectralField(u.geom, vals - vals.mean(), mean_zero=True)


def admissible_mask(geom: TorusGeometry, ell: int) -> np.ndarray:
    """fft2 slots that the minimizer keeps: above ``lambda_ell`` and below Nyquist."""
    return ~(perp_mask(geom, ell) | geom.nyquist)


# -- weights ----------------------------------------------------------------

WEIGHT_KINDS = ("uniform", "cosine", "bump")


@dataclass(frozen=True)
class WeightFunction:
    """Positive weight ``h`` from a fixed closed-form catalog.

    * ``uniform``: ``h = 1``
    * ``cosine``:  ``h = 1 + a cos(2 pi x / Lx)`` with ``|a| < 1``
    * ``bump``:    ``h = 1 + a exp(kappa (cos(2 pi (x-x0)/Lx) + cos(2 pi (y-y0)/Ly) - 2))``
    """

    geom: TorusGeometry
    kind: str = "uniform"
    a: float = 0.0
    kappa: float = 1.0
    x0: float = 0.0
    y0: float = 0.0
    grid: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise ValueError(f"unknown weight kind {self.kind!r}; expected one of {WEIGHT_KINDS}")
        if self.kind == "cosine" and not abs(self.a) < 1:
            raise ValueError("cosine weight needs |a| < 1 to stay positive")
        if self.kind == "bump" and not self.a > -1:
            raise ValueError("bump weight needs a > -1 to stay positive")
        X, Y = self.geom.mesh
        g = self.evaluate(X, Y)
        if not np.all(g > 0):
            raise ValueError("weight is not strictly positive on the grid")
        g.setflags(write=False)
        object.__setattr__(self, "grid", g)

    def evaluate(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "uniform":
            return np.ones(np.broadcast(x, y).shape)
        if self.kind == "cosine":
            return 1.0 + self.a * np.cos(TWO_PI * x / self.geom.Lx) + 0.0 * y
        bump = np.exp(self.kappa * (np.cos(TWO_PI * (x - self.x0) / self.geom.Lx)
                                    + np.cos(TWO_PI * (y - self.y0) / self.geom.Ly) - 2.0))
        return 1.0 + self.a * bump

    def at(self, point) -> float:
        return float(self.evaluate(point[0], point[1]))

    @property
    def is_uniform(self) -> bool:
        return self.kind == "uniform" or self.a == 0.0

    @property
    def min_h(self) -> float:
        return float(self.grid.min())

    @property
    def max_h(self) -> float:
        if self.kind == "uniform":
            return 1.0
        return float(max(self.grid.max(), self.at(self.argmax)))

    @property
    def argmax(self) -> tuple[float, float]:
        """Exact maximizer for the closed-form families (origin for ``uniform``)."""
        if self.kind == "uniform":
            return (0.0, 0.0)
        if self.kind == "cosine":
            return (0.0, 0.0) if self.a >= 0 else (self.geom.Lx / 2, 0.0)
        if self.a >= 0:
            return self.geom.wrap((self.x0, self.y0))
        return self.geom.wrap((self.x0 + self.geom.Lx / 2, self.y0 + self.geom.Ly / 2))

    def integral(self) -> float:
        return float(self.grid.sum() * self.geom.cell_area)

    def bandwidth(self) -> float:
        """Rough angular wavenumber scale of ``h`` (for quadrature sizing)."""
        base = TWO_PI / min(self.geom.Lx, self.geom.Ly)
        if self.kind == "bump":
            return base * (1.0 + 3.0 * math.sqrt(max(self.kappa, 0.0)))
        return base

    def describe(self) -> dict:
        return {"kind": self.kind, "a": self.a, "kappa": self.kappa, "x0": self.x0, "y0": self.y0}


def uniform(geom: TorusGeometry) -> WeightFunction:
    return WeightFunction(geom, "uniform")


def cosine(geom: TorusGeometry, a: float) -> WeightFunction:
    return WeightFunction(geom, "cosine", a=a)


def bump(geom: TorusGeometry, a: float, kappa: float, x0: float, y0: float) -> WeightFunction:
    return WeightFunction(geom, "bump", a=a, kappa=kappa, x0=x0, y0=y0)


# -- resampling and point evaluation ---------------------------------------

def _band(N: int) -> tuple[np.ndarray, np.ndarray]:
    """Slots of an N-grid below Nyquist and their signed wave numbers."""
    f = np.fft.fftfreq(N, d=1.0 / N).round().astype(int)
    keep = np.nonzero(np.abs(f) < N // 2)[0]
    return keep, f[keep]


def upsample(values: np.ndarray, M: int) -> np.ndarray:
    """Band-limited interpolation of N-grid samples onto an M-grid (Nyquist dropped)."""
    N = values.shape[0]
    keep, f = _band(N)
    dst = f % M
    big = np.zeros((M, M), dtype=complex)
    big[np.ix_(dst, dst)] = np.fft.fft2(values)[np.ix_(keep, keep)]
    return np.fft.ifft2(big).real * (M * M / (N * N))


def restrict_hat(values_fine: np.ndarray, N: int) -> np.ndarray:
    """fft2 (N-grid normalisation) of the N-band part of fine-grid samples."""
    M = values_fine.shape[0]
    keep, f = _band(N)
    src = f % M
    hat = np.zeros((N, N), dtype=complex)
    hat[np.ix_(keep, keep)] = np.fft.fft2(values_fine)[np.ix_(src, src)]
    return hat * (N * N / (M * M))


def padded_size(N: int) -> int:
    return 3 * N // 2


def trig_eval(geom: TorusGeometry, hat: np.ndarray, points, deriv: tuple[int, int] = (0, 0),
              tol: float = 0.0) -> np.ndarray:
    """Evaluate the trigonometric interpolant given by an fft2 array at points.

    ``deriv`` selects a partial derivative ``(d/dx)^a (d/dy)^b``.  With
    ``tol > 0`` the sum is truncated to the smallest centred box outside of
    which every coefficient is below ``tol * max|coefficient|``.
    """
    pts = np.asarray(points, dtype=float)
    shape = pts.shape[:-1]
    pts = pts.reshape(-1, 2)
    N = geom.N
    keep, f = _band(N)
    coef = hat[np.ix_(keep, keep)] / (N * N)
    K = N // 2 - 1
    if tol > 0:
        mag = np.abs(coef)
        big = mag > tol * mag.max() if mag.max() > 0 else np.zeros_like(mag, bool)
        if big.any():
            K = int(max(np.abs(f[big.any(axis=1)]).max(), np.abs(f[big.any(axis=0)]).max()))
        else:
            K = 0
    sel = np.nonzero(np.abs(f) <= K)[0]
    fs = f[sel]
    coef = coef[np.ix_(sel, sel)]
    kx = TWO_PI * fs / geom.Lx
    ky = TWO_PI * fs / geom.Ly
    if deriv[0]:
        coef = coef * ((1j * kx) ** deriv[0])[:, None]
    if deriv[1]:
        coef = coef * ((1j * ky) ** deriv[1])[None, :]
    out = np.empty(pts.shape[0])
    chunk = 8192
    for s in range(0, pts.shape[0], chunk):
        p = pts[s:s + chunk]
        Ex = np.exp(1j * np.outer(p[:, 0], kx))
        Ey = np.exp(1j * np.outer(p[:, 1], ky))
        out[s:s + chunk] = np.einsum("pm,pm->p", Ex @ coef, Ey).real
    return out.reshape(shape)


def bilinear_sample(geom: TorusGeometry, values: np.ndarray, points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    coords = np.stack([pts[..., 0] / geom.Lx * geom.N, pts[..., 1] / geom.Ly * geom.N])
    return ndimage.map_coordinates(values, coords.reshape(2, -1), order=1,
                                   mode="grid-wrap").reshape(pts.shape[:-1])


def spectral_gradient(u: SpectralField) -> tuple[np.ndarray, np.ndarray]:
    kx, ky = u.geom.wavevectors
    hat = u.hat.copy()
    hat[u.geom.nyquist] = 0.0
    return np.fft.ifft2(1j * kx * hat).real, np.fft.ifft2(1j * ky * hat).real


def laplacian(u: SpectralField) -> SpectralField:
    """Positive Laplacian ``-div grad u``."""
    return SpectralField(u.geom, np.fft.ifft2(u.geom.eigenvalues * u.hat).real)


# -- exponential mass -------------------------------------------------------

class ExpMass(NamedTuple):
    value: float
    log: float
    shifted: bool  # True when max u exceeded the overflow guard


def exp_mass(u: SpectralField, h: WeightFunction) -> ExpMass:
    """``int h e^u`` by quadrature on the 3/2-padded grid.

    The exponential is always taken as ``e^c e^{u-c}`` with ``c = max u``;
    ``shifted`` reports whether ``c`` crossed the overflow guard, in which
    case ``value`` may be ``inf`` and ``log`` is authoritative.
    """
    geom = u.geom
    M = padded_size(geom.N)
    fine = upsample(u.values, M)
    X, Y = geom.grid_for(M)
    hf = h.evaluate(X, Y)
    c = float(fine.max())
    log_mass = c + math.log(quad_any(geom, hf * np.exp(fine - c)))
    value = math.exp(log_mass) if log_mass < 709.0 else math.inf
    return ExpMass(value, log_mass, c > LOG_OVERFLOW)


# -- dumps ------------------------------------------------------------------

def save_field(stem, u: SpectralField, kind: str = "field", **extra) -> list[Path]:
    """Write ``stem.bin`` (little-endian float64, row-major) and ``stem.txt``."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    bin_path = stem.with_suffix(".bin")
    txt_path = stem.with_suffix(".txt")
    np.ascontiguousarray(u.values, dtype="<f8").tofile(bin_path)
    desc = {"N": u.geom.N, "Lx": repr(u.geom.Lx), "Ly": repr(u.geom.Ly), "kind": kind}
    desc.update({k: (repr(v) if isinstance(v, float) else v) for k, v in extra.items()})
    txt_path.write_text("".join(f"{k} = {v}\n" for k, v in desc.items()))
    return [bin_path, txt_path]


def read_descriptor(stem) -> dict:
    desc = {}
    for line in Path(stem).with_suffix(".txt").read_text().splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, _, val = line.partition("=")
        desc[key.strip()] = val.strip()
    return desc


def load_field(stem) -> tuple[SpectralField, dict]:
    from .surface import build_torus

    desc = read_descriptor(stem)
    for key in ("N", "Lx", "Ly", "kind"):
        if key not in desc:
            raise ValueError(f"field descriptor missing key {key!r}")
    geom = build_torus(float(desc["Lx"]), float(desc["Ly"]), int(desc["N"]))
    raw = np.fromfile(Path(stem).with_suffix(".bin"), dtype="<f8")
    if raw.size != geom.N**2:
        raise ValueError(f"field dump holds {raw.size} values, expected {geom.N ** 2}")
    return SpectralField(geom, raw.reshape(geom.N, geom.N)), desc


# -- peak refinement --------------------------------------------------------

_STENCIL = np.array([(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)], dtype=float)
_DESIGN = np.column_stack([np.ones(9), _STENCIL[:, 0], _STENCIL[:, 1], _STENCIL[:, 0] ** 2,
                           _STENCIL[:, 0] * _STENCIL[:, 1], _STENCIL[:, 1] ** 2])


def quadratic_peak(patch: np.ndarray) -> tuple[float, float, float, bool]:
    """Stationary point of the least-squares quadratic through a 3x3 patch.

    Returns ``(di, dj, value, ok)`` with offsets in cell units relative to
    the centre.  ``ok`` is False when the fit is not a strict local maximum
    or its vertex leaves the stencil; the centre sample is then returned.
    """
    coef, *_ = np.linalg.lstsq(_DESIGN, np.asarray(patch, dtype=float).ravel(), rcond=None)
    a, b, c, d, e, f = coef
    H = np.array([[2 * d, e], [e, 2 * f]])
    det = np.linalg.det(H)
    if not (H[0, 0] < 0 and det > 0):
        return 0.0, 0.0, float(patch[1][1]), False
    di, dj = np.linalg.solve(H, [-b, -c])
    if abs(di) > 1 or abs(dj) > 1:
        return 0.0, 0.0, float(patch[1][1]), False
    val = a + b * di + c * dj + d * di * di + e * di * dj + f * dj * dj
    return float(di), float(dj), float(val), True


def periodic_patch(values: np.ndarray, i: int, j: int) -> np.ndarray:
    N0, N1 = values.shape
    return values[np.ix_([(i - 1) % N0, i, (i + 1) % N0], [(j - 1) % N1, j, (j + 1) % N1])]
