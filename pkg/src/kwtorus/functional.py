"""Weighted mean-field functional

    J_{alpha,beta}(u) = 1/2 int (|grad u|^2 - alpha u^2) - beta log int h e^u

on mean-zero fields, its gradient, and the identities satisfied at
critical points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .fields import (
    SpectralField,
    WeightFunction,
    admissible_mask,
    exp_mass,
    padded_size,
    quadratic_form,
    restrict_hat,
    upsample,
)
from .surface import distinct_eigenvalue, first_eigenvalue, quad_any

EIGHT_PI = 8.0 * math.pi


@dataclass(frozen=True)
class FunctionalParams:
    alpha: float
    beta: float
    weight: WeightFunction
    eps: Optional[float] = None
    ell: int = 0

    def __post_init__(self):
        if self.ell < 0:
            raise ValueError("ell must be >= 0")
        if self.eps is not None:
            if not 0.0 <= self.eps < 1.0:
                raise ValueError(f"eps must lie in [0, 1), got {self.eps}")
            if not math.isclose(self.beta, EIGHT_PI * (1.0 - self.eps), rel_tol=1e-14):
                raise ValueError("beta must equal 8 pi (1 - eps) when eps is set")

    @classmethod
    def subcritical(cls, alpha: float, eps: float, weight: WeightFunction, ell: int = 0):
        return cls(alpha, EIGHT_PI * (1.0 - eps), weight, eps, ell)

    @property
    def geom(self):
        return self.weight.geom

    def alpha_ceiling(self) -> float:
        """``lambda_{ell+1}``: alpha must stay below it for a coercive problem."""
        if self.ell == 0:
            return first_eigenvalue(self.geom)
        return distinct_eigenvalue(self.geom, self.ell + 1)

    def is_coercive(self) -> bool:
        return self.alpha < self.alpha_ceiling()

    def critical(self) -> "FunctionalParams":
        return FunctionalParams(self.alpha, EIGHT_PI, self.weight, None, self.ell)


class Evaluation(NamedTuple):
    J: float
    grad: SpectralField
    log_mass: float
    quad: float


def _check_field(u: SpectralField, p: FunctionalParams):
    if u.geom != p.geom:
        raise ValueError("field and weight live on different tori")


def eval_J(u: SpectralField, p: FunctionalParams) -> float:
    _check_field(u, p)
    q = quadratic_form(u, p.alpha)
    return 0.5 * q - p.beta * exp_mass(u, p.weight).log


def _density_hat(u: SpectralField, p: FunctionalParams):
    """N-band fft2 of ``h e^u / mass`` plus ``log mass`` (padded quadrature)."""
    geom = u.geom
    M = padded_size(geom.N)
    fine = upsample(u.values, M)
    X, Y = geom.grid_for(M)
    hf = p.weight.evaluate(X, Y)
    c = float(fine.max())
    w = hf * np.exp(fine - c)
    total = quad_any(geom, w)
    dens = w / total
    return restrict_hat(dens, geom.N), c + math.log(total), fine, dens


def _project_hat(hat: np.ndarray, p: FunctionalParams) -> np.ndarray:
    out = hat.copy()
    out[~admissible_mask(p.geom, p.ell)] = 0.0
    return out


def evaluate(u: SpectralField, p: FunctionalParams) -> Evaluation:
    """Value and projected L2 gradient in one pass."""
    _check_field(u, p)
    geom = u.geom
    dens_hat, log_mass, _, _ = _density_hat(u, p)
    q = quadratic_form(u, p.alpha)
    # the -1/Vol term only touches the mean, which the projection removes
    g_hat = (geom.eigenvalues - p.alpha) * u.hat - p.beta * dens_hat
    g_hat = _project_hat(g_hat, p)
    grad = SpectralField(geom, np.fft.ifft2(g_hat).real, mean_zero=True)
    return Evaluation(0.5 * q - p.beta * log_mass, grad, log_mass, q)


def grad_J(u: SpectralField, p: FunctionalParams) -> SpectralField:
    return evaluate(u, p).grad


def el_residual(u: SpectralField, p: FunctionalParams) -> float:
    """L2 norm of ``Delta u - alpha u - beta (h e^u / mass - 1/Vol)`` on the admissible subspace."""
    return evaluate(u, p).grad.l2_norm()


def energy_identity_gap(u: SpectralField, p: FunctionalParams) -> float:
    """``| ||u||_{1,alpha}^2 - (beta / mass) int h u e^u |``."""
    _check_field(u, p)
    _, _, fine, dens = _density_hat(u, p)
    q = quadratic_form(u, p.alpha)
    return abs(q - p.beta * quad_any(u.geom, fine * dens))


def weak_bound(p: FunctionalParams) -> float:
    return EIGHT_PI * abs(math.log(p.weight.integral()))


def weak_bound_check(J_value: float, p: FunctionalParams) -> bool:
    return bool(J_value <= weak_bound(p) + 1e-9)


def admissible(u: SpectralField, p: FunctionalParams) -> SpectralField:
    """Project ``u`` onto the run's admissible subspace (mean zero, off ``E_ell``, no Nyquist)."""
    hat = _project_hat(u.hat, p)
    return SpectralField(u.geom, np.fft.ifft2(hat).real, mean_zero=True)
