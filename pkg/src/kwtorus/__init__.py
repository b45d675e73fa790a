"""Spectral toolkit for weighted mean-field (Moser-Trudinger type) functionals
on flat two-dimensional tori."""

__version__ = "0.1.0"

from .surface import TorusGeometry, build_torus, eigenbasis, first_eigenvalue  # noqa: E402,F401
from .fields import SpectralField, WeightFunction  # noqa: E402,F401
from .functional import FunctionalParams, eval_J, grad_J  # noqa: E402,F401
from .greenfn import green_solve, robin_constant  # noqa: E402,F401

__all__ = ["TorusGeometry", "build_torus", "eigenbasis", "first_eigenvalue", "SpectralField",
           "WeightFunction", "FunctionalParams", "eval_J", "grad_J", "green_solve", "robin_constant"]
