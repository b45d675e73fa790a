import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kwtorus.fields import SpectralField, analyze, cosine, from_function, project_perp, uniform
from kwtorus.functional import (EIGHT_PI, FunctionalParams, admissible, el_residual,
                                energy_identity_gap, eval_J, evaluate, grad_J, weak_bound,
                                weak_bound_check)
from kwtorus.surface import build_torus, eigenbasis


def _field(geom, seed, scale=0.5):
    rng = np.random.default_rng(seed)
    hat = np.fft.fft2(rng.normal(size=(geom.N, geom.N))) * np.exp(-geom.eigenvalues / 300)
    hat[geom.nyquist] = 0
    hat[0, 0] = 0
    return SpectralField(geom, scale * np.fft.ifft2(hat).real)


def test_params_validation(unit64):
    h = uniform(unit64)
    with pytest.raises(ValueError):
        FunctionalParams(0.0, 10.0, h, eps=0.5)
    with pytest.raises(ValueError):
        FunctionalParams.subcritical(0.0, 1.2, h)
    with pytest.raises(ValueError):
        FunctionalParams(0.0, 1.0, h, ell=-1)
    p = FunctionalParams.subcritical(0.0, 0.25, h)
    assert p.beta == pytest.approx(6 * math.pi)
    assert p.critical().beta == EIGHT_PI


@pytest.mark.parametrize("ell,ceiling", [(0, 4 * math.pi**2), (1, 8 * math.pi**2), (2, 16 * math.pi**2)])
def test_alpha_ceiling(unit64, ell, ceiling):
    p = FunctionalParams(0.0, 1.0, uniform(unit64), ell=ell)
    assert p.alpha_ceiling() == pytest.approx(ceiling)


def test_value_at_zero_and_weak_bound(rect64):
    h = cosine(rect64, 0.4)
    p = FunctionalParams(3.0, 5.0, h)
    zero = SpectralField(rect64, np.zeros((64, 64)))
    assert eval_J(zero, p) == pytest.approx(-5.0 * math.log(2.0), rel=1e-13)
    assert weak_bound(p) == pytest.approx(EIGHT_PI * math.log(2.0))
    assert weak_bound_check(eval_J(zero, p), p)


def test_directional_derivative(unit64):
    p = FunctionalParams(10.0, 4 * math.pi, cosine(unit64, 0.3))
    u, v = _field(unit64, 1), _field(unit64, 2)
    t = 1e-5
    fd = (eval_J(u + v * t, p) - eval_J(u - v * t, p)) / (2 * t)
    assert grad_J(u, p).inner(v) == pytest.approx(fd, rel=1e-7)


@pytest.mark.parametrize("ell", [1, 2])
def test_gradient_lives_off_E_ell(unit64, ell):
    p = FunctionalParams(0.0, 4 * math.pi, cosine(unit64, 0.3), ell=ell)
    g = grad_J(_field(unit64, 3), p)
    b = eigenbasis(unit64, 40)
    assert np.abs(analyze(g.values, b)[b.level_modes(ell)]).max() < 1e-13
    assert abs(g.mean) < 1e-14
    assert not np.any(np.abs(g.hat[unit64.nyquist]) > 1e-9)


def test_uniform_zero_is_critical(unit64):
    p = FunctionalParams.subcritical(0.0, 0.3, uniform(unit64))
    zero = SpectralField(unit64, np.zeros((64, 64)))
    assert el_residual(zero, p) == 0.0
    assert energy_identity_gap(zero, p) == 0.0


def test_energy_identity_for_linear_solution(unit64):
    # the energy identity is <grad J(u), u> = 0 in disguise: check it tracks that pairing
    p = FunctionalParams(5.0, 4 * math.pi, cosine(unit64, 0.3))
    u = _field(unit64, 5)
    ev = evaluate(u, p)
    assert energy_identity_gap(u, p) == pytest.approx(abs(ev.grad.inner(u)), rel=1e-9, abs=1e-12)


def test_field_on_other_torus_rejected(unit64, rect64):
    p = FunctionalParams(0.0, 1.0, uniform(unit64))
    with pytest.raises(ValueError):
        eval_J(SpectralField(rect64, np.zeros((64, 64))), p)


@settings(max_examples=25, deadline=None)
@given(st.floats(-20.0, 35.0), st.floats(0.05, 0.95), st.floats(0.0, 3.0))
def test_jensen_lower_bound(alpha, eps, scale):
    # log int h e^u >= log int h for mean-zero u and h = 1 (Jensen), so J <= Q/2
    g = build_torus(1.0, 1.0, 32)
    p = FunctionalParams.subcritical(alpha, eps, uniform(g))
    u = _field(g, 7, scale)
    from kwtorus.fields import quadratic_form

    assert eval_J(u, p) <= 0.5 * quadratic_form(u, alpha) + 1e-12


def test_admissible_projection(unit64):
    p = FunctionalParams(0.0, 1.0, uniform(unit64), ell=1)
    u = admissible(from_function(unit64, lambda x, y: np.exp(np.cos(2 * np.pi * x))), p)
    v = project_perp(u, 1)
    np.testing.assert_allclose(u.values, v.values, atol=1e-13)
