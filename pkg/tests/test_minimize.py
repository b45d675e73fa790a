import math

import numpy as np
import pytest

from kwtorus.fields import SpectralField, bump, cosine, from_function, uniform
from kwtorus.functional import FunctionalParams, eval_J
from kwtorus.minimize import (MinimizeOptions, VerdictRule, argmax_refine, blowup_scale, classify,
                              continuation_sweep, minimize_subcritical, recompute_r_eps)
from kwtorus.surface import build_torus, first_eigenvalue


@pytest.fixture(scope="module")
def g32():
    return build_torus(1.0, 1.0, 32)


def test_cosine_against_mode_oracle(unit64, oracles):
    res = minimize_subcritical(FunctionalParams.subcritical(0.0, 0.5, cosine(unit64, 0.3)))
    assert res.converged and res.status == "converged"
    assert res.J == pytest.approx(oracles["bf12_cos03_eps05_alpha0"], abs=1e-6)
    # the 12-mode space is a subspace: the full minimum can only be lower
    assert res.J <= oracles["bf12_cos03_eps05_alpha0"] + 1e-12
    assert res.x[0] == pytest.approx(0.0, abs=1e-8) or res.x[0] == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("alpha_frac", [0.0, 0.5, 0.9])
def test_uniform_weight_stays_at_zero(g32, alpha_frac):
    p = FunctionalParams.subcritical(alpha_frac * first_eigenvalue(g32), 0.2, uniform(g32))
    res = minimize_subcritical(p)
    assert res.iterations == 0 and res.el_residual == 0.0 and res.J == 0.0


def test_zero_is_a_saddle_when_alpha_large(g32):
    # lambda_1 - alpha < beta / V: a random start descends below J(0) = 0
    lam1 = first_eigenvalue(g32)
    p = FunctionalParams.subcritical(0.9 * lam1, 0.5, uniform(g32))
    u0 = from_function(g32, lambda x, y: 0.05 * np.cos(2 * np.pi * x), mean_zero=True)
    res = minimize_subcritical(p, u0)
    assert res.converged and res.J < -1.0 and res.weak_bound_ok


def test_warm_restart_is_idempotent(g32):
    p = FunctionalParams.subcritical(5.0, 0.3, cosine(g32, 0.4))
    first = minimize_subcritical(p)
    again = minimize_subcritical(p, first.u)
    assert again.iterations <= 1 and again.J == pytest.approx(first.J, abs=1e-12)


def test_options_respected(g32):
    p = FunctionalParams.subcritical(0.0, 0.1, cosine(g32, 0.4))
    res = minimize_subcritical(p, opts=MinimizeOptions(max_iter=2, tol=1e-14))
    assert not res.converged and res.iterations == 2


def test_noncoercive_rejected(g32):
    p = FunctionalParams.subcritical(first_eigenvalue(g32) + 1, 0.5, uniform(g32))
    with pytest.raises(ValueError):
        minimize_subcritical(p)


def test_bump_uses_bubble_seed(g32):
    h = bump(g32, 3.0, 10.0, 0.5, 0.5)
    res = minimize_subcritical(FunctionalParams.subcritical(0.0, 0.3, h))
    assert res.converged
    assert math.hypot(res.x[0] - 0.5, res.x[1] - 0.5) < 0.05
    assert res.J_critical_min <= eval_J(res.u, FunctionalParams(0.0, 8 * math.pi, h)) + 1e-9


def test_argmax_refine_offgrid(unit64):
    u = from_function(unit64, lambda x, y: np.cos(2 * np.pi * (x - 0.3131)) + np.cos(2 * np.pi * (y - 0.777)))
    pk = argmax_refine(u)
    assert pk.point == pytest.approx((0.3131, 0.777), abs=1e-10)
    assert pk.value == pytest.approx(2.0, abs=1e-12) and not pk.degenerate
    flat = SpectralField(unit64, np.zeros((64, 64)))
    assert argmax_refine(flat).degenerate


def test_blowup_scale_formula():
    r = blowup_scale(math.log(2.0), 0.25, 1.5, 3.0)
    assert r == pytest.approx(math.sqrt(2.0 / (8 * math.pi * 0.75 * 1.5)) * math.exp(-1.5), rel=1e-14)


@pytest.mark.parametrize("cs,verdict", [
    ([1.0, 1.1, 1.05, 1.08], "bounded"),
    ([1.0, 3.0, 5.0, 7.0], "blowup-consistent"),
    ([1.0, 5.0, 5.1, 12.0], "inconclusive"),
    ([1.0, 2.0], "inconclusive"),
])
def test_classify(cs, verdict):
    eps = [0.5 * 2.0**-k for k in range(len(cs))]
    assert classify(cs, eps, VerdictRule())[0] == verdict


def test_sweep_uniform_is_bounded(g32):
    rep = continuation_sweep(FunctionalParams.subcritical(0.0, 0.5, uniform(g32)), [0.5, 0.3, 0.2, 0.1])
    assert rep.verdict == "bounded"
    for row in rep.rows():
        assert recompute_r_eps(row) == pytest.approx(row["r_eps"], rel=1e-12)


@pytest.mark.parametrize("sched", [[0.3, 0.5], [0.2, 0.2], []])
def test_sweep_schedule_validation(g32, sched):
    with pytest.raises(ValueError):
        continuation_sweep(FunctionalParams.subcritical(0.0, 0.5, uniform(g32)), sched)
