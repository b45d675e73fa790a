import math

import numpy as np
import pytest

from kwtorus.fields import analyze, bump, cosine, uniform
from kwtorus.greenfn import (Cutoff, EwaldGreen, HelmholtzKernel, ResonantAlphaError, compare_methods,
                             extrapolate_fit, green_solve, robin_constant, robin_landscape)
from kwtorus.surface import build_torus, eigenbasis, first_eigenvalue


@pytest.mark.parametrize("alpha", [-30.0, 0.0, 10.0, 60.0])
@pytest.mark.parametrize("ell", [0, 1])
def test_split_matches_ewald(unit128, alpha, ell):
    # the erfc cutoff is resolved to roundoff from N=128 on the unit torus
    if ell == 0 and alpha == 60.0:
        alpha = 50.0
    G = green_solve(unit128, alpha, (0.2, 0.7), ell)
    ew = EwaldGreen(unit128, alpha, (0.2, 0.7), ell)
    assert G.robin == pytest.approx(ew.robin(), abs=1e-10)
    pts = np.array([[0.6, 0.1], [0.25, 0.72], [0.9, 0.9]])
    np.testing.assert_allclose(G.evaluate(pts), ew.evaluate(pts), atol=1e-9)


def test_eta_oracle_unit_and_rectangle(oracles):
    assert green_solve(build_torus(1, 1, 128), 0.0, (0.1, 0.2)).robin == pytest.approx(
        oracles["robin_alpha0_unit"], abs=1e-10)
    # the split method needs N=256 on the 2:1 torus; Ewald is grid independent
    ew = EwaldGreen(build_torus(2, 1, 64), 0.0, (0.1, 0.2)).robin()
    assert ew == pytest.approx(oracles["robin_alpha0_2x1"], abs=1e-10)


def test_resonance_rejected(unit64):
    with pytest.raises(ResonantAlphaError):
        green_solve(unit64, 4 * math.pi**2, (0, 0))
    # an E_1 eigenvalue is removed by the projection, so alpha = lambda_1 is fine for ell=1
    G = green_solve(unit64, 4 * math.pi**2, (0, 0), ell=1)
    assert math.isfinite(G.robin)


def test_split_underresolved_on_coarse_grid(unit64, oracles):
    gap = abs(green_solve(unit64, 0.0, (0.1, 0.2)).robin - oracles["robin_alpha0_unit"])
    assert 1e-6 < gap < 1e-3


def test_coefficient_identity(unit64):
    b = eigenbasis(unit64, 60)
    for ell in (0, 1, 2):
        assert green_solve(unit64, 7.0, (0.3, 0.4), ell).coefficient_identity_error(b) < 1e-10


def test_regular_part_vanishes_at_source(unit64):
    G = green_solve(unit64, 10.0, (0.35, 0.55))
    assert G.regular(np.array([G.source]))[0] == pytest.approx(0.0, abs=1e-13)
    # G + 4 log r - A -> 0 approaching the source
    for r in (1e-3, 1e-5):
        pt = np.array([[0.35 + r, 0.55]])
        assert G.evaluate(pt)[0] + 4 * math.log(r) - G.robin == pytest.approx(0.0, abs=50 * r)


def test_regular_gradient_fd(unit64):
    G = green_solve(unit64, 5.0, (0.5, 0.5))
    x = np.array([[0.61, 0.47]])
    d = 1e-6
    gx, gy = G.regular_grad(x)
    fx = (G.regular(x + [d, 0]) - G.regular(x - [d, 0])) / (2 * d)
    fy = (G.regular(x + [0, d]) - G.regular(x - [0, d])) / (2 * d)
    assert gx[0] == pytest.approx(fx[0], abs=1e-7)
    assert gy[0] == pytest.approx(fy[0], abs=1e-7)


def test_kernel_log_behaviour():
    for alpha in (-5.0, 0.0, 5.0):
        k = HelmholtzKernel(alpha)
        r = np.array([1e-6])
        assert k.S(r)[0] + 4 * math.log(1e-6) == pytest.approx(k.s0, abs=1e-8)
        assert k.T(r)[0] == pytest.approx(0.0, abs=1e-8)


def test_cutoff_profile():
    c = Cutoff.for_torus(build_torus(1, 1, 64))
    r = np.array([0.0, c.r1, c.r2, 0.6])
    vals = c.chi(r)
    assert vals[0] == pytest.approx(1.0, abs=1e-15) and vals[1] > 1 - 1e-15
    assert vals[2] < 1e-15 and vals[3] < 1e-60


def test_extrapolate_converges(unit128):
    G = green_solve(unit128, 0.0, (0.5, 0.5))
    fit = extrapolate_fit(G)
    assert fit.npoints > 100
    assert abs(fit.robin - G.robin) < 1e-5
    assert robin_constant(G, "extrapolate") == fit.robin
    with pytest.raises(ValueError):
        robin_constant(G, "guess")


def test_compare_flags_underresolution():
    cmp = compare_methods(green_solve(build_torus(1, 1, 16), 10.0, (0, 0)))
    assert cmp.under_resolved and cmp.gap > 1e-3


def test_landscape(unit64):
    lam1 = first_eigenvalue(unit64)
    flat = robin_landscape(unit64, 0.3 * lam1, uniform(unit64))
    assert flat.degenerate
    land = robin_landscape(unit64, 0.3 * lam1, cosine(unit64, 0.5))
    assert not land.degenerate
    assert land.argmax[0] == pytest.approx(0.0, abs=1e-9)
    assert land.max_value == pytest.approx(land.robin + 2 * math.log(1.5), abs=1e-9)
    lb = robin_landscape(unit64, 0.0, bump(unit64, 2.0, 5.0, 0.3, 0.6))
    assert lb.argmax == pytest.approx((0.3, 0.6), abs=1e-3)


def test_projected_green_orthogonal(unit64):
    G = green_solve(unit64, 3.0, (0.4, 0.1), ell=2)
    b = eigenbasis(unit64, 20)
    assert np.abs(analyze(G.field.values, b)[b.level_modes(2)]).max() < 1e-12
