import math

import numpy as np
import pytest
from scipy import integrate

from kwtorus.asymptotics import (MoserSpec, balancing_constant, bubble_mass, bubble_profile, bubble_seed,
                                 build_test_function, concentration_fraction, divergence_probe_beta,
                                 eigen_ray, infimum_formula, inner_energy_check, moser_energy,
                                 moser_exact, moser_functional, moser_profile, moser_sequence,
                                 ray_direction, rescaled_profile_error, schedule_R, smoothstep_cutoff,
                                 zeta_profile)
from kwtorus.fields import cosine, uniform
from kwtorus.surface import build_torus, first_eigenvalue


def test_bubble_basics():
    assert bubble_profile(np.zeros(2)) == 0.0
    assert bubble_mass() == pytest.approx(8 * math.pi, abs=1e-10)
    assert bubble_mass(cut=30.0) == pytest.approx(8 * math.pi, abs=1e-10)
    # remainder is 128 pi / (8 + R^2)
    for R in (1.0, 10.0, 100.0):
        assert inner_energy_check(R) == pytest.approx(128 * math.pi / (8 + R * R), rel=1e-10)
    assert infimum_formula(0.0) == pytest.approx(-8 * math.pi * (1 + math.log(math.pi)))


def test_smoothstep():
    eta, deta = smoothstep_cutoff(np.array([-1.0, 0.0, 0.5, 1.0, 2.0]))
    # decreasing from 1 to 0 across the annulus
    np.testing.assert_allclose(eta, [1, 1, 0.5, 0, 0])
    assert deta[0] == 0 and deta[-1] == 0 and deta[2] == pytest.approx(-1.875)


@pytest.mark.parametrize("k,r", [(10.0, 0.05), (1e4, 0.1), (1e8, 0.03)])
def test_moser_exact_integrals(k, r):
    spec = MoserSpec(k, r)
    ex = moser_exact(spec)
    a = spec.core
    br = [0, a, r]
    q = lambda f: sum(integrate.quad(lambda s: 2 * math.pi * s * f(s), lo, hi, epsrel=1e-13)[0]
                      for lo, hi in zip(br, br[1:]))
    m = lambda s: float(moser_profile(spec, s))
    assert ex["int_M"] == pytest.approx(q(m), rel=1e-10)
    assert ex["int_M2"] == pytest.approx(q(lambda s: m(s) ** 2), rel=1e-10)
    z = lambda s: float(zeta_profile(spec, s))
    R = spec.zeta_radius
    assert ex["int_zeta"] == pytest.approx(integrate.quad(lambda s: 2 * math.pi * s * z(s), 0, R)[0], rel=1e-12)
    assert ex["int_zeta2"] == pytest.approx(integrate.quad(lambda s: 2 * math.pi * s * z(s) ** 2, 0, R)[0], rel=1e-12)


def test_moser_grid_objects(unit128):
    spec = MoserSpec(100.0, 0.2)
    u = moser_sequence(spec, unit128)
    assert abs(u.mean) < 1e-14
    assert balancing_constant(spec, unit128) < 0
    # grid energy approaches 8 pi log k while the core is resolved
    assert moser_energy(spec, unit128) == pytest.approx(8 * math.pi * math.log(100.0), rel=0.1)
    with pytest.raises(ValueError):
        MoserSpec(100.0, 0.4).validate(unit128)
    with pytest.raises(ValueError):
        MoserSpec(100.0, 0.1, p=(0.1, 0.1)).validate(unit128)


def test_moser_functional_energy_exact(unit64):
    ev = moser_functional(MoserSpec(1e3, 0.05), unit64, 0.0, 9 * math.pi, uniform(unit64))
    ex = moser_exact(MoserSpec(1e3, 0.05))
    assert ev.energy == pytest.approx(ex["energy_M"] + ev.t_k**2 * ex["energy_zeta"], rel=1e-14)


def test_moser_slope_reaches_theory_only_at_huge_k(unit64):
    # at r = 0.05 the core mass 2 pi r^2 sqrt(k) dominates only once k >> 1e5
    small = divergence_probe_beta(unit64, 0.0, 9 * math.pi, [1e2, 1e3, 1e4], 0.05)
    assert small.slope > 0 and not small.strictly_decreasing
    big = divergence_probe_beta(unit64, 0.0, 9 * math.pi, [1e12, 1e14, 1e16], 0.05)
    assert big.strictly_decreasing
    assert big.slope == pytest.approx(-math.pi / 2, rel=0.10)


def test_divergence_probe_guards(unit64):
    with pytest.raises(ValueError):
        divergence_probe_beta(unit64, 0.0, 8 * math.pi, [10, 100], 0.05)
    with pytest.raises(ValueError):
        divergence_probe_beta(unit64, 0.0, 9 * math.pi, [100, 10], 0.05)


def test_eigen_ray(unit64, oracles):
    lam1 = first_eigenvalue(unit64)
    u0 = ray_direction(unit64)
    assert u0.l2_norm() == pytest.approx(1.0, abs=1e-14)
    Js = eigen_ray(unit64, lam1, [0.0, 1.0, 2.0])
    assert Js[0] == 0.0
    assert Js[1] == pytest.approx(oracles["ray_bessel_t1"], abs=1e-10)
    with pytest.raises(ValueError):
        eigen_ray(unit64, 0.5 * lam1, [1.0])


@pytest.fixture(scope="module")
def small_bundle():
    g = build_torus(1.0, 1.0, 64)
    lam1 = first_eigenvalue(g)
    return build_test_function(g, 1e-2, (0.0, 0.0), 0.5 * lam1, cosine(g, 0.5))


def test_test_function_construction(small_bundle):
    b = small_bundle
    assert b.R == pytest.approx(schedule_R(1e-2)) == pytest.approx(100 ** (1 / 3))
    assert b.continuity_gap < 1e-12
    assert b.psi_field.mean == pytest.approx(0.0, abs=1e-14)
    pts = np.array([[b.r_in * 0.5, 0.0], [b.r_in * 1.5, 0.0], [0.3, 0.3]])
    vals = b.evaluate(pts)
    assert vals[0] == pytest.approx(b.c - 2 * math.log1p((0.5 * b.R) ** 2 / 8))
    assert vals[2] == pytest.approx(b.green.evaluate(pts[2:])[0])
    assert rescaled_profile_error(b, b.p, b.eps, b.R).phi_error < 1e-10


def test_test_function_precondition(unit64):
    with pytest.raises(ValueError):
        build_test_function(unit64, 0.2, (0, 0), 0.0, uniform(unit64))


def test_mass_fraction_paths_agree(small_bundle):
    b = small_bundle
    direct = b.mass_fraction(b.p, b.r_in)
    # analytic share of the bubble inside B_{R eps} is (R^2/8)/(1 + R^2/8) of the bubble mass
    assert 0.5 < direct < 1
    assert concentration_fraction(b, b.weight, b.p, b.r_in) == direct
    with pytest.raises(ValueError):
        b.mass_fraction((0.5, 0.5), 0.1)


def test_concentration_fraction_grid(unit128):
    u = bubble_seed(unit128, (0.5, 0.5), scale=0.02)
    h = uniform(unit128)
    inner = concentration_fraction(u, h, (0.5, 0.5), 0.1)
    outer = concentration_fraction(u, h, (0.5, 0.5), 0.3)
    assert 0 < inner < outer < 1
