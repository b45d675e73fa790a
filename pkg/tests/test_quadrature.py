import math

import numpy as np
import pytest

from kwtorus.quadrature import PolarRule, geometric_breaks, panel_nodes, uniform_breaks
from kwtorus.surface import build_torus


def test_breaks():
    assert geometric_breaks(0.1, 1.0) == pytest.approx([0.1, 0.2, 0.4, 0.8, 1.0])
    assert uniform_breaks(0, 1, 4) == pytest.approx([0, 0.25, 0.5, 0.75, 1])
    with pytest.raises(ValueError):
        geometric_breaks(0.0, 1.0)
    with pytest.raises(ValueError):
        panel_nodes([0.0, 0.5, 0.5])


def test_panel_nodes_polynomial_exact():
    x, w = panel_nodes([0.0, 0.3, 1.0], order=5)
    assert np.sum(w * x**9) == pytest.approx(0.1, rel=1e-14)


def test_polar_rule_disc_moments():
    g = build_torus(1.0, 1.0, 32)
    rule = PolarRule.build(g, (0.95, 0.02), [0.0, 0.1, 0.3], order=20, n_theta=32)
    assert rule.integrate(np.ones(rule.radius.shape)) == pytest.approx(math.pi * 0.09, rel=1e-14)
    assert rule.integrate(rule.radius**2) == pytest.approx(math.pi * 0.3**4 / 2, rel=1e-14)
    assert rule.points.min() >= 0 and rule.points[..., 0].max() < 1
    x = rule.offsets[..., 0]
    assert rule.integrate(x * x) == pytest.approx(math.pi * 0.3**4 / 4, rel=1e-13)


def test_polar_rule_must_fit():
    with pytest.raises(ValueError):
        PolarRule.build(build_torus(1.0, 1.0, 32), (0, 0), [0.0, 0.6])
