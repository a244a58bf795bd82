import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from entroflow import appendix_oracle as ao
from entroflow.appendix_oracle import CappedCylinderParams as P


def test_params_validation():
    with pytest.raises(ValueError):
        P(0.0, 1.0)
    with pytest.raises(ValueError):
        P(1.0, -1.0)


def test_cylinder_value_closed_form():
    # the unit cylinder at r = 1/2 is the radius sqrt(2) shrinker at r = 1, rescaled
    assert ao.cylinder_value(0.5) == pytest.approx(math.sqrt(2 * math.pi / math.e), rel=1e-15)


def test_cylinder_value_by_quadrature():
    for r in (0.1, 0.5, 2.0):
        q, _ = integrate.quad(lambda y: math.exp(-(y * y + 1) / (4 * r)) / (2 * r), -math.inf, math.inf,
                              epsabs=1e-14)
        assert ao.cylinder_value(r) == pytest.approx(q, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(a=st.floats(0.05, 60.0), r=st.floats(0.05, 3.0))
def test_closed_form_matches_quadrature(a, r):
    p = P(a, r)
    q, err = ao.f_capped_quadrature(p)
    assert ao.f_capped(p) == pytest.approx(q, rel=1e-10, abs=1e-14)


@settings(max_examples=60, deadline=None)
@given(a=st.floats(0.2, 50.0), r=st.floats(0.1, 2.0))
def test_derivative_matches_finite_difference(a, r):
    p = P(a, r)
    assert ao.dfda_analytic(p) == pytest.approx(ao.dfda_numeric(p), abs=1e-7)


def test_derivative_matches_quadrature_route():
    # independent route: central difference of the quadrature value
    for a, r in ((2.0, 0.5), (5.0, 1.0), (1.0, 0.25)):
        h = 1e-4
        fd = (ao.f_capped_quadrature(P(a + h, r))[0] - ao.f_capped_quadrature(P(a - h, r))[0]) / (2 * h)
        assert ao.dfda_analytic(P(a, r)) == pytest.approx(fd, abs=1e-7)


def test_printed_variant_rejected():
    p = P(2.0, 0.5)
    fd = ao.dfda_numeric(p)
    assert abs(ao.dfda_printed_variant(p) - fd) > 1e-2
    assert abs(ao.dfda_analytic(p) - fd) < 1e-8


@pytest.mark.parametrize("r", [0.1, 0.5, 2.0])
def test_limit_far_inside_cylinder(r):
    a = 40.0 + 20 * math.sqrt(r)
    assert ao.f_capped(P(a, r)) == pytest.approx(ao.cylinder_value(r), abs=1e-10)


def test_limit_value_at_shrinker_scale():
    assert abs(ao.f_capped(P(40.0, 0.5)) - math.sqrt(2 * math.pi / math.e)) <= 1e-4


def test_excess_forms_agree():
    for a, r in ((1.0, 0.5), (2.0, 1.0), (3.0, 2.0)):
        p = P(a, r)
        assert ao.excess(p) == pytest.approx(ao.f_capped(p) - ao.cylinder_value(r), rel=1e-9, abs=1e-15)


@pytest.mark.parametrize("r", [0.1, 0.25, 0.5])
def test_strict_excess_at_small_scales(r):
    assert all(ao.excess_scaled(P(float(a), r)) > 0 for a in np.linspace(2, 50, 49))


def test_strict_excess_fails_at_unit_scale():
    # frozen counterexample: the cap weighs 0.0906 while the missing half
    # line weighs 0.1086 (unscaled), so F drops below the cylinder value
    p = P(2.0, 1.0)
    assert ao.cap_term(p) == pytest.approx(0.0905528, rel=1e-6)
    assert ao.excess(p) == pytest.approx(-0.0180142, rel=1e-5)
    assert ao.excess_scaled(p) < 0


def test_sign_change_increases_with_scale():
    vals = [ao.sign_change(r) for r in (0.5, 1.0, 1.5, 2.0)]
    assert all(x < y for x, y in zip(vals, vals[1:]))
    assert ao.sign_change(1.0) == pytest.approx(6.42712704, rel=1e-7)


def test_sign_change_is_a_root():
    for r in (0.5, 1.0, 2.0):
        a0 = ao.sign_change(r)
        assert ao.dfda_analytic(P(a0 * (1 - 1e-6), r)) > 0
        assert ao.dfda_analytic(P(a0 * (1 + 1e-6), r)) <= 0
        assert all(ao.dfda_analytic(P(a, r)) <= 0 for a in np.linspace(a0 * 1.01, 150, 60))


def test_sign_change_absent_at_small_scale():
    assert ao.sign_change(0.1) == 1e-3


def test_cross_validation_with_entropy_module():
    for a, r in ((5.0, 0.5), (2.0, 0.1)):
        assert ao.cross_validate(P(a, r)) <= 1e-6


def test_capped_curve_geometry():
    c = ao.capped_curve(h=0.05, a=5.0, r=0.5)
    assert c.x.max() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(c.u[(c.x < -1) & (c.x > c.x.min() + 1)], 1.0)


@settings(max_examples=40, deadline=None)
@given(a=st.floats(0.5, 30.0), r=st.floats(0.05, 2.0))
def test_F_positive_and_bounded_by_cylinder_plus_cap(a, r):
    p = P(a, r)
    f = ao.f_capped(p)
    assert 0 < f <= ao.cylinder_value(r) + ao.cap_term(p) + 1e-15


_NEGATIVE = {(2, 1.0), (5, 1.0), (2, 2.0), (5, 2.0), (10, 2.0)}


@pytest.mark.parametrize("a,r", [
    pytest.param(a, r, marks=pytest.mark.xfail(strict=True, reason="cap weighs less than the missing half line"))
    if (a, r) in _NEGATIVE else (a, r)
    for a in (2, 5, 10, 20) for r in (0.1, 0.5, 1.0, 2.0)])
def test_excess_example_grid(a, r):
    assert ao.excess_scaled(P(float(a), r)) > 0
