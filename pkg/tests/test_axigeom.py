import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from entroflow import axigeom as ag
from entroflow.axigeom import CurveError, GeneratingCurve


def test_cylinder_curvatures_n3():
    c = ag.cylinder(3, 1.0, 5.0, 0.1)
    s = ag.curvature_at(c, 20)
    assert s.kappa_axial == pytest.approx(0.0, abs=1e-12)
    assert s.kappa_sphere == pytest.approx(1.0, abs=1e-12)
    assert s.H == pytest.approx(2.0, abs=1e-12)
    assert s.norm_A_sq == pytest.approx(2.0, abs=1e-12)


def test_sphere_radius2_umbilic():
    c = ag.sphere(2, 2.0, 0.01)
    for i in (0, 7, c.size // 2, c.size - 1):
        s = ag.curvature_at(c, i)
        assert s.lambda_sorted == pytest.approx((0.5, 0.5), abs=1e-4)
        assert s.H == pytest.approx(1.0, abs=2e-4)


def test_outward_normal_sign():
    c = ag.sphere(3, 1.0, 0.05)
    s = ag.curvature_at(c, c.size // 2)
    assert s.H > 0
    assert s.nu[1] == pytest.approx(1.0, abs=1e-3)   # equator normal points away from the axis


def test_sample_consistency_on_dumbbell():
    c = ag.close_with_caps(ag.build_profile_eta_k(8, 3, 0.25, 0.25, h=0.05))
    k = ag.curvatures(c)
    lam = k.lambda_sorted()
    assert np.allclose(lam.sum(axis=1), k.H, rtol=1e-10, atol=1e-12)
    assert np.allclose((lam**2).sum(axis=1), k.norm_A_sq, rtol=1e-10, atol=1e-12)


def test_curvature_order_on_sphere():
    errs, hs = [], []
    for h in (0.08, 0.04, 0.02):
        c = ag.sphere(2, 1.0, h)
        errs.append(float(np.max(np.abs(ag.curvatures(c).H - 2.0))))
        hs.append(h)
    order = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert order >= 1.5


def test_flare_curvature_second_order():
    # exact H of the graph from the closed-form derivatives of eta_k
    m, k, W, R0, n = 8, 3, 0.25, 0.25, 3
    errs = []
    hs = (0.02, 0.01, 0.005)
    for h in hs:
        c = ag.build_profile_eta_k(m, k, W, R0, h=h, n=n)
        i = int(np.argmin(np.abs(c.x - 1.0)))   # middle of the first step
        d = ag.eta_k_derivs(c.x[i:i + 1], m, k, W, R0)[:, 0]
        w = math.sqrt(1 + d[1] ** 2)
        exact = -d[2] / w**3 + (n - 1) / (d[0] * w)
        errs.append(abs(ag.curvature_at(c, i).H - exact))
    order = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert order >= 1.5


def test_rejects_coincident_nodes():
    with pytest.raises(CurveError, match="coincident"):
        GeneratingCurve(2, np.array([0.0, 1.0, 1.0, 2.0]), np.array([0.0, 1.0, 1.0, 0.0]))


def test_rejects_pinched_input():
    x = np.linspace(-1, 1, 9)
    u = np.array([0, 0.5, 0.7, 0.4, 0.0, 0.4, 0.7, 0.5, 0])
    with pytest.raises(CurveError, match="pinched"):
        GeneratingCurve(2, x, u)


def test_rejects_negative_radius_and_bad_dim():
    with pytest.raises(CurveError):
        GeneratingCurve(2, np.arange(4.0), np.array([0.0, -1.0, 1.0, 0.0]))
    with pytest.raises(CurveError):
        GeneratingCurve(1, np.arange(4.0), np.array([0.0, 1.0, 1.0, 0.0]))


def test_curvature_at_small_curve_and_bad_index():
    c = ag.sphere(2, 1.0, 0.1)
    with pytest.raises(CurveError):
        ag.curvature_at(c, c.size + 3)


def test_resample_cylinder_exact():
    c = ag.resample(ag.cylinder(3, 1.0, 4.0, 0.13), 0.05)
    assert np.all(c.u == 1.0)
    assert c.closure == "open" and c.chart == "graph"


def test_resample_idempotent():
    c = ag.sphere(2, 1.0, 0.05)
    a = ag.resample(c, 0.03)
    b = ag.resample(a, 0.03)
    assert np.max(np.abs(a.nodes - b.nodes)) < 1e-10


def test_resample_deviation_bound():
    c = ag.close_with_caps(ag.build_profile_eta_k(8, 3, 0.25, 0.25, h=0.05))
    h = 0.04
    r = ag.resample(c, h)
    assert ag.polyline_deviation(r.nodes, c) <= h * h


def test_resample_too_coarse():
    with pytest.raises(CurveError):
        ag.resample(ag.sphere(2, 0.1, 0.01), 10.0)


def test_resampled_sphere_curvature_refinement():
    c = ag.sphere(2, 1.0, 0.01)
    e1 = np.max(np.abs(ag.curvatures(ag.resample(c, 0.04)).H - 2))
    e2 = np.max(np.abs(ag.curvatures(ag.resample(c, 0.02)).H - 2))
    assert e2 < e1 / 3


@pytest.mark.parametrize("n", [2, 3, 4])
def test_noncollapse_sphere(n):
    rep = ag.noncollapse_check(ag.sphere(n, 1.3, 0.02))
    assert rep.alpha_interior == pytest.approx(n, abs=1e-3)


def test_noncollapse_cylinder():
    rep = ag.noncollapse_check(ag.cylinder(3, 1.0, 6.0, 0.05))
    assert rep.alpha_interior == pytest.approx(2.0, abs=1e-3)


def test_noncollapse_matches_pairwise_bruteforce():
    # independent oracle: loop over every node and every reflected node
    c = ag.resample(ag.capsule(3, 1.0, 1.5, 0.1), 0.1)
    k = ag.curvatures(c)
    P = c.nodes
    Q = np.vstack([P, P * [1, -1]])
    best_in = math.inf
    for i in range(c.size):
        r = math.inf
        for q in Q:
            d = P[i] - q
            t = d @ k.nu[i]
            d2 = d @ d
            if d2 > 1e-20 and t > 0:
                r = min(r, d2 / (2 * t))
        best_in = min(best_in, r * k.H[i])
    rep = ag.noncollapse_check(c)
    assert rep.alpha_interior == pytest.approx(best_in, abs=1e-3)


def test_noncollapse_rejects_non_mean_convex():
    c = ag.close_with_caps(ag.build_profile_eta_k(2, 1, 0.25, 0.25, h=0.05))
    k = ag.curvatures(c)
    if k.H.min() > 0:
        pytest.skip("profile happens to be mean convex")
    with pytest.raises(CurveError, match="node"):
        ag.noncollapse_check(c)


def test_two_convexity_ratio_identities():
    assert ag.two_convexity_ratio(ag.cylinder(3, 1.0, 5.0, 0.1)) == pytest.approx(0.5, abs=1e-9)
    for n in (2, 3, 4):
        assert ag.two_convexity_ratio(ag.sphere(n, 1.0, 0.02)) == pytest.approx(2 / n, abs=1e-3)


def test_two_convexity_matches_per_node():
    c = ag.close_with_caps(ag.build_profile_eta_k(8, 3, 0.25, 0.25, h=0.05))
    k = ag.curvatures(c)
    if k.H.min() <= 0:
        pytest.skip("not mean convex")
    direct = min((sorted([k.kappa_axial[i]] + [k.kappa_sphere[i]] * 2)[0]
                  + sorted([k.kappa_axial[i]] + [k.kappa_sphere[i]] * 2)[1]) / k.H[i] for i in range(c.size))
    assert ag.two_convexity_ratio(c) == pytest.approx(direct, rel=1e-12)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_sphere_two_convex_floor(n):
    assert ag.two_convexity_ratio(ag.sphere(n, 1.0, 0.003)) >= 2 / n - 1e-6


def test_capsule_two_convexity_is_the_cylinder_value():
    # on the straight part lambda = (0, 1, 1) and H = 2, so the capsule
    # minimum is 1/2, below 2/n = 2/3
    assert ag.two_convexity_ratio(ag.capsule(3, 1.0, 3.0, 0.02)) == pytest.approx(0.5, abs=1e-9)


@pytest.mark.parametrize("m,k", [(1, 1), (8, 3), (3, 5)])
def test_eta_k_centre_and_plateau(m, k):
    c = ag.build_profile_eta_k(m, k, 0.25, 0.4, h=0.01)
    assert ag.eta_k(np.array([0.0]), m, k, 0.25, 0.4)[0] == pytest.approx(1 / (k + 1), abs=1e-15)
    assert c.u[0] == pytest.approx(1.0, abs=1e-12)
    assert c.u[-1] == pytest.approx(1.0, abs=1e-12)


def test_eta_k_c3_bound_by_dense_sampling():
    # sampled derivatives of the building block against those of the step
    m, k, W, R0 = 4, 2, 0.25, 0.5
    x = np.linspace(-6, 6, 200001)
    d = ag.eta_k_derivs(x, m, k, W, R0)
    t = np.linspace(-0.5, 1.5, 200001)
    s = ag.smooth_step_derivs(t)
    for j in range(1, 4):
        # chain rule: each derivative of eta(x/2R0) carries (1/2R0)^j; terms have disjoint support
        bound = np.max(np.abs(s[j])) / m / (k + 1) * (1 / (2 * R0)) ** j
        assert np.max(np.abs(d[j])) <= bound * (1 + 1e-6)


def test_k_m_constraint():
    assert ag.check_k_m_constraint(8, 3, 3, 1.0)
    assert not ag.check_k_m_constraint(1, 1, 3, 1.0)


def test_csv_roundtrip_bit_exact(tmp_path):
    c = ag.close_with_caps(ag.build_profile_eta_k(8, 3, 0.25, 0.25, h=0.05))
    p = ag.write_curve(c, tmp_path / "c.csv")
    d = ag.read_curve(p)
    assert np.array_equal(c.x, d.x) and np.array_equal(c.u, d.u)
    assert (d.n, d.closure, d.chart) == (c.n, c.closure, c.chart)


def test_csv_malformed(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("axial,radius\n0,0\n1\n")
    with pytest.raises(CurveError):
        ag.read_curve(p, 2)
    p.write_text("x,y\n0,0\n")
    with pytest.raises(CurveError):
        ag.read_curve(p, 2)


# ---------------------------------------------------------------- properties
@settings(max_examples=25, deadline=None)
@given(shift=st.floats(-50, 50), R=st.floats(0.3, 3.0), n=st.integers(2, 4))
def test_noncollapse_translation_invariant(shift, R, n):
    c = ag.sphere(n, R, R * 0.1)
    a = ag.noncollapse_check(c)
    b = ag.noncollapse_check(c.translated(shift))
    assert abs(a.alpha_interior - b.alpha_interior) <= 1e-10 * max(1, abs(shift))
    assert abs(a.alpha_exterior - b.alpha_exterior) <= 1e-10 * max(1, abs(shift)) or \
        math.isinf(a.alpha_exterior)


@settings(max_examples=20, deadline=None)
@given(L=st.floats(0.5, 4.0), R=st.floats(0.5, 2.0))
def test_noncollapse_reflection_invariant(L, R):
    c = ag.capsule(3, R, L, 0.1)
    a = ag.noncollapse_check(c)
    b = ag.noncollapse_check(c.reflected())
    assert a.alpha_interior == pytest.approx(b.alpha_interior, abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(s=st.floats(0.2, 5.0), n=st.integers(2, 5))
def test_curvature_scaling(s, n):
    c = ag.close_with_caps(ag.build_profile_eta_k(2, 2, 0.25, 0.3, h=0.05, n=n))
    k1 = ag.curvatures(c)
    k2 = ag.curvatures(c.scaled(s))
    assert np.allclose(k2.H * s, k1.H, rtol=1e-9, atol=1e-9)
    assert np.allclose(k2.norm_A_sq * s * s, k1.norm_A_sq, rtol=1e-9, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 6), R=st.floats(0.2, 10.0))
def test_sample_invariants_hold_everywhere(n, R):
    c = ag.sphere(n, R, R / 20)
    k = ag.curvatures(c)
    lam = k.lambda_sorted()
    assert np.allclose(lam.sum(1), k.H, rtol=1e-10)
    assert np.allclose((lam**2).sum(1), k.norm_A_sq, rtol=1e-10)
    assert np.all(np.diff(lam, axis=1) >= 0)


@settings(max_examples=20, deadline=None)
@given(h=st.floats(0.02, 0.2), R=st.floats(0.5, 3))
def test_spacing_ratio_after_adaptive_resample(h, R):
    c = ag.resample_adaptive(ag.capsule(3, R, 2.0, 0.02), h_max=h, ratio=10)
    ch = c.chords()
    assert ch.min() > 0
    assert ch.max() / ch.min() <= 10 * (1 + 1e-6) + 1e-6
