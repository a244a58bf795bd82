import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from entroflow import acceptance as acc
from entroflow import axigeom as ag
from entroflow import flow as fl
from entroflow import surgery as su
from entroflow.entropy import shrinker_entropy


@pytest.fixture(scope="module")
def cap():
    return acc.cap_model()


def _long_capsule(s=1.0, half=60.0, h=0.25):
    return ag.capsule(3, s, half, h)


def _cyl_neck(c, p=0.0):
    s = float(np.interp(p, c.x[c.x.size // 4: 3 * c.x.size // 4], c.u[c.x.size // 4: 3 * c.x.size // 4]))
    return su.NeckRegion(p, s, (p - s / 0.025, p + s / 0.025), 0.0, c.component_id, 2.0 / s, 1)


# ------------------------------------------------------------------ params
def test_params_validation():
    with pytest.raises(ValueError):
        su.SurgeryParams(H_th=3, H_neck=4, H_trig=40)
    with pytest.raises(ValueError):
        su.SurgeryParams(delta=0.2)
    with pytest.raises(ValueError):
        su.SurgeryParams(Gamma=5)
    with pytest.raises(ValueError):
        su.SurgeryParams.from_dict({"nope": 1})
    assert su.SurgeryParams().Pi(3) == pytest.approx(shrinker_entropy(1) - 1e-6)
    assert su.SurgeryParams(entropy_threshold=1.5).Pi(3) == 1.5


def test_config_from_dict_rejects_unknown():
    with pytest.raises(ValueError):
        su.CapConfig.from_dict({"x": 1})
    with pytest.raises(ValueError):
        su.AuditConfig.from_dict({"x": 1})


# ------------------------------------------------------------------ neck scoring
def test_exact_cylinder_scores_zero():
    c = ag.cylinder(3, 1.0, 60.0, 0.1)
    i = int(np.argmin(np.abs(c.x)))
    score, s, win = su.neck_score(c, 0.0, i, 0.025, 1.0)
    assert win is not None
    assert score < 1e-10 and s == pytest.approx(1.0)


def _c2_size(x, f, s):
    d1 = np.gradient(f, x)
    d2 = np.gradient(d1, x)
    return max(np.abs(f).max() / s, np.abs(d1).max(), np.abs(d2).max() * s)


@pytest.mark.parametrize("width", [0.5, 1.0, 2.0])
def test_bump_of_two_delta_rejected(width):
    delta, s = 0.025, 1.0
    c = ag.cylinder(3, s, 60.0, 0.02)
    f = np.exp(-(c.x / width) ** 2)
    f *= 2 * delta / _c2_size(c.x, f, s)
    c = c.with_nodes(c.x, c.u + f)
    i = int(np.argmin(np.abs(c.x)))
    score, _, _ = su.neck_score(c, 0.0, i, delta, s)
    assert score > delta


def test_pure_offset_counts_half():
    # the fitted radius absorbs half of a height-only perturbation
    c = ag.cylinder(3, 1.0, 60.0, 0.1)
    c = c.with_nodes(c.x, c.u + 0.05 * np.exp(-(c.x / 10) ** 2))
    i = int(np.argmin(np.abs(c.x)))
    score, fit, _ = su.neck_score(c, 0.0, i, 0.025, 1.0)
    assert score == pytest.approx(0.025 / 1.025, rel=1e-3)


def test_neck_window_too_close_to_end():
    c = ag.cylinder(3, 1.0, 10.0, 0.1)
    i = int(np.argmin(np.abs(c.x)))
    score, _, win = su.neck_score(c, 0.0, i, 0.025, 1.0)
    assert win is None and score == math.inf


def test_detect_necks_quiet_on_sphere():
    st_ = fl.initial_state(ag.sphere(3, 1.0, 0.05))
    assert su.detect_necks(st_, su.SurgeryParams()) == []


# ------------------------------------------------------------------ cap
def test_cap_invariants(cap):
    assert cap.check() == []
    lo, hi = cap.match_annulus
    assert hi > lo >= 2 * cap.R_tilde - 1e-9
    assert cap.entropy_certificate.value <= shrinker_entropy(2) + cap.epsilon
    assert cap.min_H > 0 and cap.alpha_bar > 0
    assert cap.profile.pole_ends[0]


def test_cap_check_reports_broken_invariants(cap):
    bad = su.CapModel(cap.profile.with_nodes(cap.profile.x, cap.profile.u * 1.01), cap.R_tilde,
                      cap.match_annulus, cap.entropy_certificate, -1.0, 0.0, cap.epsilon)
    msgs = bad.check()
    assert len(msgs) == 3


# ------------------------------------------------------------------ cut and paste
@pytest.fixture(scope="module")
def toy_event(cap):
    c = _long_capsule()
    st_ = fl.initial_state(c)
    params = su.SurgeryParams(delta=0.025)
    ev = su.do_surgery(st_, _cyl_neck(c), cap, params)
    return c, params, ev


def test_toy_surgery_checks(toy_event):
    c, params, ev = toy_event
    assert ev.valid, ev.checks
    assert ev.checks["locality"] and ev.checks["cap_closeness"]
    assert ev.checks["closeness_value"] <= ev.checks["delta_prime"]
    assert len(ev.post_curves) == 2
    assert all(p.closure == "closed" for p in ev.post_curves)
    assert ev.area_post < ev.area_pre


def test_toy_surgery_locality_bitwise(toy_event):
    c, params, ev = toy_event
    B = 5 * params.Gamma * ev.neck.radius
    far = c.nodes[c.x < -B - 1]
    left = min(ev.post_curves, key=lambda p: p.x.min())
    assert np.array_equal(left.nodes[: far.shape[0]], far)


def test_toy_surgery_does_not_mutate(toy_event, cap):
    c, params, ev = toy_event
    x0 = c.x.copy()
    su.do_surgery(fl.initial_state(c), _cyl_neck(c), cap, params)
    assert np.array_equal(c.x, x0)


def test_toy_surgery_deterministic(toy_event, cap):
    c, params, ev = toy_event
    ev2 = su.do_surgery(fl.initial_state(c), _cyl_neck(c), cap, params)
    for a, b in zip(ev.post_curves, ev2.post_curves):
        assert np.array_equal(a.nodes, b.nodes)


def test_toy_surgery_audit(toy_event):
    c, params, ev = toy_event
    audit = su.entropy_audit(ev, {"n_b_small": 5, "n_r_small": 4, "n_b_large": 5, "n_r_large": 4}, params)
    assert audit.volume_ratio_eta < 1
    assert audit.large_scale_max_increase <= 1e-6
    assert audit.small_scale_max_F < params.Pi(3)
    assert audit.verdict
    rec = audit.as_record()
    json.dumps(su._plain(rec))


def test_surgery_rejects_short_window(cap):
    c = ag.capsule(3, 1.0, 20.0, 0.25)
    with pytest.raises(su.SurgeryError):
        su.do_surgery(fl.initial_state(c), _cyl_neck(c), cap, su.SurgeryParams(delta=0.025))


def test_surgery_rejects_absent_neck(cap):
    c = _long_capsule()
    neck = su.NeckRegion(0.0, 5.0, (-200.0, 200.0), 0.0)
    with pytest.raises(su.SurgeryError):
        su.do_surgery(fl.initial_state(c), neck, cap, su.SurgeryParams(delta=0.025))


# ------------------------------------------------------------------ discard
def test_discard_by_min_H():
    small = ag.sphere(3, 0.5, 0.02)     # H = 6
    big = ag.sphere(3, 2.0, 0.05)       # H = 1.5
    kept, gone = su.discard_components([small, big], 2.5)
    assert kept == [big] and gone == [small]


# ------------------------------------------------------------------ controller
def test_sphere_needs_no_surgery():
    run = su.surgery_flow(ag.sphere(3, 1.0, 0.05), su.SurgeryParams(), fl.StepControl(regrid_every=10),
                          check_entropy=False)
    assert run.surgeries == []
    assert not run.final.components


def test_capsule_needs_no_surgery():
    run = su.surgery_flow(ag.capsule(3, 1.0, 2.0, 0.05), su.SurgeryParams(), fl.StepControl(regrid_every=10))
    assert run.surgeries == []
    assert run.info["initial_entropy"] < run.info["Pi"]


def test_initial_entropy_above_ceiling_rejected():
    with pytest.raises(su.SurgeryError):
        su.surgery_flow(ag.sphere(3, 1.0, 0.05), su.SurgeryParams(entropy_threshold=1.0))


def test_neither_mean_convex_nor_F_positive_rejected():
    # a sharp dimple makes H negative at its bottom
    c = ag.capsule(3, 2.0, 3.0, 0.01)
    c = c.with_nodes(c.x, c.u - 0.5 * np.exp(-(c.x / 0.1) ** 2) * (c.u > 0.5))
    assert ag.curvatures(c).H.min() < 0 and fl.f_quantity(c, 0.0).min() < 0
    with pytest.raises(su.SurgeryError, match="neither mean convex"):
        su.surgery_flow(c, su.SurgeryParams(), check_entropy=False)


def test_whole_surface_discarded_leaves_empty_final_state():
    # thin, dimpled, so non-convex with H above H_th everywhere and past H_trig at once
    c = ag.capsule(3, 0.06, 0.3, 0.002)
    c = c.with_nodes(c.x, c.u - 0.005 * np.exp(-(c.x / 0.03) ** 2) * (c.u > 0.03))
    k = ag.curvatures(c)
    assert k.lambda_sorted()[:, 0].min() < 0 and k.H.min() > 2.2
    run = su.surgery_flow(c, su.SurgeryParams(H_th=2.2), fl.StepControl(regrid_every=10), check_entropy=False)
    assert run.final.components == []
    assert run.events_of("discard") and not run.surgeries


def test_negative_path_reports_diagnostics(cap):
    params = su.SurgeryParams(H_th=2.2, H_neck=4.4, H_trig=8.8)
    with pytest.raises(su.SurgeryError) as info:
        su.surgery_flow(acc.compact_dumbbell(h=0.05), params, fl.StepControl(regrid_every=10), cap=cap,
                        check_entropy=False)
    err = info.value
    assert err.run is not None
    assert isinstance(err, su.NeckDetectionError) or err.event is not None


def test_event_log_written(tmp_path, toy_event):
    c, params, ev = toy_event
    run = fl.FlowRun([fl.initial_state(c)], [], fl.StepControl(), surgeries=[ev])
    out = su.write_event_log(run, tmp_path)
    summary = json.loads((tmp_path / "surgery_log.json").read_text())
    assert len(summary) == 1 if isinstance(summary, list) else summary
    assert (tmp_path / "event_000.json").exists() or any(tmp_path.glob("event_*"))
    assert out.exists()


# ------------------------------------------------------------------ properties
@settings(max_examples=10, deadline=None)
@given(s=st.floats(0.6, 1.6), delta=st.floats(0.01, 0.1))
def test_cylinder_neck_score_scale_free(s, delta):
    c = ag.cylinder(3, s, 12.0 * s / delta, 0.1 * s)
    i = int(np.argmin(np.abs(c.x)))
    score, fit, win = su.neck_score(c, 0.0, i, delta, s)
    assert win is not None and score < 1e-10 and fit == pytest.approx(s)


@settings(max_examples=10, deadline=None)
@given(center=st.floats(-3, 3), R=st.floats(0.1, 5))
def test_area_in_ball_bounded_by_total(center, R):
    c = ag.sphere(3, 1.0, 0.05)
    a = su.area_in_ball(c, center, R)
    assert 0 <= a <= su.area_in_ball(c, 0.0, 10.0) + 1e-12


def test_area_in_ball_sphere_total():
    c = ag.sphere(3, 1.0, 0.01)
    assert su.area_in_ball(c, 0.0, 2.0) == pytest.approx(2 * math.pi**2, rel=1e-4)


# ------------------------------------------------------------------ end to end
@pytest.fixture(scope="module")
def scenario():
    return acc.surgery_run()


@pytest.mark.slow
def test_scenario_surgeries_valid(scenario):
    assert len(scenario.surgeries) >= 1
    for ev in scenario.surgeries:
        assert ev.valid, ev.checks
        assert ev.checks["locality"]
        assert ev.area_post < ev.area_pre
        assert ev.audit.verdict


@pytest.mark.slow
def test_scenario_ends_extinct_or_discarded(scenario):
    assert not scenario.final.components
    assert scenario.events_of("discard") or scenario.events_of("extinction")


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="post-surgery curvature exceeds 1.2 H_neck on the cap side (ledgered)")
def test_scenario_post_curvature_bound(scenario):
    assert max(ev.max_H_ratio for ev in scenario.surgeries) <= 1.2


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="the lobes are discarded as non-convex high-curvature pieces (ledgered)")
def test_scenario_final_components_convex(scenario):
    assert not scenario.events_of("discard")
