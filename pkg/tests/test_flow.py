import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from entroflow import axigeom as ag
from entroflow import flow as fl
from entroflow.entropy import FParams
from entroflow.acceptance import compact_dumbbell, perturbed_shrinker


def _radius(c):
    xc = 0.5 * (c.x[0] + c.x[-1])
    return np.hypot(c.x - xc, c.u)


# ------------------------------------------------------------------ config
def test_step_control_validation():
    with pytest.raises(ValueError):
        fl.StepControl(cfl_factor=0.6)
    with pytest.raises(ValueError):
        fl.StepControl(order=3)
    with pytest.raises(ValueError):
        fl.StepControl.from_dict({"bogus": 1})
    assert fl.StepControl.from_dict({"dt_max": 0.5}).dt_max == 0.5


def test_stop_needs_a_criterion():
    with pytest.raises(ValueError):
        fl.Stop()


# ------------------------------------------------------------------ exact solutions
@pytest.mark.parametrize("n", [2, 3])
def test_sphere_radius_ode(n):
    T = 0.5 / (2 * n)
    run = fl.run_until(ag.sphere(n, 1.0, 0.02), fl.Stop(t_max=T), fl.StepControl(regrid_every=0))
    c = run.final.components[0]
    assert run.final.t == pytest.approx(T, abs=1e-14)
    assert np.max(np.abs(_radius(c) / math.sqrt(1 - 2 * n * T) - 1)) < 1e-3


def test_sphere_extinction_time():
    run = fl.run_until(ag.sphere(3, 1.0, 0.02), fl.Stop(extinction=True), fl.StepControl(regrid_every=10))
    assert fl.extinction_time(run) == pytest.approx(1 / 6, abs=2e-3)
    assert not run.final.components


def test_cylinder_radius_ode():
    n, T = 3, 0.1
    c0 = ag.cylinder(n, 1.0, 5.0, 0.05)
    run = fl.run_until(c0, fl.Stop(t_max=T), fl.StepControl(regrid_every=0))
    c = run.final.components[0]
    mid = np.abs(c.x) < 2.0
    want = math.sqrt(1 - 2 * (n - 1) * T)
    assert np.max(np.abs(c.u[mid] - want)) < 1e-4


def test_t_max_zero_returns_initial():
    c = ag.sphere(2, 1.0, 0.05)
    run = fl.run_until(c, fl.Stop(t_max=0.0))
    assert len(run.states) == 1 and run.final.components[0] is c


def test_t_max_before_start_rejected():
    with pytest.raises(ValueError):
        fl.run_until(ag.sphere(2, 1.0, 0.05), fl.Stop(t_max=0.1), t0=0.5)


def test_first_order_scheme_runs():
    run = fl.run_until(ag.sphere(2, 1.0, 0.05), fl.Stop(t_max=0.05), fl.StepControl(order=1, regrid_every=0))
    assert np.max(np.abs(_radius(run.final.components[0]) / math.sqrt(0.8) - 1)) < 1e-2


def test_richardson_beats_implicit_euler():
    errs = {}
    for order in (1, 2):
        run = fl.run_until(ag.sphere(2, 1.0, 0.05), fl.Stop(t_max=0.1),
                           fl.StepControl(order=order, regrid_every=0, dt_max=5e-3))
        errs[order] = np.max(np.abs(_radius(run.final.components[0]) - math.sqrt(0.6)))
    assert errs[2] < errs[1]


# ------------------------------------------------------------------ dumbbell events
def test_dumbbell_trigger_in_neck():
    c = compact_dumbbell(h=0.04)
    run = fl.run_until(c, fl.Stop(H_trig=50.0, extinction=True), fl.StepControl(regrid_every=10))
    assert run.trigger is not None
    assert run.trigger["H"] >= 50.0
    assert abs(run.trigger["axial"] - 0.5 * (c.x[0] + c.x[-1])) < 0.3
    assert run.events_of("trigger")


def test_exempt_component_ignored():
    c = ag.sphere(2, 1.0, 0.05)
    run = fl.run_until(c, fl.Stop(H_trig=1.0, t_max=0.01, exempt=(c.component_id,)))
    assert run.trigger is None and run.final.t == pytest.approx(0.01)


def test_event_times_strictly_ordered():
    run = fl.FlowRun([], [], fl.StepControl())
    run.log_event(0.1, "regrid")
    run.log_event(0.1, "trigger", H=1.0)
    assert run.events[-1].kinds() == ["regrid", "trigger"]
    with pytest.raises(fl.FlowError):
        run.log_event(0.05, "regrid")


def test_neckpinch_split_produces_two_closed_pieces():
    c = compact_dumbbell(h=0.04)
    run = fl.run_until(c, fl.Stop(pinch=True, extinction=True), fl.StepControl(regrid_every=10))
    ev = run.events_of("neckpinch_detected")
    assert ev
    pieces = run.final.components
    assert len(pieces) == 2
    assert all(p.closure == "closed" for p in pieces)
    assert pieces[0].x.max() <= pieces[1].x.min() + 1e-9


# ------------------------------------------------------------------ residuals
def test_residual_small_on_sphere():
    runs = [fl.residual_run(ag.sphere(2, 1.0, h), 0.01, fl.StepControl(regrid_every=0)) for h in (0.04, 0.02)]
    rep = fl.evolution_residual(runs, "H")
    assert rep.levels[1][1] < rep.levels[0][1]
    assert rep.measured_order is None


def test_residual_quantity_validated():
    run = fl.residual_run(ag.sphere(2, 1.0, 0.05), 0.0, fl.StepControl(regrid_every=0))
    with pytest.raises(ValueError):
        fl.residual_single(run, "bogus")


# ------------------------------------------------------------------ monotonicity
def test_huisken_static_shrinker_density_constant():
    # the shrinker sphere radius 2 (n = 2) at t = -1 -> F_{0, r + T - t} at the
    # matching scale stays equal to 4/e
    run = fl.run_until(ag.sphere(2, 2.0, 0.02), fl.Stop(t_max=0.3), fl.StepControl(regrid_every=0, snapshot_dt=0.1))
    ts, f = fl.huisken_series(run, 0.0, 0.0, 1.0 - 0.3, 0.3)
    assert np.allclose(f, 4 / math.e, atol=2e-4)


def test_huisken_increase_nonnegative_and_small():
    run = fl.run_until(ag.capsule(2, 1.0, 0.5, 0.05), fl.Stop(t_max=0.1),
                       fl.StepControl(regrid_every=0, snapshot_dt=0.02))
    inc = fl.huisken_monotonicity_check(run, 0.2, 0.1, 0.1)
    assert 0.0 <= inc <= 1e-6


def test_huisken_rejects_bad_scale():
    run = fl.run_until(ag.sphere(2, 1.0, 0.05), fl.Stop(t_max=0.0))
    with pytest.raises(ValueError):
        fl.huisken_monotonicity_check(run, 0.0, 0.0, 0.0)


def test_gaussian_density_sums_components():
    a = ag.sphere(2, 0.5, 0.02, center=-3.0)
    b = ag.sphere(2, 0.5, 0.02, center=3.0)
    st_ = fl.initial_state([a, b])
    p = FParams(0.0, 0.0, 2.0)
    assert fl.gaussian_density(st_, p) == pytest.approx(fl.gaussian_density(fl.initial_state(a), p)
                                                        + fl.gaussian_density(fl.initial_state(b), p))


# ------------------------------------------------------------------ pseudolocality
def test_pseudolocality_identical_curves_zero():
    a = ag.cylinder(2, 1.0, 20.0, 0.5)
    d = fl.pseudolocality_experiment(a, a, 3.0, [8.0], 0.05, digits=30)
    assert d == [0.0]


def test_pseudolocality_detects_mismatch():
    a = ag.cylinder(2, 1.0, 20.0, 0.5)
    b = a.with_nodes(a.x, a.u * 1.1)
    with pytest.raises(ag.CurveError):
        fl.pseudolocality_experiment(a, b, 3.0, [8.0], 0.05)


# ------------------------------------------------------------------ rescaled flow
def test_rescale_shrinker_sphere_is_stationary():
    n = 2
    c = ag.sphere(n, math.sqrt(2 * n), 0.05)
    run = fl.run_until(c, fl.Stop(t_max=0.6), fl.StepControl(regrid_every=0, snapshot_dt=0.1))
    rr = fl.rescale_run(run)
    assert np.allclose(rr.radius, math.sqrt(2 * n), rtol=1e-3)
    assert abs(rr.min_speed_margin) < 1e-2


def test_rescale_small_sphere_shrinks_large_expands():
    n = 2
    for R, sign in ((0.9 * math.sqrt(2 * n), -1), (1.1 * math.sqrt(2 * n), +1)):
        run = fl.run_until(ag.sphere(n, R, 0.05), fl.Stop(t_max=0.2), fl.StepControl(regrid_every=0, snapshot_dt=0.05))
        rr = fl.rescale_run(run)
        assert np.all(np.sign(np.diff(rr.radius)) == sign)


def test_rescale_sign_tracking_on_perturbed_shrinker():
    run = fl.run_until(perturbed_shrinker(2, 0.02, 0.05), fl.Stop(t_max=0.3),
                       fl.StepControl(regrid_every=10, snapshot_dt=0.05))
    rr = fl.rescale_run(run)
    assert rr.sign_asserted
    assert not rr.sign_violations


# ------------------------------------------------------------------ avoidance
def test_disjoint_spheres_stay_disjoint():
    a = ag.sphere(2, 1.0, 0.05, center=-1.6)
    b = ag.sphere(2, 0.8, 0.05, center=1.2)
    d0 = fl.profile_separation(a, b)
    run = fl.run_until([a, b], fl.Stop(t_max=0.1), fl.StepControl(regrid_every=0, snapshot_dt=0.02))
    seps = [fl.profile_separation(*s.components) for s in run.states if len(s.components) == 2]
    assert d0 > 0 and min(seps) > 0
    assert all(y >= x - 1e-9 for x, y in zip(seps, seps[1:]))


# ------------------------------------------------------------------ noncollapsing / lemma
def test_measure_alpha_requires_positive_F():
    c = ag.sphere(2, 3.0, 0.05)   # outside the shrinker: 2H - <x, nu> < 0
    with pytest.raises(ag.CurveError):
        fl.measure_alpha_D(c)


def test_lemma42_report_counts():
    c = perturbed_shrinker(2, 0.05, 0.05)
    alpha, D = fl.measure_alpha_D(c)
    assert 0 < alpha and D == pytest.approx(c.diameter())
    run = fl.run_until(c, fl.Stop(t_max=0.05), fl.StepControl(regrid_every=10, snapshot_every=5))
    rep = fl.lemma42_check(run, alpha, D)
    assert rep.checked > 0 and not rep.violations
    assert rep.threshold == pytest.approx(9 * 2 * D * D / alpha**2)


# ------------------------------------------------------------------ properties
@settings(max_examples=8, deadline=None)
@given(R=st.floats(0.5, 2.0), n=st.sampled_from([2, 3]))
def test_sphere_shrinks_at_ode_rate(R, n):
    T = 0.3 * R * R / (2 * n)
    run = fl.run_until(ag.sphere(n, R, R / 30), fl.Stop(t_max=T), fl.StepControl(regrid_every=0))
    want = math.sqrt(R * R - 2 * n * T)
    assert np.max(np.abs(_radius(run.final.components[0]) - want)) < 2e-3 * R


@settings(max_examples=6, deadline=None)
@given(shift=st.floats(-5, 5))
def test_flow_commutes_with_translation(shift):
    c = ag.capsule(2, 1.0, 0.5, 0.05)
    ctrl = fl.StepControl(regrid_every=0, dt_max=2e-3)
    a = fl.run_until(c, fl.Stop(t_max=0.02), ctrl).final.components[0]
    b = fl.run_until(c.translated(shift), fl.Stop(t_max=0.02), ctrl).final.components[0]
    assert np.allclose(b.x - shift, a.x, atol=1e-9) and np.allclose(b.u, a.u, atol=1e-9)


def test_max_H_nondecreasing_before_extinction_on_sphere():
    run = fl.run_until(ag.sphere(2, 1.0, 0.05), fl.Stop(t_max=0.2), fl.StepControl(regrid_every=0, snapshot_dt=0.02))
    H = [s.max_H for s in run.states]
    assert all(y >= x for x, y in zip(H, H[1:]))


def test_run_log_and_svg(tmp_path):
    run = fl.run_until(ag.sphere(2, 1.0, 0.05), fl.Stop(t_max=0.05), fl.StepControl(snapshot_dt=0.01))
    p = fl.write_run_log(run, tmp_path / "log.csv")
    lines = p.read_text().splitlines()
    assert len(lines) == len(run.states) + 1
    svg = fl.write_svg(run.final.components, tmp_path / "a.svg", title="sphere")
    assert svg.read_text().startswith("<svg")
