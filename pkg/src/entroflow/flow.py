"""Mean curvature flow of generating curves.

Nodes move by X_t = X_ss - (n-1)(x_s/u) nu, i.e. x_t = x_ss + (n-1) u_s x_s / u
and u_t = u_ss - (n-1) x_s^2 / u.  The second-derivative part is taken
implicitly on the current nonuniform grid, the rest explicitly.  Poles keep
u = 0 and move axially with n x_ss; open ends keep x fixed with u_s = 0.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.linalg.lapack import dgtsv as gtsv

from . import axigeom as ag
from .axigeom import CurveError, GeneratingCurve
from .entropy import CurveQuadrature, FParams, SearchConfig, entropy

log = logging.getLogger(__name__)


class FlowError(ArithmeticError):
    """Step failure; carries the last good state."""

    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


# ----------------------------------------------------------------------
# configuration and records
# ----------------------------------------------------------------------
@dataclass
class StepControl:
    dt_max: float = 1e-2
    cfl_factor: float = 0.4
    regrid_every: int = 20
    pinch_threshold: float | None = None
    h_max: float | None = None
    resolution: float = 0.1
    max_halvings: int = 20
    snapshot_dt: float | None = None
    snapshot_every: int | None = None
    extinction_fraction: float = 0.05
    track_F: bool = False
    order: int = 2

    def __post_init__(self):
        if not 0 < self.cfl_factor <= 0.5:
            raise ValueError(f"cfl_factor must lie in (0, 1/2], got {self.cfl_factor}")
        if self.pinch_threshold is not None and not self.pinch_threshold > 0:
            raise ValueError("pinch_threshold must be positive")
        if self.dt_max <= 0 or self.regrid_every < 0:
            raise ValueError("dt_max must be positive and regrid_every nonnegative")
        if self.order not in (1, 2):
            raise ValueError("order must be 1 (implicit Euler) or 2 (extrapolated)")

    @classmethod
    def from_dict(cls, d: dict | None) -> "StepControl":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown step control keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class FlowState:
    t: float
    components: list
    max_H: float = 0.0
    min_radius: float = 0.0
    min_F_quantity: float | None = None
    grid_id: int = 0
    step: int = 0

    def __post_init__(self):
        self._geom = None
        if self.components:
            self.refresh()

    @property
    def geom(self) -> list:
        if self._geom is None or len(self._geom) != len(self.components):
            self._geom = [ag.curvatures(c) for c in self.components]
        return self._geom

    def refresh(self, track_F: bool = False):
        self._geom = None
        hs, rs, fs = [], [], []
        for c, k in zip(self.components, self.geom):
            hs.append(float(k.H.max()))
            rs.append(profile_radius(c))
            if track_F:
                fs.append(float(np.min(f_quantity(c, self.t, k))))
        self.max_H = max(hs)
        self.min_radius = min(rs)
        self.min_F_quantity = min(fs) if fs else self.min_F_quantity
        return self


@dataclass
class FlowEvent:
    t: float
    kind: str
    info: dict = field(default_factory=dict)
    also: list = field(default_factory=list)

    def kinds(self) -> list[str]:
        return [self.kind] + [k for k, _ in self.also]


@dataclass
class FlowRun:
    states: list
    events: list
    step_control: StepControl
    time_kind: str = "t"
    pinch_threshold: float = 0.0
    trigger: dict | None = None
    info: dict = field(default_factory=dict)
    surgeries: list = field(default_factory=list)

    def log_event(self, t: float, kind: str, **info):
        if self.events and self.events[-1].t >= t:
            if self.events[-1].t == t:
                self.events[-1].also.append((kind, info))
                return
            raise FlowError(f"event time {t} precedes the last event at {self.events[-1].t}")
        self.events.append(FlowEvent(t, kind, info))

    def events_of(self, kind: str) -> list:
        return [e for e in self.events if kind in e.kinds()]

    @property
    def final(self) -> FlowState:
        return self.states[-1]

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])


@dataclass
class Stop:
    t_max: float | None = None
    extinction: bool = False
    H_trig: float | None = None
    pinch: bool = False          # stop right after the first neckpinch split
    min_radius: float | None = None
    exempt: tuple = ()           # component ids the H_trig test ignores

    def __post_init__(self):
        if self.t_max is None and not self.extinction and self.H_trig is None \
                and not self.pinch and self.min_radius is None:
            raise ValueError("a stop criterion needs t_max, extinction, H_trig, pinch or min_radius")


# ----------------------------------------------------------------------
# pointwise quantities
# ----------------------------------------------------------------------
def profile_radius(c: GeneratingCurve) -> float:
    """Smallest interior local minimum of u (a neck); the largest radius
    when the profile has no neck."""
    u = c.u
    lp, rp = c.pole_ends
    lo = 1 if lp else 0
    hi = u.size - 1 if rp else u.size
    inner = u[lo:hi]
    if inner.size >= 3:
        mid = inner[1:-1]
        mins = mid[(mid <= inner[:-2]) & (mid <= inner[2:]) & ((mid < inner[:-2]) | (mid < inner[2:]))]
        if mins.size:
            return float(mins.min())
    return float(u.max())


def f_quantity(c: GeneratingCurve, t: float, k: ag.Curvatures | None = None) -> np.ndarray:
    """(2 - 2t) H - <x, nu>."""
    k = ag.curvatures(c) if k is None else k
    return (2.0 - 2.0 * t) * k.H - ag.position_dot_normal(c, k)


# ----------------------------------------------------------------------
# the IMEX step (float64 or arbitrary-precision object arrays)
# ----------------------------------------------------------------------
class _Float:
    sqrt = staticmethod(np.sqrt)

    @staticmethod
    def solve2(sys_x, sys_u):
        # both tridiagonal systems in one LAPACK call (uncoupled blocks)
        lx, dx, ux, rx = sys_x
        lu, du, uu, ru = sys_u
        N = dx.size
        dl = np.concatenate([lx, [0.0], lu])
        d = np.concatenate([dx, du])
        dup = np.concatenate([ux, [0.0], uu])
        b = np.concatenate([rx, ru])
        _, _, _, out, info = gtsv(dl, d, dup, b, overwrite_dl=True, overwrite_d=True,
                                  overwrite_du=True, overwrite_b=True)
        if info != 0:
            raise np.linalg.LinAlgError(f"tridiagonal solve failed (info={info})")
        return out[:N], out[N:]


class _Mp:
    def __init__(self):
        import mpmath

        self.mp = mpmath
        self.sqrt = np.frompyfunc(mpmath.sqrt, 1, 1)

    @staticmethod
    def solve(lower, diag, upper, rhs):
        # Thomas algorithm; the system is diagonally dominant
        n = diag.size
        c = np.empty(n, dtype=object)
        d = np.empty(n, dtype=object)
        c[0] = upper[0] / diag[0] if n > 1 else 0
        d[0] = rhs[0] / diag[0]
        for i in range(1, n):
            m = diag[i] - lower[i - 1] * c[i - 1]
            if i < n - 1:
                c[i] = upper[i] / m
            d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / m
        out = np.empty(n, dtype=object)
        out[-1] = d[-1]
        for i in range(n - 2, -1, -1):
            out[i] = d[i] - c[i] * out[i + 1]
        return out

    def solve2(self, sys_x, sys_u):
        return self.solve(*sys_x), self.solve(*sys_u)


def imex_arrays(x, u, n: int, lp: bool, rp: bool, dt, be=_Float):
    """One semi-implicit step on raw node arrays."""
    N = x.size
    # ghosts: pole -> (x_1, -u_1); open end -> (2 x_0 - x_1, u_1)
    xe = np.empty(N + 2, dtype=x.dtype)
    xe[1:-1] = x
    xe[0] = x[1] if lp else 2 * x[0] - x[1]
    xe[-1] = x[-2] if rp else 2 * x[-1] - x[-2]
    ue = np.empty(N + 2, dtype=u.dtype)
    ue[1:-1] = u
    ue[0] = -u[1] if lp else u[1]
    ue[-1] = -u[-2] if rp else u[-2]
    dx, du = np.diff(xe), np.diff(ue)
    h = be.sqrt(dx * dx + du * du)
    h1, h2 = h[:-1], h[1:]
    s = h1 + h2
    # first derivatives (for the explicit terms)
    x1 = -h2 / (h1 * s) * xe[:-2] + (h2 - h1) / (h1 * h2) * xe[1:-1] + h1 / (h2 * s) * xe[2:]
    u1 = -h2 / (h1 * s) * ue[:-2] + (h2 - h1) / (h1 * h2) * ue[1:-1] + h1 / (h2 * s) * ue[2:]
    sp = be.sqrt(x1 * x1 + u1 * u1)
    xs, us = x1 / sp, u1 / sp
    a = 2 / (h1 * s)
    b = 2 / (h1 * h2)
    c = 2 / (h2 * s)
    lower = -dt * a[1:]
    upper = -dt * c[:-1]
    diag = 1 + dt * b
    # x system
    lx, dx_, ux_ = lower.copy(), diag.copy(), upper.copy()
    rx = x.copy()
    inner = slice(1, N - 1)
    rx[inner] = x[inner] + dt * (n - 1) * us[inner] * xs[inner] / u[inner]
    # u system
    lu, du_, uu_ = lower.copy(), diag.copy(), upper.copy()
    ru = u.copy()
    ru[inner] = u[inner] - dt * (n - 1) * xs[inner] ** 2 / u[inner]
    for end, pole in ((0, lp), (N - 1, rp)):
        hh = h1[end] if end == 0 else h2[end]
        k = 2 / (hh * hh)
        if pole:
            # x: n x_ss with mirror ghost; u pinned at zero
            dx_[end] = 1 + dt * n * k
            if end == 0:
                ux_[0] = -dt * n * k
                uu_[0] = 0 * uu_[0]
            else:
                lx[-1] = -dt * n * k
                lu[-1] = 0 * lu[-1]
            rx[end] = x[end]
            du_[end] = 1 + 0 * du_[end]
            ru[end] = 0 * u[end]
        else:
            # x fixed; u Neumann with the cylinder reaction
            dx_[end] = 1 + 0 * dx_[end]
            if end == 0:
                ux_[0] = 0 * ux_[0]
                uu_[0] = -dt * k
            else:
                lx[-1] = 0 * lx[-1]
                lu[-1] = -dt * k
            du_[end] = 1 + dt * k
            rx[end] = x[end]
            ru[end] = u[end] - dt * (n - 1) / u[end]
    return be.solve2((lx, dx_, ux_, rx), (lu, du_, uu_, ru))


def _substep(x, u, n, lp, rp, dt):
    xn, un = imex_arrays(x, u, n, lp, rp, dt)
    if lp:
        un[0] = 0.0
    if rp:
        un[-1] = 0.0
    return xn, un


def _check_step(c: GeneratingCurve, xn, un):
    lp, rp = c.pole_ends
    if not (np.all(np.isfinite(xn)) and np.all(np.isfinite(un))):
        raise FloatingPointError("non-finite node after step")
    inner = un[1:-1]
    if np.any(inner <= 0) or (not lp and un[0] <= 0) or (not rp and un[-1] <= 0):
        raise FloatingPointError("radius crossed the axis")
    h_old = c.chords()
    h_new = np.hypot(np.diff(xn), np.diff(un))
    if np.any(h_new < 0.2 * h_old) or np.any(h_new > 5.0 * h_old):
        raise FloatingPointError("node spacing collapsed")
    move = np.hypot(xn - c.x, un - c.u)
    hl = np.minimum(np.concatenate([[np.inf], h_old]), np.concatenate([h_old, [np.inf]]))
    if np.any(move > 0.5 * hl):
        raise FloatingPointError("node moved past its neighbour")


def _advance(c: GeneratingCurve, dt: float, order: int) -> GeneratingCurve:
    lp, rp = c.pole_ends
    n = c.n
    xf, uf = _substep(c.x, c.u, n, lp, rp, dt)
    if order == 1:
        xn, un = xf, uf
    else:
        xh, uh = _substep(c.x, c.u, n, lp, rp, 0.5 * dt)
        xh, uh = _substep(xh, uh, n, lp, rp, 0.5 * dt)
        # Richardson: the implicit-Euler error is O(dt), so 2 half - full is O(dt^2)
        xn = 2.0 * xh - xf
        un = 2.0 * uh - uf
    _check_step(c, xn, un)
    chart = "graph" if (c.chart == "graph" and np.all(np.diff(xn) > 0)) else "parametric"
    return c.with_nodes(xn, un, chart=chart)


def stable_dt(components, ctrl: StepControl, geom=None) -> float:
    if geom is None:
        geom = [ag.curvatures(c) for c in components]
    h = min(float(c.chords().min()) for c in components)
    A2 = max(float(k.norm_A_sq.max()) for k in geom)
    return min(ctrl.dt_max, ctrl.cfl_factor * h * h / (1.0 + A2 * h * h))


def step(state: FlowState, ctrl: StepControl, dt: float | None = None) -> FlowState:
    """Advance every component by one common time step (halving on failure)."""
    thr = ctrl.pinch_threshold
    if thr is not None and state.min_radius <= thr:
        raise FlowError(f"component pinched (min radius {state.min_radius:.3e})", state)
    dt = stable_dt(state.components, ctrl, state.geom) if dt is None else dt
    for _ in range(ctrl.max_halvings + 1):
        try:
            comps = [_advance(c, dt, ctrl.order) for c in state.components]
            break
        except (FloatingPointError, CurveError, np.linalg.LinAlgError) as err:
            reason = err
            dt *= 0.5
    else:
        raise FlowError(f"step failed after {ctrl.max_halvings} halvings: {reason}", state)
    new = FlowState(state.t + dt, [], grid_id=state.grid_id, step=state.step + 1)
    new.components = comps
    return new.refresh(ctrl.track_F)


def regrid(c: GeneratingCurve, ctrl: StepControl, h_ref: float) -> GeneratingCurve:
    h_max = ctrl.h_max if ctrl.h_max is not None else h_ref
    out = ag.resample_adaptive(c, h_max, resolution=ctrl.resolution)
    if c.chart == "graph" and not np.all(np.diff(out.x) > 0):
        out = replace(out, chart="parametric")
    return out


# ----------------------------------------------------------------------
# topology: neckpinch split and extinction
# ----------------------------------------------------------------------
def _sphere_close(x, u, side: str, h: float):
    """Close a cut end with the sphere tangent to the profile there.

    side 'right' closes the last node, 'left' the first."""
    if side == "left":
        xr, ur = _sphere_close(-x[::-1], u[::-1], "right", h)
        return -xr[::-1], ur[::-1]
    xe, ue = x[-1], u[-1]
    tx, tu = x[-1] - x[-2], u[-1] - u[-2]
    norm = math.hypot(tx, tu)
    tx, tu = tx / norm, tu / norm
    if tx <= 0.05:
        # the profile turns back; fall back to a vertical tangent
        tx, tu = 1.0, 0.0
    rho = ue / tx
    xc = xe + ue * tu / tx
    th0 = math.atan2(ue, xe - xc)
    m = max(int(math.ceil(rho * th0 / h)), 3)
    th = np.linspace(th0, 0.0, m + 1)[1:]
    xa = xc + rho * np.cos(th)
    ua = rho * np.sin(th)
    ua[-1] = 0.0
    return np.concatenate([x, xa]), np.concatenate([u, ua])


def split_at_pinch(c: GeneratingCurve, i: int, next_id: int, keep_ratio: float = 3.0):
    """Cut the profile at node i, drop the nodes with u < keep_ratio u_i
    around it and close both cut ends with tangent spheres."""
    u = c.u
    ui = u[i]
    lo = i
    while lo > 0 and u[lo] < keep_ratio * ui:
        lo -= 1
    hi = i
    while hi < u.size - 1 and u[hi] < keep_ratio * ui:
        hi += 1
    h = float(np.median(c.chords()))
    out = []
    lp, rp = c.pole_ends
    if lo >= 2:
        xl, ul = _sphere_close(c.x[:lo + 1], u[:lo + 1], "right", min(h, 0.25 * ui * keep_ratio))
        closure = "closed" if lp else "open-left"
        out.append((xl, ul, closure))
    if hi <= u.size - 3:
        xr, ur = _sphere_close(c.x[hi:], u[hi:], "left", min(h, 0.25 * ui * keep_ratio))
        closure = "closed" if rp else "open-right"
        out.append((xr, ur, closure))
    comps = []
    for k, (xx, uu, cl) in enumerate(out):
        if cl == "open-left":
            g = _capped_from_right_pole(c.n, xx, uu, next_id + k)
        elif cl == "open-right":
            g = GeneratingCurve(c.n, xx, uu, closure="capped", component_id=next_id + k)
        else:
            g = GeneratingCurve(c.n, xx, uu, closure="closed", component_id=next_id + k)
        comps.append(g)
    return comps


def _capped_from_right_pole(n, xx, uu, cid):
    """A piece with its open end on the left and the pole on the right.

    Capped curves store the pole first, so the nodes are reversed; x keeps
    its sign (the curve is not reflected)."""
    return GeneratingCurve(n, xx[::-1].copy(), uu[::-1].copy(), closure="capped", component_id=cid)


def detect_pinch(c: GeneratingCurve, threshold: float, factor: float = 10.0, k=None):
    """Index of a pinching neck node or None."""
    u = c.u
    lp, rp = c.pole_ends
    if u[3:-3].size == 0 or u[3:-3].min() >= threshold:
        return None
    k = ag.curvatures(c) if k is None else k
    med = float(np.median(np.abs(k.H)))
    cand = np.arange(1 if lp else 0, u.size - (1 if rp else 0))
    cand = cand[(u[cand] < threshold) & (k.H[cand] > factor * med)]
    if cand.size == 0:
        return None
    # a neck: interior minimum away from the poles
    i = int(cand[np.argmin(u[cand])])
    if (lp and i <= 2) or (rp and i >= u.size - 3):
        return None
    return i


def _extinct(c: GeneratingCurve, size0: float, frac: float) -> float | None:
    """Remaining lifetime if the component is small enough to be declared
    extinct, else None."""
    R = float(c.u.max())
    if R > frac * size0 and c.size >= 9:
        return None
    if c.closure == "closed":
        return R * R / (2 * c.n)
    return R * R / (2 * (c.n - 1))


def profile_separation(a: GeneratingCurve, b: GeneratingCurve) -> float:
    from scipy.spatial import cKDTree

    d, _ = cKDTree(a.nodes).query(b.nodes)
    return float(d.min())


# ----------------------------------------------------------------------
# driver
# ----------------------------------------------------------------------
def initial_state(curve_or_state, track_F: bool = False) -> FlowState:
    if isinstance(curve_or_state, FlowState):
        return curve_or_state
    if isinstance(curve_or_state, GeneratingCurve):
        comps = [curve_or_state]
    else:
        comps = list(curve_or_state)
    st = FlowState(0.0, [], 0.0, 0.0)
    st.components = comps
    st.refresh(track_F)
    return st


def run_until(curve, stop: Stop | dict, ctrl: StepControl | None = None,
              on_step: Callable | None = None, t0: float | None = None) -> FlowRun:
    """Evolve with event logging until the first satisfied stop criterion."""
    ctrl = StepControl() if ctrl is None else ctrl
    stop = stop if isinstance(stop, Stop) else Stop(**stop)
    state = initial_state(curve, ctrl.track_F)
    if t0 is not None:
        state.t = t0
    if stop.t_max is not None and stop.t_max < state.t:
        raise ValueError("t_max precedes the start time")
    for c in state.components:
        if c.closure != "closed" and stop.t_max is None and stop.H_trig is None \
                and not stop.pinch and stop.min_radius is None:
            raise ValueError("no stop criterion")
    thr = ctrl.pinch_threshold
    if thr is None:
        thr = 1e-2 * state.min_radius
    h_ref = float(np.median(np.concatenate([c.chords() for c in state.components])))
    size0 = max(float(c.u.max()) for c in state.components)
    run = FlowRun([state], [], ctrl, pinch_threshold=thr)
    next_id = max(c.component_id for c in state.components) + 1
    next_snap = None if ctrl.snapshot_dt is None else state.t + ctrl.snapshot_dt
    nsteps = 0

    def trig_check(st):
        if stop.H_trig is None or st.max_H < stop.H_trig:
            return False
        for ci, (c, k) in enumerate(zip(st.components, st.geom)):
            if c.component_id in stop.exempt:
                continue
            H = k.H
            j = int(np.argmax(H))
            if H[j] >= stop.H_trig:
                run.trigger = {"component": ci, "node": j, "axial": float(c.x[j]),
                               "radius": float(c.u[j]), "H": float(H[j])}
                run.log_event(st.t, "trigger", **run.trigger)
                return True
        return False

    if trig_check(state):
        return run
    if stop.t_max is not None and state.t >= stop.t_max:
        return run
    while True:
        dt = stable_dt(state.components, ctrl, state.geom)
        limit = [] if stop.t_max is None else [stop.t_max - state.t]
        if next_snap is not None:
            limit.append(next_snap - state.t)
        if limit:
            dt = min(dt, max(min(limit), 1e-300))
        cfg = replace(ctrl, pinch_threshold=None)
        try:
            new = step(state, cfg, dt)
        except FlowError as err:
            err.state = state
            raise
        nsteps += 1
        state = new
        # neckpinch
        comps, changed = [], False
        for c, k in zip(state.components, state.geom):
            i = detect_pinch(c, thr, k=k)
            if i is None:
                comps.append(c)
                continue
            pieces = split_at_pinch(c, i, next_id)
            next_id += len(pieces)
            run.log_event(state.t, "neckpinch_detected", component=c.component_id, axial=float(c.x[i]),
                          radius=float(c.u[i]), pieces=[p.component_id for p in pieces])
            comps.extend(pieces)
            changed = True
        # extinction
        alive = []
        for c in comps:
            rest = _extinct(c, size0, ctrl.extinction_fraction)
            if rest is None:
                alive.append(c)
            else:
                run.log_event(state.t, "extinction", component=c.component_id,
                              t_extinct=state.t + rest)
                changed = True
        if changed:
            state = FlowState(state.t, alive, grid_id=state.grid_id + 1, step=state.step) if alive else \
                FlowState(state.t, [], 0.0, 0.0, grid_id=state.grid_id + 1, step=state.step)
            if alive:
                state = _regrid_state(state, ctrl, h_ref, run, log_it=False)
        elif ctrl.regrid_every and nsteps % ctrl.regrid_every == 0:
            state = _regrid_state(state, ctrl, h_ref, run)
        if on_step is not None:
            on_step(state)
        snap = False
        if next_snap is not None and state.t >= next_snap - 1e-15:
            snap = True
            next_snap += ctrl.snapshot_dt
        if ctrl.snapshot_every and nsteps % ctrl.snapshot_every == 0:
            snap = True
        if not state.components:
            run.states.append(state)
            return run
        if stop.t_max is not None and state.t >= stop.t_max - 1e-15:
            run.states.append(state)
            return run
        if trig_check(state):
            run.states.append(state)
            return run
        if (stop.pinch and changed and run.events_of("neckpinch_detected")) or \
                (stop.min_radius is not None and state.min_radius < stop.min_radius):
            run.states.append(state)
            return run
        if snap or changed:
            run.states.append(state)


def _regrid_state(state, ctrl, h_ref, run, log_it=True):
    comps = [regrid(c, ctrl, h_ref) for c in state.components]
    if log_it:
        run.log_event(state.t, "regrid", nodes=[c.size for c in comps])
    st = FlowState(state.t, comps, grid_id=state.grid_id + 1, step=state.step)
    return st.refresh(ctrl.track_F)


def extinction_time(run: FlowRun) -> float | None:
    ev = run.events_of("extinction")
    if not ev:
        return None
    times = []
    for e in ev:
        if e.kind == "extinction":
            times.append(e.info["t_extinct"])
        times += [i["t_extinct"] for k, i in e.also if k == "extinction"]
    return max(times)


# ----------------------------------------------------------------------
# evolution equations
# ----------------------------------------------------------------------
@dataclass
class EvolutionResidualReport:
    quantity: str
    residual_Linf: float
    grid_h: float
    dt: float
    measured_order: float | None = None
    levels: list = field(default_factory=list)


QUANTITIES = ("H", "normAsq", "F_quantity")


def _quantity(c: GeneratingCurve, t: float, quantity: str):
    k = ag.curvatures(c)
    if quantity == "H":
        return k.H, k
    if quantity == "normAsq":
        return k.norm_A_sq, k
    if quantity == "F_quantity":
        return f_quantity(c, t, k), k
    raise ValueError(f"unknown quantity {quantity!r}")


def _matched_triple(run: FlowRun):
    st = run.states
    for j in range(len(st) - 2, 0, -1):
        a, b, c = st[j - 1], st[j], st[j + 1]
        if a.grid_id == b.grid_id == c.grid_id and \
                len(a.components) == len(b.components) == len(c.components) and \
                all(p.size == q.size == r.size for p, q, r in zip(a.components, b.components, c.components)):
            return a, b, c
    raise ValueError("run has no three consecutive snapshots at matched nodes")


def residual_single(run: FlowRun, quantity: str, pole_exclusion: float = 0.1) -> EvolutionResidualReport:
    a, b, c = _matched_triple(run)
    dt1, dt2 = b.t - a.t, c.t - b.t
    worst = 0.0
    for ca, cb, cc in zip(a.components, b.components, c.components):
        qa, _ = _quantity(ca, a.t, quantity)
        qb, kb = _quantity(cb, b.t, quantity)
        qc, _ = _quantity(cc, c.t, quantity)
        w = dt1 / (dt2 * (dt1 + dt2))
        v = dt2 / (dt1 * (dt1 + dt2))
        z = (dt2 - dt1) / (dt1 * dt2)
        Dq = w * qc - v * qa + z * qb
        vx = w * cc.x - v * ca.x + z * cb.x
        vu = w * cc.u - v * ca.u + z * cb.u
        vT = vx * kb.xs + vu * kb.us
        qs, _ = ag.arc_derivatives(cb, qb)
        lap = ag.laplace_beltrami(cb, qb)
        if quantity == "normAsq":
            rhs = lap - 2 * ag.grad_A_sq(cb) + 2 * kb.norm_A_sq**2
        else:
            rhs = lap + kb.norm_A_sq * qb
        res = Dq - vT * qs - rhs
        # the nested three-point stencils lose consistency at the axis
        # crossing; a fixed arclength neighbourhood of each pole (same on
        # every refinement level) is left out of the norm
        keep = np.ones(res.size, bool)
        if pole_exclusion > 0:
            sarc = cb.param()
            lp, rp = cb.pole_ends
            if lp:
                keep &= sarc > pole_exclusion
            if rp:
                keep &= sarc < sarc[-1] - pole_exclusion
        worst = max(worst, float(np.max(np.abs(res[keep]))))
    h = float(np.median(np.concatenate([x.chords() for x in b.components])))
    return EvolutionResidualReport(quantity, worst, h, 0.5 * (dt1 + dt2))


def evolution_residual(runs, quantity: str, pole_exclusion: float = 0.1) -> EvolutionResidualReport:
    """Residual of the evolution equation on the last matched snapshot triple;
    with several runs (refinements) also the observed convergence order."""
    if quantity not in QUANTITIES:
        raise ValueError(f"unknown quantity {quantity!r}")
    if isinstance(runs, FlowRun):
        return residual_single(runs, quantity, pole_exclusion)
    reps = [residual_single(r, quantity, pole_exclusion) for r in runs]
    reps.sort(key=lambda r: -r.grid_h)
    out = replace(reps[-1], levels=[(r.grid_h, r.residual_Linf) for r in reps])
    if len(reps) >= 3:
        h = np.log([r.grid_h for r in reps])
        e = np.log([max(r.residual_Linf, 1e-300) for r in reps])
        out.measured_order = float(np.polyfit(h, e, 1)[0])
    return out


def residual_run(curve: GeneratingCurve, t_end: float, ctrl: StepControl, extra_steps: int = 2) -> FlowRun:
    """Flow to t_end with regridding, then take a few unregridded steps
    recorded as consecutive snapshots."""
    run = run_until(curve, Stop(t_max=t_end), ctrl) if t_end > 0 else FlowRun([initial_state(curve)], [], ctrl)
    st = run.final
    dt = stable_dt(st.components, ctrl)
    snaps = [st]
    for _ in range(extra_steps):
        st = step(st, ctrl, dt)
        snaps.append(st)
    return FlowRun(snaps, list(run.events), ctrl)


# ----------------------------------------------------------------------
# monotonicity
# ----------------------------------------------------------------------
def gaussian_density(state: FlowState, p: FParams, rtol: float = 1e-10) -> float:
    return float(sum(CurveQuadrature(c).evaluate(p, rtol=rtol)[0] for c in state.components))


def huisken_series(run: FlowRun, b: float, rho0: float, r: float, T: float, rtol: float = 1e-10):
    ts, fs = [], []
    for st in run.states:
        if st.t > T + 1e-15 or not st.components:
            continue
        ts.append(st.t)
        fs.append(gaussian_density(st, FParams(b, rho0, r + (T - st.t)), rtol))
    return np.array(ts), np.array(fs)


def huisken_monotonicity_check(run: FlowRun, x0, r: float, T: float, rtol: float = 1e-10) -> float:
    """Largest forward increase of t -> F_{x0, r + T - t}(M_t) over the snapshots."""
    if not r > 0:
        raise ValueError("r must be positive")
    b, rho0 = (x0, 0.0) if np.isscalar(x0) else (float(x0[0]), float(x0[1]))
    _, f = huisken_series(run, b, rho0, r, T, rtol)
    if f.size < 2:
        return 0.0
    return float(np.max(f - np.minimum.accumulate(f)))


def entropy_series(run: FlowRun, search_cfg: SearchConfig | dict | None = None):
    """Entropy of every snapshot (single-component states), warm-started."""
    cfg = search_cfg if isinstance(search_cfg, SearchConfig) else SearchConfig.from_dict(search_cfg)
    vals, prev = [], None
    for st in run.states:
        if len(st.components) != 1:
            vals.append(math.nan)
            continue
        c = replace(cfg, warm_start=None) if prev is None else replace(cfg, warm_start=prev)
        res = entropy(st.components[0], c)
        prev = res.argmax
        vals.append(res.value)
    return np.array(vals)


# ----------------------------------------------------------------------
# pseudolocality
# ----------------------------------------------------------------------
def _graph_derivs(x, u):
    """u_x and u_xx on a nonuniform x-grid (interior nodes)."""
    h1 = x[1:-1] - x[:-2]
    h2 = x[2:] - x[1:-1]
    s = h1 + h2
    d1 = -h2 / (h1 * s) * u[:-2] + (h2 - h1) / (h1 * h2) * u[1:-1] + h1 / (h2 * s) * u[2:]
    d2 = 2 * (u[:-2] / (h1 * s) - u[1:-1] / (h1 * h2) + u[2:] / (h2 * s))
    return d1, d2


def c2_graph_distance(xa, ua, xb, ub, R: float):
    """C^2 distance of two node-matched graphs over the part inside B(0, R),
    with a first-order correction for the axial offset of matched nodes."""
    a1, a2 = _graph_derivs(xa, ua)
    b1, b2 = _graph_derivs(xb, ub)
    xi, ui = xa[1:-1], ua[1:-1]
    inside = np.array([float(p * p + q * q) <= R * R for p, q in zip(xi, ui)])
    shift = xb[1:-1] - xi
    d0 = (ub[1:-1] - ui) - a1 * shift
    d1 = (b1 - a1) - a2 * shift
    d2 = b2 - a2
    tot = np.abs(d0) + np.abs(d1) + np.abs(d2)
    return max(tot[inside]) if inside.any() else 0


def pseudolocality_experiment(curve_a: GeneratingCurve, curve_b, R: float, R_prime_list: Sequence[float],
                              T: float, ctrl: StepControl | None = None, dt: float | None = None,
                              digits: int | None = None) -> list[float]:
    """Max over t <= T of the C^2 discrepancy in B(0, R) between the flows of
    two curves that agree on B(0, R').

    ``curve_b`` is a curve or a callable R' -> curve.  Both flows use the same
    step sequence without regridding so nodes in the ball stay matched.  The
    true discrepancies are far below double precision, so the arithmetic is
    carried out with ``digits`` significant digits (mpmath)."""
    import mpmath

    ctrl = StepControl() if ctrl is None else ctrl
    if dt is None:
        dt = min(ctrl.dt_max, T / 20)
    nsteps = int(math.ceil(T / dt - 1e-12))
    dt = T / nsteps
    out = []
    for Rp in R_prime_list:
        cb = curve_b(Rp) if callable(curve_b) else curve_b
        ia, ib = _matched_ball_nodes(curve_a, cb, Rp)
        h = float(np.median(curve_a.chords()))
        if digits is None:
            # influence decays roughly geometrically per node
            q = dt / (h * h + 2 * dt)
            dps = int(40 + (Rp - R) / h * math.log10(1 / q) * 1.2 + 30)
        else:
            dps = digits
        be = _Mp()
        with mpmath.workdps(dps):
            A = [np.array([mpmath.mpf(float(v)) for v in arr], dtype=object) for arr in (curve_a.x, curve_a.u)]
            B = [np.array([mpmath.mpf(float(v)) for v in arr], dtype=object) for arr in (cb.x, cb.u)]
            worst = mpmath.mpf(0)
            dtm = mpmath.mpf(dt)
            for _ in range(nsteps):
                A = list(imex_arrays(A[0], A[1], curve_a.n, *curve_a.pole_ends, dtm, be))
                B = list(imex_arrays(B[0], B[1], cb.n, *cb.pole_ends, dtm, be))
                if curve_a.pole_ends[0]:
                    A[1][0] = mpmath.mpf(0)
                if curve_a.pole_ends[1]:
                    A[1][-1] = mpmath.mpf(0)
                if cb.pole_ends[0]:
                    B[1][0] = mpmath.mpf(0)
                if cb.pole_ends[1]:
                    B[1][-1] = mpmath.mpf(0)
                d = c2_graph_distance(A[0][ia], A[1][ia], B[0][ib], B[1][ib], R)
                worst = max(worst, d)
            out.append(float(worst))
        log.info("pseudolocality R'=%g: %.3e (dps %d)", Rp, out[-1], dps)
    return out


def _matched_ball_nodes(a: GeneratingCurve, b: GeneratingCurve, Rp: float):
    """Index ranges of nodes of a and b that coincide on B(0, R')."""
    ina = np.flatnonzero(a.x**2 + a.u**2 <= Rp * Rp)
    inb = np.flatnonzero(b.x**2 + b.u**2 <= Rp * Rp)
    if ina.size != inb.size or ina.size < 5:
        raise CurveError(f"curves do not share their nodes on B(0, {Rp})")
    if np.max(np.abs(a.x[ina] - b.x[inb])) > 1e-12 or np.max(np.abs(a.u[ina] - b.u[inb])) > 1e-12:
        raise CurveError(f"curves differ on B(0, {Rp})")
    # contiguous index windows with one extra node for the stencils
    sa = slice(max(ina[0] - 1, 0), ina[-1] + 2)
    sb = slice(max(inb[0] - 1, 0), inb[-1] + 2)
    if sa.stop - sa.start != sb.stop - sb.start:
        raise CurveError("matched windows differ in length")
    return sa, sb


# ----------------------------------------------------------------------
# rescaled flow and the F-quantity
# ----------------------------------------------------------------------
@dataclass
class RescaledRun:
    tau: np.ndarray
    states: list
    radius: np.ndarray
    min_speed_margin: float
    sign_violations: list
    sign_asserted: bool


def rescale_run(run: FlowRun) -> RescaledRun:
    """x~ = x / sqrt(-s), tau = -log(-s) with s = t - 1."""
    taus, states, rad = [], [], []
    first = run.states[0]
    assert_sign = all(np.all(f_quantity(c, first.t) > 0) for c in first.components)
    worst, viol = -math.inf, []
    for st in run.states:
        s = st.t - 1.0
        if s >= 0 or not st.components:
            continue
        lam = 1.0 / math.sqrt(-s)
        comps = [c.scaled(lam) for c in st.components]
        taus.append(-math.log(-s))
        states.append(comps)
        rad.append(max(float(np.max(np.hypot(c.x - 0.5 * (c.x[0] + c.x[-1]), c.u))) for c in comps))
        for c in comps:
            k = ag.curvatures(c)
            # normal speed of the rescaled flow: -(H - <x, nu>/2)
            v = -(k.H - 0.5 * ag.position_dot_normal(c, k))
            worst = max(worst, float(v.max()))
            if assert_sign and np.any(v >= 0):
                viol.append((float(st.t), int(np.argmax(v)), float(v.max())))
    return RescaledRun(np.array(taus), states, np.array(rad), worst, viol, assert_sign)


@dataclass
class Lemma42Report:
    alpha: float
    D: float
    threshold: float
    checked: int
    above: int
    violations: list


def measure_alpha_D(curve: GeneratingCurve, t: float = 0.0):
    """F-noncollapsing constant of the initial slice and its diameter."""
    F = f_quantity(curve, t)
    if np.any(F <= 0):
        raise CurveError("initial slice does not satisfy 2H - <x, nu> > 0")
    rep = ag.noncollapse_check(curve, weight=F)
    return float(rep.alpha_interior), curve.diameter()


def lemma42_check(run: FlowRun, alpha: float, D: float) -> Lemma42Report:
    """Every node with |A|^2 > 9 n D^2 / alpha^2 must have H > D."""
    viol, checked, above = [], 0, 0
    thr = None
    for st in run.states:
        for c in st.components:
            k = ag.curvatures(c)
            thr = 9 * c.n * D * D / (alpha * alpha)
            hot = k.norm_A_sq > thr
            checked += c.size
            above += int(hot.sum())
            bad = np.flatnonzero(hot & ~(k.H > D))
            viol += [(float(st.t), c.component_id, int(i)) for i in bad]
    return Lemma42Report(alpha, D, float(thr) if thr is not None else math.nan, checked, above, viol)


# ----------------------------------------------------------------------
# output
# ----------------------------------------------------------------------
def write_run_log(run: FlowRun, path, entropies: Sequence[float] | None = None) -> Path:
    path = Path(path)
    ev_at = {}
    for e in run.events:
        ev_at.setdefault(e.t, []).extend(e.kinds())
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "max_H", "min_radius", "entropy", "events"])
        last = -math.inf
        for i, st in enumerate(run.states):
            evs = [k for t, ks in ev_at.items() if last < t <= st.t for k in ks]
            last = st.t
            ent = "" if entropies is None or not np.isfinite(entropies[i]) else f"{entropies[i]:.17g}"
            w.writerow([f"{st.t:.17g}", f"{st.max_H:.17g}", f"{st.min_radius:.17g}", ent, ";".join(evs)])
    return path


def write_svg(curves: Sequence[GeneratingCurve], path, width: int = 800, title: str = "") -> Path:
    """Profiles and their mirror images as polylines."""
    xs = np.concatenate([c.x for c in curves]) if curves else np.zeros(1)
    us = np.concatenate([c.u for c in curves]) if curves else np.ones(1)
    x0, x1 = float(xs.min()), float(xs.max())
    umax = float(max(us.max(), 1e-12))
    span = max(x1 - x0, 1e-12)
    pad = 10
    sc = (width - 2 * pad) / span
    height = int(2 * umax * sc + 2 * pad)
    if height > 4 * width:
        sc = (4 * width - 2 * pad) / (2 * umax)
        height = 4 * width
    mid = height / 2

    def pts(x, u):
        return " ".join(f"{pad + (a - x0) * sc:.3f},{mid - b * sc:.3f}" for a, b in zip(x, u))

    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">']
    if title:
        lines.append(f"<title>{title}</title>")
    lines.append(f'<line x1="0" y1="{mid:.3f}" x2="{width}" y2="{mid:.3f}" stroke="#bbb" stroke-width="0.5"/>')
    for c in curves:
        for sgn in (1, -1):
            lines.append(f'<polyline fill="none" stroke="#1f4e79" stroke-width="1" points="{pts(c.x, sgn * c.u)}"/>')
    lines.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path
