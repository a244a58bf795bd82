"""Neck detection, the low-entropy cap, cut-and-paste surgery on profiles,
component discard, the surgery controller and the per-surgery entropy
audit.

Conventions: a neck is described on the axial line by its centre p and
radius s.  Every length in the checks below is measured in units of s.
Surgery removes the slab |x - p| < Gamma s, puts a cap tip at p -+ Gamma s
on either side and glues each cap to the untouched neck over the annulus
[2 R~, 3 R~] (cap units), where the cap is an exact cylinder."""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import axigeom as ag
from . import flow as fl
from .axigeom import CurveError, GeneratingCurve
from .entropy import (CurveQuadrature, EntropyResult, FParams, SearchConfig, entropy,
                      shrinker_entropy, sphere_area)


class SurgeryError(RuntimeError):
    """Raised when the controller cannot continue; carries the partial run."""

    def __init__(self, msg, run=None, event=None, diagnostics=None):
        super().__init__(msg)
        self.run = run
        self.event = event
        self.diagnostics = diagnostics or []


class NeckDetectionError(SurgeryError):
    pass


class CapError(RuntimeError):
    pass


# closeness of post-surgery caps to the standard pair, as a multiple of delta
DELTA_PRIME_FACTOR = 2.0
# regression constants for |nabla^l A| s^{1+l}, l = 0, 1, 2
C_BOUNDS = (10.0, 100.0, 1000.0)
# lambda_1 below -LAMBDA_NOISE * H counts as negative; smaller values are
# finite-difference noise (exact cylinder nodes next to a spacing change)
LAMBDA_NOISE = 1e-6


# ----------------------------------------------------------------------
# parameters
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class SurgeryParams:
    H_th: float = 2.5
    H_neck: float = 10.0
    H_trig: float = 40.0
    delta: float = 0.02
    Gamma: float = 10.0
    alpha: float = 0.5
    entropy_threshold: float | None = None

    def __post_init__(self):
        if not (0 < self.H_th <= self.H_neck <= self.H_trig):
            raise ValueError("need 0 < H_th <= H_neck <= H_trig")
        if self.H_trig / self.H_neck < 2 or self.H_neck / self.H_th < 2:
            raise ValueError("H_trig/H_neck and H_neck/H_th must both be >= 2")
        if not (0 < self.delta <= 0.1):
            raise ValueError("delta must lie in (0, 1/10]")
        if self.Gamma < 10:
            raise ValueError("Gamma must be >= 10")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    def Pi(self, n: int) -> float:
        """Entropy ceiling; by default just below Lambda_{n-2}."""
        if self.entropy_threshold is not None:
            return self.entropy_threshold
        return shrinker_entropy(n - 2) - 1e-6

    @classmethod
    def from_dict(cls, d: dict | None) -> "SurgeryParams":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown surgery keys {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class CapConfig:
    """How the cap is grown: a pill-closed eta_k profile flowed through its
    first neckpinch, then flowed on until the tip piece is convex and blunt."""
    m: int = 1
    k: int = 1
    W: float = 0.25
    R0: float = 0.25
    h: float = 0.05
    margin: float | None = None
    pinch_threshold: float = 0.1
    A_target: float = 3.0
    extra_time_max: float = 0.2
    chunk: float = 0.0025
    h_cap: float = 0.05
    search: dict | None = None

    @classmethod
    def from_dict(cls, d: dict | None) -> "CapConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown cap keys {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class AuditConfig:
    N: float = 20.0
    eps_budget: float = 0.05
    tol: float = 1e-6
    n_b_small: int = 9
    n_rho_small: int = 3
    n_r_small: int = 6
    n_b_large: int = 9
    n_rho_large: int = 3
    n_r_large: int = 6
    rtol: float = 1e-10

    @classmethod
    def from_dict(cls, d: dict | None) -> "AuditConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown audit keys {sorted(unknown)}")
        return cls(**d)


# ----------------------------------------------------------------------
# records
# ----------------------------------------------------------------------
@dataclass
class NeckRegion:
    center_axial: float
    radius: float
    axial_extent: tuple
    delta_score: float
    component_id: int = 0
    H_center: float = float("nan")
    low_side: int = 1            # +1: the H_th region lies at larger x
    backward_score: float | None = None

    def as_record(self) -> dict:
        return {"center_axial": self.center_axial, "radius": self.radius,
                "axial_extent": list(self.axial_extent), "delta_score": self.delta_score,
                "component_id": self.component_id, "H_center": self.H_center,
                "low_side": self.low_side, "backward_score": self.backward_score}


@dataclass
class CapModel:
    profile: GeneratingCurve
    R_tilde: float
    match_annulus: tuple
    entropy_certificate: EntropyResult
    min_H: float
    alpha_bar: float
    epsilon: float = 0.05
    derivative_bounds: tuple = ()
    info: dict = field(default_factory=dict)

    def check(self) -> list:
        """Violated invariants, as messages."""
        bad = []
        xi, v = self.profile.x, self.profile.u
        lo, hi = self.match_annulus
        on = (xi >= lo) & (xi <= hi)
        if not on.any() or np.max(np.abs(v[on] - 1.0)) > 1e-8:
            bad.append("profile is not the unit cylinder on the match annulus")
        lam = shrinker_entropy(self.profile.n - 1)
        if self.entropy_certificate.value > lam + self.epsilon:
            bad.append(f"entropy {self.entropy_certificate.value:.6f} exceeds {lam + self.epsilon:.6f}")
        if not self.min_H > 0:
            bad.append("cap is not mean convex")
        if not self.alpha_bar > 0:
            bad.append("cap is collapsed")
        return bad


@dataclass
class EntropyAudit:
    c0: float
    small_scale_max_F: float
    large_scale_max_increase: float
    volume_ratio_eta: float
    weight_ratio_floor: float
    verdict: bool
    s2: float = float("nan")
    N: float = 20.0
    Pi: float = float("nan")
    budget_bound: float = float("nan")
    closed_form_floor: float = float("nan")
    mechanism_holds: bool = False
    worst_small: tuple = ()
    worst_large: tuple = ()
    evaluations: int = 0

    def as_record(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


@dataclass
class SurgeryEvent:
    time: float
    neck: NeckRegion
    pre_curve: GeneratingCurve
    post_curves: list
    discarded: list = field(default_factory=list)
    audit: EntropyAudit | None = None
    checks: dict = field(default_factory=dict)
    valid: bool = False
    area_pre: float = float("nan")
    area_post: float = float("nan")
    max_H_ratio: float = float("nan")

    @property
    def post_curve(self) -> GeneratingCurve:
        """The piece on the low-curvature side of the neck."""
        return self.post_curves[0]

    def as_record(self) -> dict:
        return {"time": self.time, "neck": self.neck.as_record(), "checks": self.checks,
                "valid": self.valid, "area_pre": self.area_pre, "area_post": self.area_post,
                "max_H_ratio": self.max_H_ratio,
                "pieces": [c.component_id for c in self.post_curves],
                "discarded": [c.component_id for c in self.discarded],
                "audit": None if self.audit is None else self.audit.as_record()}


# ----------------------------------------------------------------------
# small geometric helpers
# ----------------------------------------------------------------------
def _graph_derivs(curve: GeneratingCurve):
    """u_x, u_xx from arc-length derivatives (only meaningful where x_s != 0)."""
    xs, xss = ag.arc_derivatives(curve, curve.x)
    us, uss = ag.arc_derivatives(curve, curve.u)
    with np.errstate(divide="ignore", invalid="ignore"):
        ux = us / xs
        uxx = (uss * xs - us * xss) / xs**3
    return ux, uxx


def _hess_A_norm(curve: GeneratingCurve, k=None) -> np.ndarray:
    """Second-derivative surrogate sqrt(ka_ss^2 + 3(n-1) ks_ss^2), the same
    combination grad_A_sq uses one order down."""
    k = ag.curvatures(curve) if k is None else k
    _, ka_ss = ag.arc_derivatives(curve, k.kappa_axial)
    _, ks_ss = ag.arc_derivatives(curve, k.kappa_sphere)
    return np.sqrt(ka_ss**2 + 3 * (curve.n - 1) * ks_ss**2)


def area_in_ball(curve: GeneratingCurve, center: float, R: float, refine: int = 8) -> float:
    """Area of the hypersurface inside the ball of radius R about the axis
    point (center, 0), by trapezoid sums on a refined polyline."""
    x, u = curve.x, curve.u
    t = np.linspace(0.0, 1.0, refine + 1)[:-1]
    xf = np.concatenate([(x[:-1, None] + np.diff(x)[:, None] * t).ravel(), x[-1:]])
    uf = np.concatenate([(u[:-1, None] + np.diff(u)[:, None] * t).ravel(), u[-1:]])
    ds = np.hypot(np.diff(xf), np.diff(uf))
    g = sphere_area(curve.n - 1) * uf ** (curve.n - 1)
    inside = (xf - center) ** 2 + uf**2 <= R * R
    seg = 0.5 * (g[:-1] * inside[:-1] + g[1:] * inside[1:]) * ds
    return float(seg.sum())


def _make_piece(n, x, u, cid) -> GeneratingCurve:
    lp, rp = u[0] == 0.0, u[-1] == 0.0
    if lp and rp:
        return GeneratingCurve(n, x, u, closure="closed", component_id=cid)
    if lp:
        return GeneratingCurve(n, x, u, closure="capped", component_id=cid)
    if rp:
        return GeneratingCurve(n, x[::-1].copy(), u[::-1].copy(), closure="capped", component_id=cid)
    return GeneratingCurve(n, x, u, closure="open", component_id=cid)


# ----------------------------------------------------------------------
# neck detection
# ----------------------------------------------------------------------
def _window(curve: GeneratingCurve, i: int, p: float, half: float):
    """Contiguous node range around i with |x - p| <= half, or None if the
    range reaches an end of the curve or is not a graph over the axis."""
    x = curve.x
    lo = i
    while lo > 0 and abs(x[lo - 1] - p) <= half:
        lo -= 1
    hi = i
    while hi < x.size - 1 and abs(x[hi + 1] - p) <= half:
        hi += 1
    if lo == 0 or hi == x.size - 1:
        return None
    d = np.diff(x[lo - 1:hi + 2])
    if not (np.all(d > 0) or np.all(d < 0)):
        return None
    return lo, hi


def neck_score(curve: GeneratingCurve, p: float, i: int, delta: float, s_guess: float,
               derivs=None):
    """(score, fitted radius, window) for the cylinder fit over |x-p| <= s/delta."""
    win = _window(curve, i, p, s_guess / delta)
    if win is None:
        return math.inf, s_guess, None
    lo, hi = win
    u = curve.u[lo:hi + 1]
    s = 0.5 * (u.max() + u.min())
    ux, uxx = _graph_derivs(curve) if derivs is None else derivs
    c0 = float(np.max(np.abs(u - s))) / s
    c1 = float(np.max(np.abs(ux[lo:hi + 1])))
    c2 = float(np.max(np.abs(uxx[lo:hi + 1]))) * s
    return max(c0, c1, c2), s, win


def _nearest_node(curve: GeneratingCurve, p: float, s: float) -> tuple[int, float]:
    d = (curve.x - p) ** 2 + (curve.u - s) ** 2
    j = int(np.argmin(d))
    return j, float(d[j])


def detect_necks(state: fl.FlowState, params: SurgeryParams, previous: fl.FlowState | None = None,
                 exempt=()) -> list:
    """Necks separating the H_trig region from the H_th region.

    Raises NeckDetectionError when some component reaches H_trig, has an
    H_th region, and yet no acceptable neck was found next to it."""
    found = []
    diags = []
    needs = False
    for c, k in zip(state.components, state.geom):
        if c.component_id in exempt:
            continue
        H = k.H
        if H.max() < params.H_trig or H.min() > params.H_th:
            continue
        needs = True
        trig = H >= params.H_trig
        low = H <= params.H_th
        derivs = _graph_derivs(c)
        # maximal runs of trigger nodes
        edges = np.flatnonzero(np.diff(np.concatenate([[0], trig.astype(int), [0]])))
        runs = list(zip(edges[::2], edges[1::2] - 1))
        for i0, i1 in runs:
            for direction in (-1, 1):
                start = i0 if direction < 0 else i1
                j = start
                while 0 <= j < H.size and not low[j]:
                    j += direction
                if not (0 <= j < H.size):
                    continue
                # first H_neck crossing going back from the low region
                m = j
                while m != start and H[m] < params.H_neck:
                    m -= direction
                a, b = m + direction, m          # H[a] < H_neck <= H[b]
                w = (params.H_neck - H[a]) / (H[b] - H[a])
                p = float(c.x[a] + w * (c.x[b] - c.x[a]))
                s0 = float(c.u[a] + w * (c.u[b] - c.u[a]))
                Hc = float(H[a] + w * (H[b] - H[a]))
                score, s, win = neck_score(c, p, b, params.delta, s0, derivs)
                back = None
                if previous is not None and win is not None:
                    back = _backward_score(previous, p, s, state.t, params.delta, c.n)
                    score = max(score, back)
                side = int(np.sign(c.x[j] - p)) or 1
                ext = (p - s / params.delta, p + s / params.delta)
                rec = NeckRegion(p, s, ext, score, c.component_id, Hc, side, back)
                if win is None or score > params.delta:
                    diags.append(rec)
                    continue
                if any(f.component_id == rec.component_id and f.axial_extent[0] < ext[1]
                       and ext[0] < f.axial_extent[1] for f in found):
                    continue
                found.append(rec)
    if needs and not found:
        raise NeckDetectionError("no acceptable neck while the trigger is active", diagnostics=diags)
    found.sort(key=lambda r: (r.component_id, r.center_axial))
    return found


def _backward_score(previous: fl.FlowState, p: float, s: float, t: float, delta: float, n: int) -> float:
    """Fit on the previous slice, compared with the cylinder evolved back."""
    dt = t - previous.t
    s_prev = math.sqrt(s * s + 2 * (n - 1) * max(dt, 0.0))
    best = math.inf
    for c in previous.components:
        j, d2 = _nearest_node(c, p, s_prev)
        if d2 > (0.5 * s_prev) ** 2:
            continue
        score, fit, win = neck_score(c, p, j, delta, s_prev)
        if win is None:
            continue
        best = min(best, max(score, abs(fit - s_prev) / s))
    return best


# ----------------------------------------------------------------------
# cap construction
# ----------------------------------------------------------------------
def _blend(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    return ag.smooth_step(np.clip(t, 0.0, 1.0))


def build_cap(n: int = 3, epsilon: float = 0.05, R_tilde: float = 10.0,
              cfg: CapConfig | dict | None = None) -> CapModel:
    """Grow a cap by flowing a pill-closed eta_k surface through its first
    neckpinch, keep one piece, flow it until convex and blunt, rescale so its
    cylindrical end has radius 1 and splice in an exact cylinder."""
    cfg = cfg if isinstance(cfg, CapConfig) else CapConfig.from_dict(cfg)
    if not (0 < epsilon <= 0.1):
        raise ValueError("epsilon must lie in (0, 0.1]")
    if R_tilde < 10:
        raise ValueError("R_tilde must be >= 10")
    margin = cfg.margin if cfg.margin is not None else 2 * R_tilde + 10.0
    prof = ag.build_profile_eta_k(cfg.m, cfg.k, cfg.W, cfg.R0, h=cfg.h, margin=margin, n=n)
    sigma = ag.close_with_caps(prof)
    ctrl = fl.StepControl(regrid_every=10, pinch_threshold=cfg.pinch_threshold)
    run = fl.run_until(sigma, fl.Stop(pinch=True, extinction=True), ctrl)
    if not run.events_of("neckpinch_detected") or run.events_of("extinction"):
        raise CapError("no pinch; increase k or adjust W")
    st = run.final
    piece = max(st.components, key=lambda c: float(np.mean(c.x)))
    t = st.t
    t_pinch = t
    # flow the piece until it is convex with a blunt tip
    while True:
        k = ag.curvatures(piece)
        rho = float(piece.u.max())
        lam1 = k.lambda_sorted()[:, 0]
        blunt = float(np.sqrt(k.norm_A_sq.max())) * rho
        if lam1.min() >= -1e-9 * float(k.H.max()) and blunt <= cfg.A_target:
            break
        if t - t_pinch > cfg.extra_time_max:
            raise CapError(f"cap did not become convex and blunt (|A| rho = {blunt:.3g})")
        sub = fl.run_until(piece, fl.Stop(t_max=t + cfg.chunk), ctrl, t0=t)
        if len(sub.final.components) != 1:
            raise CapError("cap piece split or vanished while smoothing")
        piece, t = sub.final.components[0], sub.final.t
    # unit scale, tip at the origin, cylindrical end towards +xi
    xi = (piece.x - piece.x[0]) / rho
    v = piece.u / rho
    unit = GeneratingCurve(n, xi, v, closure="closed")
    unit = ag.resample_adaptive(unit, h_max=cfg.h_cap, resolution=0.05)
    xi, v = unit.x, unit.u
    if xi.max() < 2 * R_tilde + 2:
        raise CapError("flowed piece too short for the match annulus; raise margin")
    keep = xi < 2 * R_tilde
    xi, v = xi[keep], v[keep].copy()
    before = v.copy()
    chi = _blend((xi - R_tilde) / R_tilde)
    v = 1.0 + (1.0 - chi) * (v - 1.0)
    m = int(math.ceil(2 * R_tilde / cfg.h_cap))
    xc = np.linspace(2 * R_tilde, 4 * R_tilde, m + 1)
    profile = GeneratingCurve(n, np.concatenate([xi, xc]), np.concatenate([v, np.ones_like(xc)]),
                              closure="capped")
    search = SearchConfig.from_dict(cfg.search)
    cert = entropy(profile, search)
    bound = shrinker_entropy(n - 1) + epsilon
    if cert.value > bound:
        raise CapError(f"cap entropy {cert.value:.6f} exceeds Lambda_{n - 1} + eps = {bound:.6f}")
    kk = ag.curvatures(profile)
    rep = ag.noncollapse_check(profile)
    A = np.sqrt(kk.norm_A_sq)
    dA = np.sqrt(ag.grad_A_sq(profile))
    d2A = _hess_A_norm(profile, kk)
    cap = CapModel(profile, R_tilde, (2 * R_tilde, 4 * R_tilde), cert, float(kk.H.min()),
                   float(rep.alpha_interior if math.isinf(rep.alpha_exterior) else rep.alpha),
                   epsilon, (float(A.max()), float(dA.max()), float(d2A.max())),
                   {"t_pinch": t_pinch, "t_extract": t, "rho": rho,
                    "blend_change": float(np.max(np.abs(v - before))),
                    "max_H": float(kk.H.max()), "alpha_exterior": rep.alpha_exterior})
    bad = cap.check()
    if bad:
        raise CapError("; ".join(bad))
    return cap


# ----------------------------------------------------------------------
# cut and paste
# ----------------------------------------------------------------------
def _cap_nodes(cap: CapModel, s: float, h_local: float):
    """Cap nodes (xi <= 2 R~) resampled to the neck's spacing, unit scale."""
    prof = cap.profile
    R2 = cap.match_annulus[0]
    hm = max(h_local / s, 1e-3)
    if hm < float(np.max(prof.chords())):
        prof = ag.resample_adaptive(prof, h_max=hm, resolution=0.05)
    keep = prof.x <= R2 + 1e-12
    xi, v = prof.x[keep], prof.u[keep].copy()
    if abs(xi[-1] - R2) > 1e-9:
        xi = np.append(xi, R2)
        v = np.append(v, 1.0)
    v[xi >= R2 - 1e-12] = 1.0
    return xi, v


def _locate(state: fl.FlowState, neck: NeckRegion) -> int:
    best, idx = math.inf, None
    for ci, c in enumerate(state.components):
        j, d2 = _nearest_node(c, neck.center_axial, neck.radius)
        if d2 < best:
            best, idx = d2, ci
    if idx is None or best > (0.5 * neck.radius) ** 2:
        raise SurgeryError(f"no component passes through the neck at x={neck.center_axial:.6g}")
    return idx


def do_surgery(state: fl.FlowState, neck: NeckRegion, cap: CapModel, params: SurgeryParams,
               next_id: int | None = None) -> SurgeryEvent:
    """Replace the neck by two caps; all four cut-and-paste conditions are
    measured and recorded.  The state is not modified."""
    ci = _locate(state, neck)
    c = state.components[ci]
    n = c.n
    p, s, G, Rt = neck.center_axial, neck.radius, params.Gamma, cap.R_tilde
    X_mod = (G + 3 * Rt) * s
    B = 5 * G * s
    if X_mod >= B:
        raise SurgeryError(f"cap annulus ({G + 3 * Rt:.3g} s) does not fit inside B(p, 5 Gamma s)")
    x, u = c.x, c.u
    i0, _ = _nearest_node(c, p, s)
    win = _window(c, i0, p, max(X_mod * 1.05, s / params.delta))
    if win is None:
        raise SurgeryError("neck window reaches the end of the component or folds")
    lo, hi = win
    flip = x[hi] < x[lo]
    if flip:
        x, u = x[::-1], u[::-1]
        lo, hi = x.size - 1 - hi, x.size - 1 - lo
    h_local = float(np.median(np.diff(x[lo:hi + 1])))
    xi_cap, v_cap = _cap_nodes(cap, s, h_local)
    # nodes left of the modified zone and right of it (untouched)
    iL = lo + int(np.searchsorted(x[lo:hi + 1], p - X_mod, side="right")) - 1
    iR = lo + int(np.searchsorted(x[lo:hi + 1], p + X_mod, side="left"))
    if iL < lo or iR > hi:
        raise SurgeryError("neck window too short for the modified zone")

    def blend_side(sign):
        # original nodes with (2R~ + G) s < |x - p| < (3R~ + G) s
        if sign > 0:
            idx = np.arange(iR - 1, lo - 1, -1)
        else:
            idx = np.arange(iL + 1, hi + 1)
        xi = sign * (x[idx] - p) / s - G
        sel = idx[(xi > 2 * Rt) & (xi < 3 * Rt)]
        xs = x[sel]
        xin = sign * (xs - p) / s - G
        chi = _blend((xin - 2 * Rt) / Rt)
        return sel, xs, s + chi * (u[sel] - s)

    selL, xbL, ubL = blend_side(-1)
    selR, xbR, ubR = blend_side(1)
    # left piece: original .. blend .. cap (cylinder end first, tip last)
    capLx = (p - (G + xi_cap) * s)[::-1]
    capLu = (s * v_cap)[::-1]
    xl = np.concatenate([x[:iL + 1], xbL, capLx])
    ul = np.concatenate([u[:iL + 1], ubL, capLu])
    capRx = p + (G + xi_cap) * s
    capRu = s * v_cap
    xr = np.concatenate([capRx, xbR[::-1], x[iR:]])
    ur = np.concatenate([capRu, ubR[::-1], u[iR:]])
    ul[-1] = 0.0
    ur[0] = 0.0
    nid = next_id if next_id is not None else max(cc.component_id for cc in state.components) + 1
    left = _make_piece(n, xl, ul, nid)
    right = _make_piece(n, xr, ur, nid + 1)
    low_first = [right, left] if neck.low_side > 0 else [left, right]
    ev = SurgeryEvent(state.t, neck, c, low_first)
    _record_checks(ev, c, [left, right], cap, params)
    ev.max_H_ratio = float(ag.curvatures(ev.post_curve).H.max()) / params.H_neck
    return ev


def _record_checks(ev: SurgeryEvent, pre: GeneratingCurve, pieces, cap: CapModel, params: SurgeryParams):
    p, s, G = ev.neck.center_axial, ev.neck.radius, params.Gamma
    B = 5 * G * s

    def outside(cv):
        return (cv.x - p) ** 2 + cv.u**2 > B * B

    # (1) locality: bit-identical nodes outside B, modification inside B
    pre_out = pre.nodes[outside(pre)]
    post_out = np.vstack([cv.nodes[outside(cv)] for cv in pieces])
    key = lambda a: a[np.lexsort((a[:, 1], a[:, 0]))]
    loc = pre_out.shape == post_out.shape and np.array_equal(key(pre_out), key(post_out))
    # (2) derivative bounds over the post pieces inside B
    mx = [0.0, 0.0, 0.0]
    for cv in pieces:
        k = ag.curvatures(cv)
        ins = ~outside(cv)
        vals = (np.sqrt(k.norm_A_sq), np.sqrt(ag.grad_A_sq(cv)), _hess_A_norm(cv, k))
        for l in range(3):
            if ins.any():
                mx[l] = max(mx[l], float(vals[l][ins].max()) * s ** (1 + l))
    bounds = all(m <= C for m, C in zip(mx, C_BOUNDS))
    # (3) every post point with lambda_1 < 0 has a pre point with larger lambda_1/H
    kpre = ag.curvatures(pre)
    insp = ~outside(pre)
    ratio_pre = kpre.lambda_sorted()[:, 0] / kpre.H
    best_pre = float(ratio_pre[insp].max()) if insp.any() else -math.inf
    worst_pre = float(ratio_pre[insp].min()) if insp.any() else -math.inf
    # untouched nodes are their own witness; only modified ones are compared
    pre_keys = {(a, b) for a, b in pre.nodes[insp].tolist()}
    post_neg = []
    for cv in pieces:
        k = ag.curvatures(cv)
        lam1 = k.lambda_sorted()[:, 0]
        fresh = np.array([(a, b) not in pre_keys for a, b in cv.nodes.tolist()])
        sel = (~outside(cv)) & (lam1 < -LAMBDA_NOISE * np.abs(k.H)) & fresh
        post_neg.append((lam1 / k.H)[sel])
    post_neg = np.concatenate(post_neg)
    cond3 = bool(np.all(post_neg < best_pre))
    cond3_margin = float(post_neg.min() - worst_pre) if post_neg.size else math.inf
    # (4) C^2 closeness to the ideal caps (exact cylinders beyond the cap
    # part) over |x - p| <= min(10 Gamma, 1/delta) s
    reach = min(10 * G, 1.0 / params.delta) * s
    dev = 0.0
    for cv in pieces:
        ux, uxx = _graph_derivs(cv)
        xi = np.abs(cv.x - p) / s - G
        sel = (np.abs(cv.x - p) <= reach) & (xi >= cap.match_annulus[0])
        if sel.any():
            w = np.abs(cv.u[sel] - s) / s
            dev = max(dev, float(w.max()), float(np.abs(ux[sel]).max()),
                      float(np.abs(uxx[sel]).max()) * s)
    close = dev <= DELTA_PRIME_FACTOR * params.delta
    ev.checks = {"locality": bool(loc), "derivative_bounds": bool(bounds),
                 "derivative_values": mx, "lambda_ratio": cond3,
                 "lambda_ratio_reverse_margin": cond3_margin,
                 "cap_closeness": bool(close), "closeness_value": dev,
                 "delta_prime": DELTA_PRIME_FACTOR * params.delta}
    ev.valid = bool(loc and bounds and cond3 and close)
    ev.area_pre = area_in_ball(pre, p, B)
    ev.area_post = sum(area_in_ball(cv, p, B) for cv in pieces)


def discard_components(curves, H_th: float):
    """Split into (kept, discarded): discarded pieces have min H > H_th."""
    kept, gone = [], []
    for c in curves:
        (gone if float(ag.curvatures(c).H.min()) > H_th else kept).append(c)
    return kept, gone


# ----------------------------------------------------------------------
# entropy audit
# ----------------------------------------------------------------------
def _F_union(quads, p: FParams, rtol: float) -> float:
    return sum(q.evaluate(p, rtol=rtol)[0] for q in quads)


def entropy_audit(event: SurgeryEvent, audit_cfg: AuditConfig | dict | None = None,
                  params: SurgeryParams | None = None, pre_surface=None,
                  post_surface=None) -> EntropyAudit:
    """Small scales: F(post) below Pi and Lambda_{n-1} + budget near the
    surgery.  Large scales: F(post) <= F(pre) + tol over the convex hull,
    plus the volume ratio and weight ratio behind that inequality.

    pre_surface/post_surface default to the operated component and the
    pieces kept after discarding; the controller passes the whole slice
    before and after every surgery and discard at that time."""
    cfg = audit_cfg if isinstance(audit_cfg, AuditConfig) else AuditConfig.from_dict(audit_cfg)
    params = params or SurgeryParams()
    pre = event.pre_curve
    n = pre.n
    p, s, G = event.neck.center_axial, event.neck.radius, params.Gamma
    re = 5 * G * s                       # surgery ball radius, the scale s2
    s2 = re
    sqrt_c0 = s2 / cfg.N
    c0 = sqrt_c0**2
    Pi = params.Pi(n)
    budget = shrinker_entropy(n - 1) + cfg.eps_budget
    if pre_surface is None:
        pre_surface = [pre]
    if post_surface is None:
        gone = {id(c) for c in event.discarded}
        post_surface = [c for c in event.post_curves if id(c) not in gone]
    q_post = [CurveQuadrature(c) for c in post_surface]
    # components present on both sides cancel exactly in F(post) - F(pre)
    shared = {id(c) for c in pre_surface} & {id(c) for c in post_surface}
    q_pre_d = [CurveQuadrature(c) for c in pre_surface if id(c) not in shared]
    q_post_d = [q for q, c in zip(q_post, post_surface) if id(c) not in shared]
    evals = 0
    # small scales, centred near the surgery
    small, worst_s = -math.inf, ()
    for b in np.linspace(p - re, p + re, cfg.n_b_small):
        for rho0 in np.linspace(0.0, 2 * s, cfg.n_rho_small):
            for r in np.geomspace(1e-3 * c0, c0 * (1 - 1e-9), cfg.n_r_small):
                f = _F_union(q_post, FParams(float(b), float(rho0), float(r)), cfg.rtol)
                evals += 1
                if f > small:
                    small, worst_s = f, (float(b), float(rho0), float(r))
    # large scales over the convex hull of the affected component
    xmin, xmax = float(pre.x.min()), float(pre.x.max())
    D = math.hypot(xmax - xmin, float(pre.u.max()))
    bs = np.unique(np.concatenate([np.linspace(xmin, xmax, cfg.n_b_large),
                                   np.linspace(p - re, p + re, cfg.n_b_large)]))
    rs = np.geomspace(c0, max(D * D, 4 * c0), cfg.n_r_large)
    large, worst_l = -math.inf, ()
    floor = math.inf
    B_nodes = pre.nodes[(pre.x - p) ** 2 + pre.u**2 <= re * re]
    for b in bs:
        for rho0 in np.linspace(0.0, 2 * s, cfg.n_rho_large):
            for r in rs:
                prm = FParams(float(b), float(rho0), float(r))
                d = _F_union(q_post_d, prm, cfg.rtol) - _F_union(q_pre_d, prm, cfg.rtol)
                evals += 2
                if d > large:
                    large, worst_l = d, (float(b), float(rho0), float(r))
                if B_nodes.size:
                    d2 = (B_nodes[:, 0] - b) ** 2 + (B_nodes[:, 1] - rho0) ** 2
                    # weight ratio on the surgery region, logs to avoid underflow
                    floor = min(floor, math.exp(-(d2.max() - d2.min()) / (4 * r)))
    eta = event.area_post / event.area_pre if event.area_pre > 0 else math.inf
    rho_grad = D / (2 * c0)
    sig = math.exp(-min(D * D / (4 * c0), 700.0))
    closed_form_floor = sig / (sig + re * rho_grad)
    verdict = bool(small < Pi and small <= budget and large <= cfg.tol)
    return EntropyAudit(c0, small, large, eta, floor, verdict, s2, cfg.N, Pi, budget, closed_form_floor,
                        bool(eta < 1 and floor >= eta), worst_s, worst_l, evals)


# ----------------------------------------------------------------------
# controller
# ----------------------------------------------------------------------
def _convex(c: GeneratingCurve, k=None) -> bool:
    k = ag.curvatures(c) if k is None else k
    lam = k.lambda_sorted()[:, 0]
    return bool(lam.min() >= -1e-9 * float(np.abs(k.H).max()))


def surgery_flow(curve, params: SurgeryParams | dict | None = None, ctrl: fl.StepControl | None = None,
                 cap: CapModel | None = None, audit_cfg: AuditConfig | dict | None = None,
                 search_cfg: SearchConfig | dict | None = None, max_surgeries: int = 100,
                 t_max: float | None = None, check_entropy: bool = True, on_event=None) -> fl.FlowRun:
    """Flow with surgery until every component is extinct or discarded."""
    params = params if isinstance(params, SurgeryParams) else SurgeryParams.from_dict(params)
    ctrl = ctrl or fl.StepControl()
    state = fl.initial_state(curve, ctrl.track_F)
    n = state.components[0].n
    Pi = params.Pi(n)
    info = {"Pi": Pi}
    if check_entropy:
        lam = max(entropy(c, search_cfg).value for c in state.components)
        info["initial_entropy"] = lam
        if lam >= Pi:
            raise SurgeryError(f"initial entropy {lam:.6f} is not below Pi = {Pi:.6f}")
    mean_convex = all(float(k.H.min()) > 0 for k in state.geom)
    info["mean_convex"] = mean_convex
    if not mean_convex:
        for c in state.components:
            q = fl.f_quantity(c, state.t, ag.curvatures(c))
            if q.min() <= 0:
                raise SurgeryError("initial slice is neither mean convex nor 2H - <x,nu> positive")
    master = fl.FlowRun([state], [], ctrl, info=info)
    exempt = set()
    next_id = max(c.component_id for c in state.components) + 1
    while True:
        history = deque(maxlen=2)
        stop = fl.Stop(t_max=t_max, extinction=True, H_trig=params.H_trig, exempt=tuple(sorted(exempt)))
        sub = fl.run_until(state, stop, ctrl, on_step=history.append, t0=state.t)
        master.states.extend(sub.states[1:])
        master.events.extend(sub.events)
        state = sub.final
        next_id = max([next_id] + [c.component_id + 1 for c in state.components])
        if sub.trigger is None:
            return master
        # convex components entirely above H_th shrink to points by themselves
        comps, geom = state.components, state.geom
        for c, k in zip(comps, geom):
            if float(k.H.min()) > params.H_th and c.component_id not in exempt:
                if _convex(c, k):
                    exempt.add(c.component_id)
                    master.log_event(state.t, "convex_exempt", component=c.component_id)
        gone = [c for c, k in zip(comps, geom)
                if float(k.H.min()) > params.H_th and c.component_id not in exempt]
        if gone:
            master.log_event(state.t, "discard", components=[c.component_id for c in gone])
            keep = [c for c in comps if c not in gone]
            state = fl.FlowState(state.t, keep, grid_id=state.grid_id + 1, step=state.step) if keep else \
                fl.FlowState(state.t, [], 0.0, 0.0, grid_id=state.grid_id + 1, step=state.step)
            if not keep:
                master.states.append(state)
                return master
        triggered = [c for c, k in zip(state.components, state.geom)
                     if c.component_id not in exempt and float(k.H.max()) >= params.H_trig]
        if not triggered:
            continue
        prev = history[0] if len(history) == 2 else None
        try:
            necks = detect_necks(state, params, previous=prev, exempt=exempt)
        except NeckDetectionError as err:
            err.run = master
            raise
        if cap is None:
            cap = build_cap(n)
        before = list(state.components)
        batch = []
        for neck in necks:
            if len(master.surgeries) + len(batch) >= max_surgeries:
                raise SurgeryError(f"more than {max_surgeries} surgeries", run=master)
            ev = do_surgery(state, neck, cap, params, next_id=next_id)
            next_id += 2
            if not ev.valid:
                raise SurgeryError(f"cut-and-paste checks failed: {ev.checks}", run=master, event=ev)
            batch.append(ev)
            comps = [c for c in state.components if c is not ev.pre_curve] + ev.post_curves
            state = fl.FlowState(state.t, comps, grid_id=state.grid_id + 1, step=state.step)
        # discard new pieces lying wholly in the high-curvature region
        fresh = {id(c) for ev in batch for c in ev.post_curves}
        new = [c for c in state.components if id(c) in fresh]
        _, gone = discard_components(new, params.H_th)
        gone_ids = {id(c) for c in gone}
        after = [c for c in state.components if id(c) not in gone_ids]
        for ev in batch:
            ev.discarded = [c for c in ev.post_curves if id(c) in gone_ids]
            ev.audit = entropy_audit(ev, audit_cfg, params, pre_surface=before, post_surface=after)
            master.surgeries.append(ev)
            master.log_event(state.t, "surgery", **_event_info(ev))
            if on_event is not None:
                on_event(ev)
            if not ev.audit.verdict:
                raise SurgeryError("entropy audit failed", run=master, event=ev)
        if gone:
            master.log_event(state.t, "discard", components=[c.component_id for c in gone])
        state = fl.FlowState(state.t, after, grid_id=state.grid_id + 1, step=state.step) if after else \
            fl.FlowState(state.t, [], 0.0, 0.0, grid_id=state.grid_id + 1, step=state.step)
        if state.components:
            h_ref = float(np.median(np.concatenate([c.chords() for c in state.components])))
            state = fl._regrid_state(state, ctrl, h_ref, master, log_it=False)
        if not state.components:
            master.states.append(state)
            return master


def _event_info(ev: SurgeryEvent) -> dict:
    a = ev.audit
    return {"center_axial": ev.neck.center_axial, "radius": ev.neck.radius,
            "delta_score": ev.neck.delta_score, "valid": ev.valid,
            "pieces": [c.component_id for c in ev.post_curves],
            "discarded": [c.component_id for c in ev.discarded],
            "audit_pass": None if a is None else a.verdict}


# ----------------------------------------------------------------------
# event log
# ----------------------------------------------------------------------
def _plain(v):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, FParams):
        return {"b": v.b, "rho0": v.rho0, "r": v.r}
    if hasattr(v, "as_record"):
        return _plain(v.as_record())
    if v is None or isinstance(v, str):
        return v
    return repr(v)


def write_event_log(run: fl.FlowRun, out_dir) -> Path:
    """One JSON record per surgery plus pre/post curve snapshots:
    ``event_###.json``, ``event_###_pre.csv``, ``event_###_post_<id>.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for i, ev in enumerate(run.surgeries):
        stem = f"event_{i:03d}"
        rec = ev.as_record()
        rec["index"] = i
        rec["pre_file"] = ag.write_curve(ev.pre_curve, out / f"{stem}_pre.csv").name
        rec["post_files"] = [ag.write_curve(c, out / f"{stem}_post_{c.component_id}.csv").name
                             for c in ev.post_curves]
        (out / f"{stem}.json").write_text(json.dumps(_plain(rec), indent=2, sort_keys=True) + "\n")
        index.append({"index": i, "time": ev.time, "valid": ev.valid,
                      "audit_pass": None if ev.audit is None else ev.audit.verdict})
    summary = {"info": _plain(run.info), "surgeries": _plain(index),
               "events": [{"t": e.t, "kinds": e.kinds()} for e in run.events if e.kind != "regrid"]}
    path = out / "surgery_log.json"
    path.write_text(json.dumps(_plain(summary), indent=2, sort_keys=True) + "\n")
    return path
