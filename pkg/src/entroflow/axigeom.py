"""Generating curves of rotationally symmetric hypersurfaces in R^{n+1}.

A hypersurface is stored as its profile: nodes (x_i, u_i) in the half-plane
u >= 0, rotated about the x axis.  Every derivative is taken with respect to
the cumulative chord length and reduced with the parametrization-invariant
formulas, so graph and parametric charts share the same machinery.

End conventions
---------------
closed  : both ends are poles on the axis (u = 0), smooth by reflection.
open    : both ends continue as round cylinders of the end radius.
capped  : left end is a pole, right end continues as a cylinder.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator
from scipy.spatial import ConvexHull, QhullError

CLOSURES = ("closed", "open", "capped")
CHARTS = ("graph", "parametric")


class CurveError(ValueError):
    """Invalid or degenerate generating curve."""


@dataclass(frozen=True, eq=False)
class GeneratingCurve:
    ambient_dim: int
    x: np.ndarray
    u: np.ndarray
    closure: str = "closed"
    chart: str = "parametric"
    component_id: int = 0

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=float)
        u = np.ascontiguousarray(self.u, dtype=float)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "u", u)
        n = self.ambient_dim
        if int(n) != n or n < 2:
            raise CurveError(f"ambient_dim must be an integer >= 2, got {n}")
        if self.closure not in CLOSURES:
            raise CurveError(f"unknown closure {self.closure!r}")
        if self.chart not in CHARTS:
            raise CurveError(f"unknown chart {self.chart!r}")
        if x.ndim != 1 or x.shape != u.shape or x.size < 3:
            raise CurveError("x and u must be 1-d arrays of equal length >= 3")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
            raise CurveError("non-finite node coordinates")
        if np.any(u < 0):
            raise CurveError(f"negative radius at nodes {np.flatnonzero(u < 0).tolist()}")
        chords = np.hypot(np.diff(x), np.diff(u))
        bad = np.flatnonzero(chords <= 0)
        if bad.size:
            raise CurveError(f"coincident nodes at indices {[(int(i), int(i) + 1) for i in bad]}")
        lp, rp = self.pole_ends
        if lp and u[0] != 0.0 or rp and u[-1] != 0.0:
            raise CurveError("pole ends of a closed curve must sit on the axis")
        inner = u[1:-1]
        if np.any(inner == 0) or (not lp and u[0] == 0) or (not rp and u[-1] == 0):
            idx = np.flatnonzero(u == 0)
            raise CurveError(f"pinched input: zero radius at nodes {idx.tolist()}")
        if self.chart == "graph":
            if self.closure != "open":
                raise CurveError("graph chart is only used for open curves")
            if np.any(np.diff(x) <= 0):
                raise CurveError("graph chart requires strictly increasing x")

    # ------------------------------------------------------------------
    @property
    def n(self) -> int:
        return int(self.ambient_dim)

    @property
    def pole_ends(self) -> tuple[bool, bool]:
        return self.closure in ("closed", "capped"), self.closure == "closed"

    @property
    def nodes(self) -> np.ndarray:
        return np.column_stack([self.x, self.u])

    @property
    def size(self) -> int:
        return self.x.size

    def chords(self) -> np.ndarray:
        return np.hypot(np.diff(self.x), np.diff(self.u))

    def param(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.chords())])

    def length(self) -> float:
        return float(self.chords().sum())

    def with_nodes(self, x, u, **kw) -> "GeneratingCurve":
        return replace(self, x=np.asarray(x, float), u=np.asarray(u, float), **kw)

    def translated(self, dx: float) -> "GeneratingCurve":
        return self.with_nodes(self.x + dx, self.u)

    def scaled(self, s: float) -> "GeneratingCurve":
        return self.with_nodes(self.x * s, self.u * s)

    def reflected(self) -> "GeneratingCurve":
        """Mirror image under x -> -x (node order reversed)."""
        closure = self.closure
        if closure == "capped":
            raise CurveError("a capped curve is not closed under reflection")
        return self.with_nodes(-self.x[::-1], self.u[::-1])

    def diameter(self) -> float:
        """Euclidean diameter of the rotated hypersurface (infinite for open/capped)."""
        if self.closure != "closed":
            return math.inf
        return float(_diam_closed(self))

    def extent(self) -> float:
        """Diameter of the node set including its mirror image across the axis."""
        return float(_diam_closed(self))


def _diam_closed(c: GeneratingCurve) -> float:
    # the farthest pair lies on the meridian section (curve plus its
    # reflection), and among the vertices of its convex hull
    pts = np.column_stack([np.concatenate([c.x, c.x]), np.concatenate([c.u, -c.u])])
    try:
        pts = pts[ConvexHull(pts).vertices]
    except QhullError:
        pass                      # degenerate (collinear) set: use every point
    best = 0.0
    step = 2048
    for i in range(0, len(pts), step):
        d = ((pts[i:i + step, None, :] - pts[None, :, :]) ** 2).sum(axis=-1)
        best = max(best, float(d.max()))
    return math.sqrt(best)


# ----------------------------------------------------------------------
# ghost extension and finite differences
# ----------------------------------------------------------------------
def extend(curve: GeneratingCurve, layers: int = 1, f: np.ndarray | None = None):
    """Pad with mirror nodes: reflection across the axis at poles, across
    the end's normal line at open ends.  An optional scalar field ``f`` is
    padded evenly (both reflections preserve rotation-invariant scalars)."""
    x, u = curve.x, curve.u
    lp, rp = curve.pole_ends
    k = layers
    if curve.size <= k:
        raise CurveError("too few nodes for the requested ghost layers")
    lx = x[k:0:-1] if lp else 2 * x[0] - x[k:0:-1]
    lu = -u[k:0:-1] if lp else u[k:0:-1]
    rx = x[-2:-k - 2:-1] if rp else 2 * x[-1] - x[-2:-k - 2:-1]
    ru = -u[-2:-k - 2:-1] if rp else u[-2:-k - 2:-1]
    xe = np.concatenate([lx, x, rx])
    ue = np.concatenate([lu, u, ru])
    if f is None:
        return xe, ue
    fe = np.concatenate([f[k:0:-1], f, f[-2:-k - 2:-1]])
    return xe, ue, fe


def _stencil(xe: np.ndarray, ue: np.ndarray):
    h = np.hypot(np.diff(xe), np.diff(ue))
    h1, h2 = h[:-1], h[1:]
    return h1, h2


def diff12(fe: np.ndarray, h1: np.ndarray, h2: np.ndarray):
    """First and second derivatives of padded samples at interior points of
    a nonuniform grid (three-point quadratic fit)."""
    fm, f0, fp = fe[:-2], fe[1:-1], fe[2:]
    s = h1 + h2
    d1 = -h2 / (h1 * s) * fm + (h2 - h1) / (h1 * h2) * f0 + h1 / (h2 * s) * fp
    d2 = 2.0 * (fm / (h1 * s) - f0 / (h1 * h2) + fp / (h2 * s))
    return d1, d2


@dataclass
class Curvatures:
    """Pointwise geometry of every node."""

    kappa_axial: np.ndarray
    kappa_sphere: np.ndarray
    H: np.ndarray
    norm_A_sq: np.ndarray
    nu: np.ndarray
    speed: np.ndarray
    xs: np.ndarray
    us: np.ndarray
    n: int

    def lambda_sorted(self) -> np.ndarray:
        lam = np.column_stack([self.kappa_axial] + [self.kappa_sphere] * (self.n - 1))
        return np.sort(lam, axis=1)


@dataclass(frozen=True)
class CurvatureSample:
    kappa_axial: float
    kappa_sphere: float
    H: float
    norm_A_sq: float
    lambda_sorted: tuple
    nu: tuple


def curvatures(curve: GeneratingCurve) -> Curvatures:
    xe, ue = extend(curve, 1)
    h1, h2 = _stencil(xe, ue)
    x1, x2 = diff12(xe, h1, h2)
    u1, u2 = diff12(ue, h1, h2)
    sp = np.hypot(x1, u1)
    ka = (x2 * u1 - x1 * u2) / sp**3
    with np.errstate(divide="ignore", invalid="ignore"):
        ks = x1 / (curve.u * sp)
    pole = curve.u == 0
    ks[pole] = ka[pole]
    n = curve.n
    H = ka + (n - 1) * ks
    A2 = ka**2 + (n - 1) * ks**2
    nu = np.column_stack([-u1 / sp, x1 / sp])
    return Curvatures(ka, ks, H, A2, nu, sp, x1 / sp, u1 / sp, n)


def curvature_at(curve: GeneratingCurve, node_index: int) -> CurvatureSample:
    if curve.size < 5:
        raise CurveError("curvature needs at least 5 nodes")
    i = int(node_index)
    if not -curve.size <= i < curve.size:
        raise CurveError(f"node index {i} out of range")
    c = curvatures(curve)
    lam = tuple(float(v) for v in c.lambda_sorted()[i])
    return CurvatureSample(float(c.kappa_axial[i]), float(c.kappa_sphere[i]), float(c.H[i]),
                           float(c.norm_A_sq[i]), lam, tuple(float(v) for v in c.nu[i]))


def arc_derivatives(curve: GeneratingCurve, f: np.ndarray):
    """(f_s, f_ss) in arc length for a node field f."""
    xe, ue, fe = extend(curve, 1, np.asarray(f, float))
    h1, h2 = _stencil(xe, ue)
    x1, x2 = diff12(xe, h1, h2)
    u1, u2 = diff12(ue, h1, h2)
    f1, f2 = diff12(fe, h1, h2)
    v = np.hypot(x1, u1)
    v1 = (x1 * x2 + u1 * u2) / v
    fs = f1 / v
    fss = (f2 - f1 * v1 / v) / v**2
    return fs, fss


def laplace_beltrami(curve: GeneratingCurve, f: np.ndarray) -> np.ndarray:
    """Delta f = f_ss + (n-1) (u_s/u) f_s for rotation-invariant f."""
    fs, fss = arc_derivatives(curve, f)
    c = curvatures(curve)
    n = curve.n
    with np.errstate(divide="ignore", invalid="ignore"):
        out = fss + (n - 1) * c.us / curve.u * fs
    pole = curve.u == 0
    out[pole] = n * fss[pole]
    return out


def grad_A_sq(curve: GeneratingCurve) -> np.ndarray:
    """|nabla A|^2 = (kappa_axial')^2 + 3(n-1)(kappa_sphere')^2 on a surface of revolution."""
    c = curvatures(curve)
    ka_s, _ = arc_derivatives(curve, c.kappa_axial)
    ks_s, _ = arc_derivatives(curve, c.kappa_sphere)
    return ka_s**2 + 3 * (curve.n - 1) * ks_s**2


def position_dot_normal(curve: GeneratingCurve, c: Curvatures | None = None) -> np.ndarray:
    c = curvatures(curve) if c is None else c
    return curve.x * c.nu[:, 0] + curve.u * c.nu[:, 1]


# ----------------------------------------------------------------------
# resampling
# ----------------------------------------------------------------------
def _interpolants(curve: GeneratingCurve, method: str):
    k = min(3, curve.size - 1)
    xe, ue = extend(curve, k)
    se = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(xe), np.diff(ue)))])
    se -= se[k]
    if method == "pchip":
        return PchipInterpolator(se, xe), PchipInterpolator(se, ue)
    if method == "spline":
        return CubicSpline(se, xe), CubicSpline(se, ue)
    raise CurveError(f"unknown interpolation method {method!r}")


def _finish(curve: GeneratingCurve, xs: np.ndarray, us: np.ndarray) -> GeneratingCurve:
    lp, rp = curve.pole_ends
    xs[0], xs[-1] = curve.x[0], curve.x[-1]
    us[0] = 0.0 if lp else curve.u[0]
    us[-1] = 0.0 if rp else curve.u[-1]
    us = np.maximum(us, 0.0)
    return curve.with_nodes(xs, us)


def resample(curve: GeneratingCurve, target_spacing: float, method: str = "pchip",
             min_nodes: int = 9) -> GeneratingCurve:
    """Nodes equally spaced in chord length along a cubic interpolant."""
    h = float(target_spacing)
    if not h > 0:
        raise CurveError("target_spacing must be positive")
    s = curve.param()
    L = s[-1]
    if h > L:
        raise CurveError(f"target spacing {h} exceeds curve length {L}")
    fx, fu = _interpolants(curve, method)
    m = max(int(round(L / h)), min_nodes - 1)
    t = np.linspace(0.0, L, m + 1)
    for _ in range(8):
        px, pu = fx(t), fu(t)
        c = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(px), np.diff(pu)))])
        goal = np.linspace(0.0, c[-1], m + 1)
        if np.max(np.abs(c - goal)) < 1e-14 * c[-1]:
            break
        t = np.interp(goal, c, t)
    return _finish(curve, fx(t), fu(t))


def resample_adaptive(curve: GeneratingCurve, h_max: float, resolution: float = 0.25,
                      ratio: float = 10.0, min_nodes: int = 17, slope: float = 0.1,
                      method: str = "spline") -> GeneratingCurve:
    """Curvature-adapted nodes: spacing ~ resolution/|A|, clipped to
    [h_max/ratio, h_max] and Lipschitz-limited so neighbours grade smoothly."""
    s = curve.param()
    L = s[-1]
    A = np.sqrt(curvatures(curve).norm_A_sq)
    hmax = min(h_max, L / (min_nodes - 1))
    with np.errstate(divide="ignore"):
        h = np.clip(resolution / A, hmax / ratio, hmax)
    # h_i <- min_j (h_j + slope |s_i - s_j|), one sweep per direction
    h = np.minimum.accumulate(h - slope * s) + slope * s
    h = np.minimum.accumulate((h + slope * s)[::-1])[::-1] - slope * s
    dens = 1.0 / h
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(s))])
    m = max(int(math.ceil(cum[-1])), min_nodes - 1)
    t = np.interp(np.linspace(0.0, cum[-1], m + 1), cum, s)
    fx, fu = _interpolants(curve, method)
    return _finish(curve, fx(t), fu(t))


def polyline_deviation(points: np.ndarray, curve: GeneratingCurve) -> float:
    """Max distance from the given points to the polyline of ``curve``."""
    a = curve.nodes[:-1]
    b = curve.nodes[1:]
    ab = b - a
    L2 = np.einsum("ij,ij->i", ab, ab)
    worst = 0.0
    for p in np.atleast_2d(points):
        t = np.clip(np.einsum("ij,ij->i", p - a, ab) / L2, 0.0, 1.0)
        d = np.hypot(*(a + t[:, None] * ab - p).T)
        worst = max(worst, float(d.min()))
    return worst


# ----------------------------------------------------------------------
# noncollapsing and convexity
# ----------------------------------------------------------------------
@dataclass
class NoncollapseReport:
    alpha_interior: float
    alpha_exterior: float
    witness_pairs: list = field(default_factory=list)
    radius_interior: np.ndarray | None = None
    radius_exterior: np.ndarray | None = None

    @property
    def alpha(self) -> float:
        return min(self.alpha_interior, self.alpha_exterior)


def _require_positive(w: np.ndarray, label: str):
    bad = np.flatnonzero(~(w > 0))
    if bad.size:
        raise CurveError(f"{label} must be positive; fails first at node {int(bad[0])}")


def tangent_ball_radii(curve: GeneratingCurve, c: Curvatures | None = None, chunk: int = 1024):
    """Largest interior / exterior balls tangent at each node, avoiding the
    meridian section (curve and its mirror image across the axis)."""
    c = curvatures(curve) if c is None else c
    P = curve.nodes
    Q = np.vstack([P, P * np.array([1.0, -1.0])])
    N = P.shape[0]
    r_in = np.full(N, np.inf)
    r_out = np.full(N, np.inf)
    w_in = np.full(N, -1, dtype=int)
    w_out = np.full(N, -1, dtype=int)
    for i0 in range(0, N, chunk):
        p = P[i0:i0 + chunk]
        nu = c.nu[i0:i0 + chunk]
        d = p[:, None, :] - Q[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", d, d)
        t = np.einsum("ijk,ik->ij", d, nu)
        valid = d2 > 1e-24 * (1.0 + np.einsum("ij,ij->i", p, p))[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            rad = d2 / (2.0 * np.abs(t))
        inside = np.where(valid & (t > 0), rad, np.inf)
        outside = np.where(valid & (t < 0), rad, np.inf)
        rows = np.arange(p.shape[0])
        ji = inside.argmin(axis=1)
        jo = outside.argmin(axis=1)
        r_in[i0:i0 + chunk] = inside[rows, ji]
        r_out[i0:i0 + chunk] = outside[rows, jo]
        w_in[i0:i0 + chunk] = ji
        w_out[i0:i0 + chunk] = jo
    return r_in, r_out, w_in % N, w_out % N


def noncollapse_check(curve: GeneratingCurve, weight: np.ndarray | None = None) -> NoncollapseReport:
    """alpha = min_p r(p) * H(p) over interior (exterior) tangent balls.

    ``weight`` replaces H (e.g. the quantity (2-2t)H - <x,nu>)."""
    c = curvatures(curve)
    w = c.H if weight is None else np.asarray(weight, float)
    _require_positive(w, "mean curvature" if weight is None else "weight")
    r_in, r_out, w_in, w_out = tangent_ball_radii(curve, c)
    a_in = r_in * w
    a_out = r_out * w
    i_in = int(np.argmin(a_in))
    i_out = int(np.argmin(a_out))
    pairs = [(i_in, int(w_in[i_in])), (i_out, int(w_out[i_out]))]
    return NoncollapseReport(float(a_in[i_in]), float(a_out[i_out]), pairs, r_in, r_out)


def two_convexity_ratio(curve: GeneratingCurve) -> float:
    c = curvatures(curve)
    _require_positive(c.H, "mean curvature")
    lam = c.lambda_sorted()
    return float(np.min((lam[:, 0] + lam[:, 1]) / c.H))


# ----------------------------------------------------------------------
# profiles
# ----------------------------------------------------------------------
def _f(x):
    x = np.asarray(x, float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def smooth_step(x):
    """rho(x) = f(x)/(f(x)+f(1-x)), f(x) = exp(-1/x) on x > 0."""
    a, b = _f(x), _f(1.0 - np.asarray(x, float))
    return a / (a + b)


def smooth_step_derivs(x):
    """rho, rho', rho'', rho''' in closed form."""
    x = np.asarray(x, float)
    out = np.zeros((4,) + x.shape)
    out[0] = smooth_step(x)
    inner = (x > 0) & (x < 1)
    y = x[inner]
    # rho = 1/(1+e^g), g = 1/y - 1/(1-y)
    g1 = -1 / y**2 - 1 / (1 - y) ** 2
    g2 = 2 / y**3 - 2 / (1 - y) ** 3
    g3 = -6 / y**4 - 6 / (1 - y) ** 4
    r = out[0][inner]
    # sigma(z) = 1/(1+e^z): s' = -s(1-s), s'' = s(1-s)(1-2s), s''' = -s(1-s)(1-6s+6s^2)
    s1 = -r * (1 - r)
    s2 = r * (1 - r) * (1 - 2 * r)
    s3 = -r * (1 - r) * (1 - 6 * r + 6 * r * r)
    out[1][inner] = s1 * g1
    out[2][inner] = s2 * g1**2 + s1 * g2
    out[3][inner] = s3 * g1**3 + 3 * s2 * g1 * g2 + s1 * g3
    return out


def eta_k(x, m: int, k: int, W: float, R0: float):
    """The flared neck profile: radius 1/(k+1) at the centre, 1 on the plateau."""
    x = np.asarray(x, float)
    y = np.abs(x) / (2.0 * R0)
    j = np.arange(1, k * m + 1)
    # eta(y - j) = rho(y - j - 2W)/m; the mirrored term vanishes for y >= 0
    acc = smooth_step(y[..., None] - j - 2.0 * W).sum(axis=-1) / m
    return (1.0 + acc) / (k + 1)


def eta_k_derivs(x, m: int, k: int, W: float, R0: float):
    """Derivatives 0..3 of eta_k (signs follow |x|)."""
    x = np.asarray(x, float)
    y = np.abs(x) / (2.0 * R0)
    j = np.arange(1, k * m + 1)
    d = smooth_step_derivs(y[..., None] - j - 2.0 * W).sum(axis=-1) / (m * (k + 1))
    sgn = np.where(x < 0, -1.0, 1.0)
    out = np.empty_like(d)
    out[0] = d[0] + 1.0 / (k + 1)
    for l in range(1, 4):
        out[l] = d[l] * (sgn**l) / (2.0 * R0) ** l
    return out


def eta_k_plateau_start(m: int, k: int, W: float, R0: float) -> float:
    return 2.0 * R0 * (k * m + 2.0 * W + 1.0)


def build_profile_eta_k(m: int, k: int, W: float, R0: float, h: float = 0.05,
                        margin: float | None = None, n: int = 3) -> GeneratingCurve:
    """Open graph curve of eta_k on a symmetric interval reaching the plateau."""
    if m < 1 or k < 1 or int(m) != m or int(k) != k:
        raise CurveError("m and k must be integers >= 1")
    if not (W > 0 and R0 > 0 and h > 0):
        raise CurveError("W, R0 and h must be positive")
    X = eta_k_plateau_start(m, k, W, R0) + (2.0 * R0 if margin is None else margin)
    N = int(math.ceil(2 * X / h))
    x = np.linspace(-X, X, N + 1)
    return GeneratingCurve(n, x, eta_k(x, m, k, W, R0), closure="open", chart="graph")


def check_k_m_constraint(m: int, k: int, n: int, t1: float) -> bool:
    """The profile construction needs k^2 m^2 > 2 n t1."""
    return k * k * m * m > 2 * n * t1


# ----------------------------------------------------------------------
# standard shapes
# ----------------------------------------------------------------------
def _arc_points(total: float, h: float, min_nodes: int) -> np.ndarray:
    m = max(int(round(total / h)), min_nodes - 1)
    return np.linspace(0.0, total, m + 1)


def sphere(n: int, R: float, h: float, center: float = 0.0, min_nodes: int = 17) -> GeneratingCurve:
    s = _arc_points(math.pi * R, h, min_nodes)
    th = s / R
    x = center - R * np.cos(th)
    u = R * np.sin(th)
    u[0] = u[-1] = 0.0
    return GeneratingCurve(n, x, u, closure="closed")


def cylinder(n: int, radius: float, half_length: float, h: float) -> GeneratingCurve:
    m = max(int(round(2 * half_length / h)), 4)
    x = np.linspace(-half_length, half_length, m + 1)
    return GeneratingCurve(n, x, np.full_like(x, radius), closure="open", chart="graph")


def _pill_point(s, radius, a, b):
    """Point at arc length s along hemisphere(a) + segment [a,b] + hemisphere(b)."""
    q = 0.5 * math.pi * radius
    x = np.empty_like(s)
    u = np.empty_like(s)
    c1 = s <= q
    th = s[c1] / radius
    x[c1] = a - radius * np.cos(th)
    u[c1] = radius * np.sin(th)
    c2 = (s > q) & (s <= q + (b - a))
    x[c2] = a + (s[c2] - q)
    u[c2] = radius
    c3 = s > q + (b - a)
    th = (s[c3] - q - (b - a)) / radius + 0.5 * math.pi
    x[c3] = b - radius * np.cos(th)
    u[c3] = radius * np.sin(th)
    return x, u


def capsule(n: int, radius: float, cyl_half_length: float, h: float,
            min_nodes: int = 17) -> GeneratingCurve:
    """Round cylinder on |x| <= cyl_half_length closed by hemispheres."""
    a, b = -cyl_half_length, cyl_half_length
    total = math.pi * radius + (b - a)
    s = _arc_points(total, h, min_nodes)
    x, u = _pill_point(s, radius, a, b)
    u[0] = u[-1] = 0.0
    x[-1] = b + radius
    return GeneratingCurve(n, x, u, closure="closed")


def capped_cylinder(n: int, radius: float, length: float, h: float) -> GeneratingCurve:
    """Hemisphere centred at the origin (pole at x = -radius) continued by a
    half-infinite cylinder along +x; nodes stop at x = length."""
    q = 0.5 * math.pi * radius
    s = _arc_points(q + length, h, 9)
    x = np.where(s <= q, -radius * np.cos(np.minimum(s, q) / radius), s - q)
    u = np.where(s <= q, radius * np.sin(np.minimum(s, q) / radius), radius)
    u[0] = 0.0
    return GeneratingCurve(n, x, u, closure="capped")


def close_with_caps(curve: GeneratingCurve, h: float | None = None) -> GeneratingCurve:
    """Close an open curve whose ends are cylindrical with hemispheres of
    the end radii (a long pill)."""
    if curve.closure != "open":
        raise CurveError("only open curves can be closed with caps")
    h = float(np.median(curve.chords())) if h is None else h
    x, u = curve.x, curve.u
    rl, rr = u[0], u[-1]
    ml = max(int(round(0.5 * math.pi * rl / h)), 4)
    mr = max(int(round(0.5 * math.pi * rr / h)), 4)
    tl = np.linspace(0.0, 0.5 * math.pi, ml + 1)[:-1]
    tr = np.linspace(0.5 * math.pi, math.pi, mr + 1)[1:]
    xl = x[0] - rl * np.cos(tl)
    ul = rl * np.sin(tl)
    xr = x[-1] - rr * np.cos(tr)
    ur = rr * np.sin(tr)
    ul[0] = 0.0
    ur[-1] = 0.0
    return GeneratingCurve(curve.n, np.concatenate([xl, x, xr]), np.concatenate([ul, u, ur]),
                           closure="closed", component_id=curve.component_id)


# ----------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------
def _meta_path(path: Path) -> Path:
    return path.with_suffix(".meta.json")


def write_curve(curve: GeneratingCurve, path) -> Path:
    path = Path(path)
    lines = ["axial,radius"]
    lines += [f"{a:.17g},{r:.17g}" for a, r in zip(curve.x.tolist(), curve.u.tolist())]
    path.write_text("\n".join(lines) + "\n")
    meta = {"ambient_dim": curve.n, "chart": curve.chart, "closure": curve.closure,
            "component_id": curve.component_id}
    _meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def read_curve(path, ambient_dim: int | None = None) -> GeneratingCurve:
    path = Path(path)
    text = path.read_text().strip().splitlines()
    if not text or text[0].strip().replace(" ", "") != "axial,radius":
        raise CurveError(f"{path}: expected header 'axial,radius'")
    xs, us = [], []
    for ln, line in enumerate(text[1:], start=2):
        parts = line.split(",")
        if len(parts) != 2:
            raise CurveError(f"{path}:{ln}: expected two columns")
        try:
            xs.append(float(parts[0]))
            us.append(float(parts[1]))
        except ValueError as exc:
            raise CurveError(f"{path}:{ln}: {exc}") from None
    meta = {"ambient_dim": ambient_dim, "chart": "parametric", "closure": "closed", "component_id": 0}
    mp = _meta_path(path)
    if mp.exists():
        loaded = json.loads(mp.read_text())
        unknown = set(loaded) - set(meta)
        if unknown:
            raise CurveError(f"{mp}: unknown metadata keys {sorted(unknown)}")
        meta.update(loaded)
    if meta["ambient_dim"] is None:
        raise CurveError(f"{path}: ambient_dim missing (no metadata sidecar)")
    return GeneratingCurve(int(meta["ambient_dim"]), np.array(xs), np.array(us), closure=meta["closure"],
                           chart=meta["chart"], component_id=int(meta["component_id"]))
