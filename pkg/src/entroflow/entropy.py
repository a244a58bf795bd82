"""Gaussian F-functionals and entropy of hypersurfaces of revolution.

For x0 at axial position b and distance rho0 from the axis,

    F_{x0,r} = (4 pi r)^{-n/2} int u^{n-1} |gamma'| e^{-((x-b)^2 + u^2 + rho0^2)/4r}
               S(u rho0 / 2r) dsigma,

with S the integral of e^{a cos theta} over the unit (n-1)-sphere.  The
curve is integrated on its cubic interpolant with Gauss-Kronrod panels;
cylindrical tails of open curves are integrated in closed form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special

from .axigeom import CurveError, GeneratingCurve, _interpolants, curvatures

# Gauss-Kronrod 7-15 nodes on [-1, 1]
_XK = np.array([0.991455371120812639, 0.949107912342758525, 0.864864423359769073,
                0.741531185599394440, 0.586087235467691130, 0.405845151377397167,
                0.207784955007898468, 0.0])
_WK = np.array([0.022935322010529225, 0.063092092629978553, 0.104790010322250184,
                0.140653259715525919, 0.169004726639267903, 0.190350578064785410,
                0.204432940075298892, 0.209482141084727828])
_WG = np.array([0.129484966168869693, 0.279705391489276668, 0.381830050505118945,
                0.417959183673469388])
GK_NODES = np.concatenate([-_XK[:-1], _XK[::-1]])
GK_WK = np.concatenate([_WK[:-1], _WK[::-1]])
GK_WG = np.zeros(15)
GK_WG[[1, 3, 5, 7, 9, 11, 13]] = np.concatenate([_WG[:-1], _WG[::-1]])

GL_NODES, GL_W = np.polynomial.legendre.leggauss(5)

PRUNE_EXPONENT = 60.0


class QuadratureError(ArithmeticError):
    pass


def sphere_area(k: int) -> float:
    """|S^k|."""
    return 2.0 * math.pi ** ((k + 1) / 2.0) / math.gamma((k + 1) / 2.0)


def shrinker_entropy(k: int) -> float:
    """Entropy of the round k-sphere (and of S^k x R^{n-k})."""
    return (2 * math.pi) ** (-k / 2) * k ** (k / 2) * math.exp(-k / 2) * sphere_area(k)


# ----------------------------------------------------------------------
# fiber integral
# ----------------------------------------------------------------------
def fiber_integral_log(a: float, n: int, tol: float = 1e-13) -> float:
    """log S(a) by adaptive quadrature over the polar angle."""
    if n < 2 or a < 0:
        raise ValueError("need n >= 2 and a >= 0")
    a = float(a)
    if n == 2:
        val, _ = integrate.quad(lambda t: math.exp(a * (math.cos(t) - 1.0)), 0.0, math.pi,
                                epsabs=0, epsrel=tol, limit=200)
        return a + math.log(2.0 * val)
    val, _ = integrate.quad(lambda t: math.exp(a * (math.cos(t) - 1.0)) * math.sin(t) ** (n - 2),
                            0.0, math.pi, epsabs=0, epsrel=tol, limit=200)
    return a + math.log(sphere_area(n - 2) * val)


def fiber_integral(a: float, n: int) -> float:
    return math.exp(fiber_integral_log(a, n))


def log_fiber_scaled(a, n: int):
    """log S(a) - a through S(a) = (2 pi)^{n/2} a^{1-n/2} I_{n/2-1}(a)."""
    a = np.asarray(a, float)
    nu = 0.5 * n - 1.0
    out = np.empty_like(a)
    small = a < 1e-8
    out[small] = math.log(sphere_area(n - 1)) - a[small]
    big = ~small
    ab = a[big]
    if n == 3:
        # S(a) = 4 pi sinh(a) / a
        out[big] = math.log(2 * math.pi) + np.log(-np.expm1(-2 * ab)) - np.log(ab)
        return out
    if n == 2:
        ie = special.i0e(ab)
    elif n == 4:
        ie = special.i1e(ab)
    else:
        ie = special.ive(nu, ab)
    out[big] = 0.5 * n * math.log(2 * math.pi) - nu * np.log(ab) + np.log(ie)
    return out


# ----------------------------------------------------------------------
# parameters and results
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class FParams:
    b: float
    rho0: float
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError(f"scale r must be positive, got {self.r}")
        if self.rho0 < 0:
            raise ValueError(f"radial offset must be nonnegative, got {self.rho0}")

    def key(self):
        return (self.b, self.rho0, self.r)


@dataclass
class EntropyResult:
    value: float
    argmax: FParams
    evaluations: int
    truncation_radius_used: float
    scale_cap: float
    error_bar: float = 0.0
    grid: np.ndarray | None = field(default=None, repr=False)

    def as_record(self) -> dict:
        return {"value": self.value, "argmax": {"b": self.argmax.b, "rho0": self.argmax.rho0,
                                                 "r": self.argmax.r},
                "error_bar": self.error_bar, "evaluations": self.evaluations,
                "scale_cap": self.scale_cap, "truncation_radius": self.truncation_radius_used}


@dataclass(frozen=True)
class TruncationBound:
    R: float
    epsilon: float
    r1: float
    C: float
    n: int


def annulus_bound(R: float, r1: float, C: float, n: int, terms: int | None = None) -> float:
    """sum_k C [((k+1)R)^n - (kR)^n] e^{-(kR)^2/4r1} over k >= 1."""
    if terms is None:
        terms = int(math.ceil(math.sqrt(4 * r1 * 800.0) / R)) + 2
    k = np.arange(1, terms + 1, dtype=float)
    logs = math.log(C) + n * math.log(R) + np.log((k + 1) ** n - k**n) - (k * R) ** 2 / (4 * r1)
    return float(np.exp(logs).sum())


def truncation_radius(r1: float, epsilon: float, C: float, n: int = 2) -> TruncationBound:
    """Smallest dyadic R whose annulus bound is at most epsilon."""
    if not (r1 > 0 and epsilon > 0 and C > 0):
        raise ValueError("r1, epsilon and C must be positive")
    j = int(math.floor(math.log2(math.sqrt(r1)))) - 4
    for _ in range(200):
        R = 2.0**j
        eps = annulus_bound(R, r1, C, n)
        if eps <= epsilon:
            return TruncationBound(R, eps, r1, C, n)
        j += 1
    raise ArithmeticError("no dyadic truncation radius found")


# ----------------------------------------------------------------------
# quadrature on a curve
# ----------------------------------------------------------------------
class CurveQuadrature:
    """Cubic interpolant of a generating curve with cached panel rules."""

    def __init__(self, curve: GeneratingCurve, ball: float | None = None):
        self.curve = curve
        self.n = curve.n
        self.fx, self.fu = _interpolants(curve, "spline")
        self.dfx, self.dfu = self.fx.derivative(), self.fu.derivative()
        self.sigma = curve.param()
        self.ball = ball
        self.intervals = self._domain(ball)
        self.tails = self._tails(ball)
        self._coarse = {}
        self.evaluations = 0
        lo, hi = self.intervals[:, 0], self.intervals[:, 1]
        # base panels: node segments clipped to the domain
        edges = []
        for a, b in zip(lo, hi):
            inner = self.sigma[(self.sigma > a) & (self.sigma < b)]
            e = np.concatenate([[a], inner, [b]])
            edges.append(np.column_stack([e[:-1], e[1:]]))
        self.base = np.vstack(edges)
        self._base_cache = None
        self._boxes()

    def _boxes(self, block: int = 64):
        # conservative boxes of every base panel (nodes +- the chord length
        # covered, which bounds the spline's excursion) and of panel blocks
        panels = self.base
        lo = np.interp(panels[:, 0], self.sigma, np.arange(self.sigma.size))
        hi = np.interp(panels[:, 1], self.sigma, np.arange(self.sigma.size))
        i0 = np.floor(lo).astype(int)
        i1 = np.minimum(np.ceil(hi).astype(int), self.sigma.size - 1)
        x, u = self.curve.x, self.curve.u
        pad = self.sigma[i1] - self.sigma[i0]
        xa = np.minimum(x[i0], x[i1]) - pad
        xb = np.maximum(x[i0], x[i1]) + pad
        ua = np.minimum(u[i0], u[i1]) - pad
        ub = np.maximum(u[i0], u[i1]) + pad
        ln = panels[:, 1] - panels[:, 0]
        self._box = (xa, xb, ua, ub, ln)
        starts = np.arange(0, panels.shape[0], block)
        self._block_starts = starts
        self._block_counts = np.diff(np.append(starts, panels.shape[0]))
        self._bbox = (np.minimum.reduceat(xa, starts), np.maximum.reduceat(xb, starts),
                      np.minimum.reduceat(ua, starts), np.maximum.reduceat(ub, starts),
                      np.add.reduceat(ln, starts))

    # -- geometry helpers
    def _domain(self, ball):
        s = self.sigma
        if ball is None:
            return np.array([[0.0, s[-1]]])
        g = lambda t: self.fx(t) ** 2 + self.fu(t) ** 2 - ball * ball
        vals = g(s)
        inside = vals <= 0
        if not inside.any():
            raise CurveError(f"curve does not meet the ball of radius {ball}")
        pts = []
        for i in np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:])):
            if vals[i] == 0:
                continue
            pts.append(optimize.brentq(g, s[i], s[i + 1], xtol=1e-15))
        cuts = np.concatenate([[0.0], pts, [s[-1]]])
        mids = 0.5 * (cuts[:-1] + cuts[1:])
        keep = g(mids) <= 0
        return np.column_stack([cuts[:-1], cuts[1:]])[keep]

    def _tails(self, ball):
        c = self.curve
        out = []
        lp, rp = c.pole_ends
        if not lp:
            out.append((c.x[0], c.u[0], -1.0 if c.x[1] > c.x[0] else 1.0))
        if not rp:
            out.append((c.x[-1], c.u[-1], 1.0 if c.x[-1] > c.x[-2] else -1.0))
        res = []
        for x_end, rad, sgn in out:
            if ball is None:
                res.append((x_end, rad, sgn, math.inf))
            else:
                if rad >= ball:
                    continue
                lim = math.sqrt(ball * ball - rad * rad)
                far = sgn * lim
                if (far - x_end) * sgn > 0:
                    res.append((x_end, rad, sgn, far))
        return res

    def points(self, panels: np.ndarray, nodes: np.ndarray):
        mid = 0.5 * (panels[:, 0] + panels[:, 1])
        hl = 0.5 * (panels[:, 1] - panels[:, 0])
        t = mid[:, None] + hl[:, None] * nodes[None, :]
        x = self.fx(t)
        u = np.abs(self.fu(t))
        v = np.hypot(self.dfx(t), self.dfu(t))
        return x, u, v, hl

    # -- integrand
    def _log_integrand(self, x, u, v, p: FParams):
        n = self.n
        a = u * p.rho0 / (2 * p.r)
        with np.errstate(divide="ignore"):
            base = (n - 1) * np.log(u) + np.log(v)
        return base - ((x - p.b) ** 2 + (u - p.rho0) ** 2) / (4 * p.r) + log_fiber_scaled(a, n)

    def _log_integrand_w(self, x, u, lw, p: FParams):
        # same as _log_integrand with the geometric log-weight precomputed
        e = lw - ((x - p.b) ** 2 + (u - p.rho0) ** 2) / (4 * p.r)
        if p.rho0 == 0.0:
            return e + math.log(sphere_area(self.n - 1))
        return e + log_fiber_scaled(u * p.rho0 / (2 * p.r), self.n)

    def _tail_value(self, p: FParams) -> float:
        n = self.n
        total = 0.0
        for x_end, c, sgn, far in self.tails:
            a = c * p.rho0 / (2 * p.r)
            pre = (n - 1) * math.log(c) - (c - p.rho0) ** 2 / (4 * p.r) + float(log_fiber_scaled(np.array([a]), n)[0])
            z0 = sgn * (x_end - p.b) / (2 * math.sqrt(p.r))
            if math.isinf(far):
                g = special.erfc(z0)
            else:
                z1 = sgn * (far - p.b) / (2 * math.sqrt(p.r))
                g = special.erfc(z0) - special.erfc(z1)
            total += math.exp(pre) * math.sqrt(math.pi * p.r) * g
        return total

    def _far(self, box, p: FParams):
        """Exponent lower bound over each box and an area bound for it."""
        xa, xb, ua, ub, ln = box
        dx = np.maximum(np.maximum(xa - p.b, p.b - xb), 0.0)
        du = np.maximum(np.maximum(ua - p.rho0, p.rho0 - ub), 0.0)
        e = (dx * dx + du * du) / (4 * p.r)
        far = e > PRUNE_EXPONENT
        return far, e

    def _bound(self, box, e, sel):
        xa, xb, ua, ub, ln = box
        area = np.maximum(ub[sel], 0) ** (self.n - 1) * ln[sel] * 1.5
        return float((area * np.exp(-np.minimum(e[sel], 700.0))).sum()) * sphere_area(self.n - 1)

    def select_panels(self, p: FParams):
        """Base panels that can carry weight above e^{-PRUNE_EXPONENT}, and
        a bound on what the dropped ones carry."""
        bfar, be = self._far(self._bbox, p)
        err = self._bound(self._bbox, be, bfar)
        keep = np.repeat(~bfar, self._block_counts)
        idx = np.flatnonzero(keep)
        box = tuple(a[idx] for a in self._box)
        far, e = self._far(box, p)
        err += self._bound(box, e, far)
        return idx[~far], err

    def _base_points(self):
        # GK15 points of the base panels, computed once per curve
        if self._base_cache is None:
            x, u, v, hl = self.points(self.base, GK_NODES)
            with np.errstate(divide="ignore"):
                lw = (self.n - 1) * np.log(u) + np.log(v)
            self._base_cache = (x, u, lw, hl)
        return self._base_cache

    def evaluate(self, p: FParams, rtol: float = 1e-8, atol: float = 1e-14, max_iter: int = 60):
        """Adaptive GK15 value of F and its error bar."""
        self.evaluations += 1
        norm = (4 * math.pi * p.r) ** (-self.n / 2)
        idx, err_trunc = self.select_panels(p)
        panels = self.base[idx]
        done_val = 0.0
        done_err = 0.0
        tail = self._tail_value(p)
        for it in range(max_iter):
            if panels.shape[0] == 0:
                break
            if it == 0:
                bx, bu, blw, bhl = self._base_points()
                x, u, hl = bx[idx], bu[idx], bhl[idx]
                f = np.exp(self._log_integrand_w(x, u, blw[idx], p))
            else:
                x, u, v, hl = self.points(panels, GK_NODES)
                f = np.exp(self._log_integrand(x, u, v, p))
            K = (f @ GK_WK) * hl
            G = (f @ GK_WG) * hl
            err = np.abs(K - G)
            total = done_val + K.sum() + tail
            goal = max(rtol * abs(total), atol / norm)
            if done_err + err.sum() <= goal:
                done_val += K.sum()
                done_err += err.sum()
                panels = panels[:0]
                break
            share = goal / max(panels.shape[0], 1)
            bad = err > 0.5 * share
            done_val += K[~bad].sum()
            done_err += err[~bad].sum()
            sel = panels[bad]
            mid = 0.5 * (sel[:, 0] + sel[:, 1])
            if np.any(sel[:, 1] - sel[:, 0] < 1e-13 * (1 + self.sigma[-1])):
                raise QuadratureError(f"panel collapse near sigma={float(mid[0]):.6g}")
            panels = np.vstack([np.column_stack([sel[:, 0], mid]), np.column_stack([mid, sel[:, 1]])])
        else:
            w = int(np.argmax(err))
            raise QuadratureError(f"no convergence; worst panel {panels[w].tolist()} error {err[w]:.3e}")
        value = norm * (done_val + tail)
        return value, norm * (done_err + err_trunc)

    # -- coarse fixed rule for grid scans
    def coarse_rule(self, panel_len: float, centres=None, reach: float | None = None):
        """Fixed Gauss-Legendre points on panels of length ~panel_len, sorted
        by x.  With centres and reach only base panels whose box comes within
        reach of some centre are covered (not cached)."""
        key = round(math.log(panel_len), 1)
        if centres is not None:
            xa, xb = self._box[0], self._box[1]
            near = np.zeros(self.base.shape[0], bool)
            for c in np.asarray(centres, float):
                near |= (xb >= c - reach) & (xa <= c + reach)
            base = self.base[near]
            if base.shape[0] == 0:
                return np.zeros(0), np.zeros(0), np.zeros(0)
            return self._rule_on(base, math.exp(key))
        if key not in self._coarse:
            self._coarse[key] = self._rule_on(self.intervals, math.exp(key))
        return self._coarse[key]

    def _rule_on(self, spans: np.ndarray, pl: float):
        m = np.maximum(np.ceil((spans[:, 1] - spans[:, 0]) / pl).astype(int), 1)
        owner = np.repeat(np.arange(spans.shape[0]), m)
        k = np.arange(owner.size) - np.repeat(np.cumsum(m) - m, m)
        w = (spans[owner, 1] - spans[owner, 0]) / m[owner]
        a = spans[owner, 0] + k * w
        panels = np.column_stack([a, a + w])
        x, u, v, hl = self.points(panels, GL_NODES)
        with np.errstate(divide="ignore"):
            logw = (self.n - 1) * np.log(u) + np.log(v * GL_W[None, :] * hl[:, None])
        x, u, logw = x.ravel(), u.ravel(), logw.ravel()
        order = np.argsort(x, kind="stable")
        return x[order], u[order], logw[order]


def f_functional(curve: GeneratingCurve, params: FParams, rtol: float = 1e-8,
                 return_error: bool = False, ball: float | None = None):
    q = CurveQuadrature(curve, ball=ball)
    val, err = q.evaluate(params, rtol=rtol)
    return (val, err) if return_error else val


def weighted_area(curve: GeneratingCurve, rtol: float = 1e-11) -> float:
    """int e^{-|x|^2/4} dmu = (4 pi)^{n/2} F_{0,1}."""
    return (4 * math.pi) ** (curve.n / 2) * f_functional(curve, FParams(0.0, 0.0, 1.0), rtol=rtol)


# ----------------------------------------------------------------------
# entropy search
# ----------------------------------------------------------------------
@dataclass
class SearchConfig:
    n_b: int = 33
    n_rho: int = 17
    n_r: int = 33
    starts: int = 3
    rtol: float = 1e-9
    tol_value: float = 1e-6
    r_min: float | None = None
    r_max: float | None = None
    keep_grid: bool = False
    warm_start: FParams | None = None

    def __post_init__(self):
        for name in ("n_b", "n_rho", "n_r", "starts"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        for name in ("rtol", "tol_value", "r_min", "r_max"):
            v = getattr(self, name)
            if v is None and name in ("r_min", "r_max"):
                continue
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
                raise ValueError(f"{name} must be a positive number, got {v!r}")
        if self.r_min is not None and self.r_max is not None and self.r_min >= self.r_max:
            raise ValueError("r_min must be below r_max")

    @classmethod
    def from_dict(cls, d: dict | None) -> "SearchConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown entropy search keys {sorted(unknown)}")
        return cls(**d)


def _scan(q: CurveQuadrature, bs, rhos, rs):
    """F on the (b, rho0, r) grid with the coarse rule; returns array [b, rho, r]."""
    n = q.n
    out = np.zeros((bs.size, rhos.size, rs.size))
    kappa = np.sqrt(curvatures(q.curve).norm_A_sq.max())
    span = float(q.curve.x.max() - q.curve.x.min())
    for k, r in enumerate(rs):
        # resolve the geometry, but never finer than a fiftieth of the Gaussian width
        pl = max(min(0.25 * math.sqrt(r), 0.3 / max(kappa, 1e-12)), 0.02 * math.sqrt(r), 1e-4)
        W = math.sqrt(4 * r * 50.0)
        if 2 * W * bs.size < 0.5 * span:
            # the windows cover little of the curve: build the rule only there
            x, u, logw = q.coarse_rule(pl, centres=bs, reach=W)
        else:
            x, u, logw = q.coarse_rule(pl)
        norm = (4 * math.pi * r) ** (-n / 2)
        for i, b in enumerate(bs):
            lo, hi = np.searchsorted(x, [b - W, b + W])
            if hi <= lo:
                continue
            xs, us, lw = x[lo:hi], u[lo:hi], logw[lo:hi]
            base = lw - (xs - b) ** 2 / (4 * r)
            a = us[None, :] * rhos[:, None] / (2 * r)
            e = base[None, :] - (us[None, :] - rhos[:, None]) ** 2 / (4 * r) + log_fiber_scaled(a, n)
            out[i, :, k] = norm * np.exp(e).sum(axis=1)
        if q.tails:
            for i, b in enumerate(bs):
                for j, rho in enumerate(rhos):
                    out[i, j, k] += norm * q._tail_value(FParams(b, rho, r))
    return out


def _search_box(curve: GeneratingCurve, cfg: SearchConfig, ball: float | None):
    x, u = curve.x, curve.u
    if ball is not None:
        inside = x * x + u * u <= ball * ball
        x, u = x[inside], u[inside]
    xmin, xmax = float(x.min()), float(x.max())
    umax = float(u.max())
    if cfg.r_max is not None:
        r1 = cfg.r_max
    elif ball is not None:
        r1 = (2 * ball) ** 2
    else:
        r1 = curve.extent() ** 2
    if cfg.r_min is not None:
        r0 = cfg.r_min
    else:
        A2 = float(curvatures(curve).norm_A_sq.max())
        r0 = min(0.05 / A2, 1e-6 * r1)
        r0 = max(r0, (0.05 * float(np.median(curve.chords()))) ** 2)
        r0 = min(r0, 0.05 / A2)
    return xmin, xmax, umax, r0, r1


def entropy(curve: GeneratingCurve, search_cfg: SearchConfig | dict | None = None,
            ball: float | None = None) -> EntropyResult:
    """sup F over centres in the convex hull and scales up to r1 = diam^2."""
    cfg = search_cfg if isinstance(search_cfg, SearchConfig) else SearchConfig.from_dict(search_cfg)
    q = CurveQuadrature(curve, ball=ball)
    xmin, xmax, umax, r0, r1 = _search_box(curve, cfg, ball)
    lo = np.array([xmin, 0.0, math.log(r0)])
    hi = np.array([xmax, umax, math.log(r1)])
    cache: dict = {}
    grid_evals = 0

    def F(z):
        z = np.minimum(np.maximum(z, lo), hi)
        key = tuple(float(v) for v in z)
        if key not in cache:
            val, err = q.evaluate(FParams(key[0], key[1], math.exp(key[2])), rtol=cfg.rtol)
            cache[key] = (val, err)
        return cache[key][0], key

    spans = hi - lo
    if cfg.warm_start is not None:
        w = cfg.warm_start
        starts = [np.array([w.b, w.rho0, math.log(w.r)])]
        step0 = np.array([spans[0] / (cfg.n_b - 1), spans[1] / (cfg.n_rho - 1), spans[2] / (cfg.n_r - 1)])
        step0 = np.minimum(step0, [0.25 * math.sqrt(w.r) + 1e-12, 0.25 * math.sqrt(w.r) + 1e-12, 0.25])
        grid = None
    else:
        bs = np.linspace(xmin, xmax, cfg.n_b)
        rhos = np.linspace(0.0, umax, cfg.n_rho)
        lrs = np.linspace(lo[2], hi[2], cfg.n_r)
        vals = _scan(q, bs, rhos, np.exp(lrs))
        grid_evals = vals.size
        grid = None
        if cfg.keep_grid:
            B, P, L = np.meshgrid(bs, rhos, np.exp(lrs), indexing="ij")
            grid = np.column_stack([B.ravel(), P.ravel(), L.ravel(), vals.ravel()])
        flat = np.argsort(-vals.ravel(), kind="stable")
        starts = []
        step0 = np.array([bs[1] - bs[0] if bs.size > 1 else 1.0,
                          rhos[1] - rhos[0] if rhos.size > 1 else 1.0,
                          lrs[1] - lrs[0]])
        for idx in flat:
            i, j, k = np.unravel_index(idx, vals.shape)
            z = np.array([bs[i], rhos[j], lrs[k]])
            if all(np.any(np.abs(z - s) > 1.5 * step0) for s in starts):
                starts.append(z)
            if len(starts) >= cfg.starts:
                break
    step0 = np.where(step0 > 0, step0, 1.0)

    def explore(z, cur, step):
        # Hooke-Jeeves exploratory sweep: one axis at a time, keep any gain
        z = z.copy()
        for d in range(3):
            for sgn in (1.0, -1.0):
                zz = z.copy()
                zz[d] += sgn * step[d]
                val, kk = F(zz)
                if val > cur + gain_tol and kk != tuple(z):
                    cur, z = val, np.array(kk)
                    break
        return z, cur

    tol_step = np.array([1e-5, 1e-5, 1e-6])
    # gains far below the value tolerance are not worth a move (flat ridges
    # along cylindrical stretches would otherwise be crawled step by step)
    gain_tol = 1e-3 * cfg.tol_value
    best_val, best_key = -math.inf, None
    for z in starts:
        cur, key = F(z)
        z = np.array(key)
        step = step0.copy()
        while True:
            scale = np.array([math.sqrt(math.exp(z[2]))] * 2 + [1.0])
            if np.all(step <= tol_step * scale):
                break
            zn, vn = explore(z, cur, step)
            if vn <= cur + gain_tol:
                step *= 0.5
                continue
            # pattern moves along the accumulated displacement
            while True:
                base, cur = zn, vn
                vt, trial = F(base + (base - z))
                z = base
                zn, vn = explore(np.array(trial), vt, step)
                if vn <= cur + gain_tol:
                    break
        if cur > best_val or (cur == best_val and key_lt(tuple(z), best_key)):
            best_val, best_key = cur, tuple(float(v) for v in z)

    _, err = cache[best_key]
    arg = FParams(best_key[0], best_key[1], math.exp(best_key[2]))
    n = curve.n
    vol_C = _volume_constant(curve)
    tb = truncation_radius(r1, 1e-8, vol_C, n)
    res = EntropyResult(best_val, arg, len(cache) + grid_evals, tb.R, r1, err + cfg.tol_value, grid)
    return res


def key_lt(a, b) -> bool:
    return b is None or a < b


def _volume_constant(curve: GeneratingCurve) -> float:
    """Crude Euclidean volume-growth constant: area of the profile's orbit
    per unit length, max over the curve."""
    n = curve.n
    return float(sphere_area(n - 1) * max(curve.u.max(), 1e-12) ** (n - 1) * 2.0 + 1.0)


def entropy_local_diff(curve_a: GeneratingCurve, curve_b: GeneratingCurve, R: float,
                       search_cfg: SearchConfig | dict | None = None) -> float:
    """|lambda(a in B(0,R)) - lambda(b in B(0,R))| with a shared search box."""
    for c in (curve_a, curve_b):
        if np.max(np.hypot(c.x, c.u)) < R and c.closure != "open":
            raise CurveError("curve does not cover the ball")
    cfg = search_cfg if isinstance(search_cfg, SearchConfig) else SearchConfig.from_dict(search_cfg)
    la = entropy(curve_a, cfg, ball=R).value
    lb = entropy(curve_b, cfg, ball=R).value
    return abs(la - lb)


def f_on_grid(curve: GeneratingCurve, params: list[FParams], rtol: float = 1e-9) -> np.ndarray:
    q = CurveQuadrature(curve)
    return np.array([q.evaluate(p, rtol=rtol)[0] for p in params])
