"""Closed-form F-functional of a unit hemisphere capping a half-infinite
unit cylinder (a surface in R^3), evaluated at a point x0 on the axis.

Coordinates: hemisphere centre C at the origin, cylinder along x <= 0, cap
over 0 <= x <= 1, and x0 = (-a, 0, 0) inside the cylinder core.  Then

    F(a, r) = (1/2r) int_{-inf}^{a} e^{-(y^2+1)/4r} dy
            + (1/a) (e^{-(a^2+1)/4r} - e^{-(a+1)^2/4r}),

the first term from the cylinder (shifted to x0) and the second from the
cap, on which |x - x0|^2 = a^2 + 2ax + 1 and the area element is 2 pi dx.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special


@dataclass(frozen=True)
class CappedCylinderParams:
    a: float
    r: float

    def __post_init__(self):
        if not (self.a > 0 and self.r > 0):
            raise ValueError(f"a and r must be positive, got a={self.a}, r={self.r}")


def cylinder_value(r: float) -> float:
    """F of the full unit cylinder at any axis point: sqrt(pi/r) e^{-1/4r}."""
    return math.sqrt(math.pi / r) * math.exp(-0.25 / r)


def cylinder_term(p: CappedCylinderParams) -> float:
    z = p.a / (2.0 * math.sqrt(p.r))
    # int_{-inf}^{a} e^{-y^2/4r} dy = sqrt(pi r) erfc(-z)
    return 0.5 / p.r * math.exp(-0.25 / p.r) * math.sqrt(math.pi * p.r) * special.erfc(-z)


def cap_term(p: CappedCylinderParams) -> float:
    a, r = p.a, p.r
    e1 = math.exp(-(a * a + 1.0) / (4 * r))
    # e1 - e2 = e1 (1 - e^{-a/2r}); expm1 keeps small a accurate
    return -e1 * math.expm1(-a / (2 * r)) / a


def f_capped(p: CappedCylinderParams) -> float:
    return cylinder_term(p) + cap_term(p)


def excess_scaled(p: CappedCylinderParams) -> float:
    """(f_capped - cylinder_value) * e^{(a^2+1)/4r}, free of underflow.

    The cylinder's missing half-line is (1/2r) e^{-1/4r} sqrt(pi r) erfc(z)
    = e^{-(a^2+1)/4r} (sqrt(pi)/(2 sqrt r)) erfcx(z)."""
    a, r = p.a, p.r
    z = a / (2.0 * math.sqrt(r))
    cap = -math.expm1(-a / (2 * r)) / a
    missing = math.sqrt(math.pi) / (2.0 * math.sqrt(r)) * special.erfcx(z)
    return cap - missing


def excess(p: CappedCylinderParams) -> float:
    return math.exp(-(p.a**2 + 1.0) / (4 * p.r)) * excess_scaled(p)


def dfda_analytic(p: CappedCylinderParams) -> float:
    """Closed-form a-derivative:
    -e^{-(a^2+1)/4r}/a^2 + e^{-(a+1)^2/4r} (a^2 + 2r + a)/(2 a^2 r)."""
    a, r = p.a, p.r
    e1 = math.exp(-(a * a + 1.0) / (4 * r))
    e2 = math.exp(-(a + 1.0) ** 2 / (4 * r))
    return -e1 / a**2 + e2 * (a * a + 2 * r + a) / (2 * a * a * r)


def dfda_printed_variant(p: CappedCylinderParams) -> float:
    """The alternative reading with e^{-(a^2-1)/4r} in the first term; kept
    only so the finite-difference comparison can reject it."""
    a, r = p.a, p.r
    e1 = math.exp(-(a * a - 1.0) / (4 * r))
    e2 = math.exp(-(a + 1.0) ** 2 / (4 * r))
    return -e1 / a**2 + e2 * (a * a + 2 * r + a) / (2 * a * a * r)


def dfda_numeric(p: CappedCylinderParams, step: float = 1e-5) -> float:
    hi = f_capped(CappedCylinderParams(p.a + step, p.r))
    lo = f_capped(CappedCylinderParams(p.a - step, p.r))
    return (hi - lo) / (2 * step)


def f_capped_quadrature(p: CappedCylinderParams) -> tuple[float, float]:
    """Both terms by adaptive quadrature (independent of the closed forms)."""
    a, r = p.a, p.r
    g = lambda y: math.exp(-(y * y + 1) / (4 * r)) / (2 * r)
    # split at the peak y = 0 so a narrow Gaussian is not stepped over
    left, e0 = integrate.quad(g, -math.inf, 0.0, epsabs=1e-14, epsrel=1e-12, limit=200)
    right, e1 = integrate.quad(g, 0.0, a, epsabs=1e-14, epsrel=1e-12, limit=200)
    cyl, e1 = left + right, e0 + e1
    cap, e2 = integrate.quad(lambda x: math.exp(-(a * a + 2 * a * x + 1) / (4 * r)) / (2 * r), 0.0, 1.0,
                             epsabs=1e-14, epsrel=1e-13)
    return cyl + cap, e1 + e2


def sign_change(r: float, a_lo: float = 1e-3, a_hi: float = 200.0, tol: float = 1e-10) -> float:
    """Smallest a beyond which dF/da stays nonpositive, by bracketing on a
    log grid then bisection."""
    grid = np.geomspace(a_lo, a_hi, 2000)
    vals = np.array([dfda_analytic(CappedCylinderParams(a, r)) for a in grid])
    pos = np.flatnonzero(vals > 0)
    if pos.size == 0:
        return a_lo
    i = pos[-1]
    if i == grid.size - 1:
        raise ValueError("derivative still positive at the end of the bracket")
    lo, hi = grid[i], grid[i + 1]
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if dfda_analytic(CappedCylinderParams(mid, r)) > 0:
            lo = mid
        else:
            hi = mid
    return hi


def capped_curve(h: float = 0.01, far: float | None = None, a: float = 5.0, r: float = 0.5):
    """Generating curve of the capped cylinder (n = 2), closed far away so
    the far end's Gaussian weight is negligible at (a, r)."""
    from .axigeom import capsule

    if far is None:
        far = a + 1.0 + math.sqrt(4 * r * 60.0)
    # hemisphere centred at C = 0 covers [0, 1]; cylinder runs back to -far
    half = 0.5 * far
    cap = capsule(2, 1.0, half, h)
    return cap.translated(-half)


def cross_validate(p: CappedCylinderParams, h: float = 0.01, rtol: float = 1e-11) -> float:
    from .entropy import FParams, f_functional

    curve = capped_curve(h=h, a=p.a, r=p.r)
    numeric = f_functional(curve, FParams(b=-p.a, rho0=0.0, r=p.r), rtol=rtol)
    disc = abs(f_capped(p) - numeric)
    if disc > 1e-4:
        raise ArithmeticError(f"appendix oracle and entropy module disagree by {disc:.3e} at {p}")
    return disc
