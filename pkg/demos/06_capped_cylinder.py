"""
Gaussian area of a capped half-cylinder
=======================================

A half-cylinder of radius 1 closed by a cap at distance a from the origin,
seen at scale r.  Far inside the cylinder (a large) the value tends to the
cylinder's.  Whether the cap is heavier than the missing half line depends on
the scale: at small r it always is, at r = 1 it is not.

Run with ``python3 demos/06_capped_cylinder.py``.
"""
from entroflow import appendix_oracle as ao
from entroflow.appendix_oracle import CappedCylinderParams as P

print("   a      r     F(a,r)    cylinder   excess")
for r in (0.1, 0.5, 1.0, 2.0):
    for a in (2.0, 5.0, 10.0, 20.0):
        p = P(a, r)
        print(f"{a:5.1f} {r:6.2f} {ao.f_capped(p):10.6f} {ao.cylinder_value(r):10.6f} {ao.excess(p):+.3e}")

###############################################################################
# dF/da changes sign once: F rises while the cap moves inward, then falls back
# to the cylinder value.  Below some scale there is no sign change at all.
for r in (0.1, 0.5, 1.0, 2.0):
    a0 = ao.sign_change(r)
    print(f"r={r:4.2f}  sign change at a={a0:.6f}")

###############################################################################
# The closed form is checked against direct quadrature and against the
# general entropy machinery applied to a discretised capped curve.
p = P(5.0, 0.5)
q, err = ao.f_capped_quadrature(p)
print(f"\nclosed {ao.f_capped(p):.12f}  quad {q:.12f}  cross-check {ao.cross_validate(p):.1e}")
