"""
Entropy of round spheres
========================

The entropy of a round sphere is the supremum of the Gaussian area over all
centres and scales.  For spheres it is attained at the self-shrinking scale,
and the values decrease with dimension toward sqrt(2).

Run with ``python3 demos/01_entropy_constants.py``.
"""
import math

from entroflow import axigeom as ag
from entroflow.entropy import entropy, shrinker_entropy, weighted_area

###############################################################################
# Closed-form values first.  ``shrinker_entropy(k)`` is the Gaussian area of
# the round k-sphere of radius sqrt(2k).
for k in range(1, 7):
    print(f"lambda(S^{k}) = {shrinker_entropy(k):.6f}")
print(f"sqrt(2)       = {math.sqrt(2):.6f}")

###############################################################################
# Now the numerical route: build the generating curve of the unit 2-sphere in
# R^3 and let the search find the maximising centre and scale.
c = ag.sphere(2, 1.0, 0.05)
res = entropy(c)
print(f"\nsearch value  {res.value:.6f} +/- {res.error_bar:.1e}")
print(f"closed form   {4 / math.e:.6f}")
print(f"argmax        b={res.argmax.b:.3g} rho0={res.argmax.rho0:.3g} r={res.argmax.r:.4f}")
print(f"evaluations   {res.evaluations}")

###############################################################################
# The unnormalised weighted area, the integral of exp(-|x|^2 / 4), of the
# 2-sphere of radius 2 is 16 pi / e.
s2 = ag.sphere(2, 2.0, 0.05)
print(f"\nweighted area {weighted_area(s2):.6f}   16 pi / e = {16 * math.pi / math.e:.6f}")
