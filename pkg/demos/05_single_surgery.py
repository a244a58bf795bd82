"""
One surgery on a long capsule
=============================

A long capsule has a perfect cylindrical neck in the middle.  Cutting it there
and gluing two caps gives two shorter capsules.  The audit records how much
area is removed and whether the result stays close to the cut-off neck.

Run with ``python3 demos/05_single_surgery.py``.
"""
import numpy as np

from entroflow import axigeom as ag
from entroflow import flow as fl
from entroflow import surgery as su

c = ag.capsule(3, 1.0, 60.0, 0.25)
state = fl.initial_state(c)
params = su.SurgeryParams(delta=0.025)
cap = su.build_cap(3, 0.05)

# neck at the centre: radius 1, so it spans 1/delta on each side
mid = slice(c.x.size // 4, 3 * c.x.size // 4)
s = float(np.interp(0.0, c.x[mid], c.u[mid]))
neck = su.NeckRegion(0.0, s, (-s / params.delta, s / params.delta), 0.0, c.component_id, 2.0 / s, 1)

ev = su.do_surgery(state, neck, cap, params)
print(f"valid         {ev.valid}")
print(f"pieces        {len(ev.post_curves)}")
print(f"area before   {ev.area_pre:.4f}")
print(f"area after    {ev.area_post:.4f}")
print(f"max H ratio   {ev.max_H_ratio:.4f}")
for k, v in sorted(ev.checks.items()):
    print(f"  {k:18s} {v}")
