"""Free fields, circle averages and regularised quantum measures.

Run with ``python demos/free_field_tour.py``.  Takes about twenty seconds.
"""
import math

import numpy as np

from sle_lqg import gff
from sle_lqg.loewner import derive_seed

disc = gff.UnitDisc()
seeds = [derive_seed(1, "demo", i) for i in range(300)]
radii = [0.07, 0.12, 0.2, 0.35]

# Circle averages at the centre have variance log(1/eps).  Radii below a few
# grid spacings come out low, because bilinear interpolation smooths the field.
avg = gff.circle_average_samples(gff.iter_gff(disc, 256, gff.DIRICHLET, seeds), 0j, radii)
for eps, v in zip(radii, avg.var(axis=0, ddof=1)):
    print(f"eps = {eps:<5} var h_eps(0) = {v:.3f}   log(1/eps) = {math.log(1 / eps):.3f}")

fit = gff.fit_moment_slope(avg, 1.0, radii)
print(f"log E exp(h_eps) grows like {fit.slope:.3f} +- {fit.stderr:.3f} per unit log(1/eps) (target 0.5)")

# Quantum area of the disc at gamma = 1; its mean is 2 pi / 3.
masses = [gff.quantum_area(f, 1.0, 0.1).total for f in gff.iter_gff(disc, 256, gff.DIRICHLET, seeds)]
print(f"\nmean quantum area {np.mean(masses):.3f} +- {np.std(masses) / math.sqrt(len(masses)):.3f}"
      f"   2 pi / 3 = {2 * math.pi / 3:.3f}")

# Boundary length on a free-boundary box: gamma = 0 gives Euclidean length.
f = gff.sample_gff(gff.HalfPlaneBox(4.0, 2.0), (256, 128), gff.NEUMANN, 3)
for g in (0.0, 1.0, math.sqrt(2)):
    print(f"gamma = {g:.3f}: quantum length of [-1, 1] = {gff.boundary_quantum_length(f, g, (-1, 1), 0.05):.4f}")
