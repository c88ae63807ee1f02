"""A free field coupled to the zipper: welded lengths and conformal covariance.

Run with ``python demos/quantum_zipper_tour.py``.  Takes under a minute.
"""
from sle_lqg import gff, zipper
from sle_lqg.loewner import sample_driver, welding_window, zero_driver

base = gff.sample_gff(gff.HalfPlaneBox(8.0, 4.0), (512, 256), gff.NEUMANN, 11)

# With a symmetric driver and a mirror-symmetric field the two welded arcs
# have equal quantum length exactly.
cf = zipper.couple_field(zero_driver(0.25, 1e-3, kappa=2.0), 0.25, zipper.symmetrized(base))
rec = zipper.welding_length_test(cf, 0.5, 0.04)
print(f"symmetric case: {rec.len_right:.6f} vs {rec.len_left:.6f}")

# A random driver: the lengths get closer as the regularisation shrinks,
# but on one sample the trend is noisy.
d = sample_driver(2.0, 0.25, 1e-3, seed=3)
cf = zipper.couple_field(d, 0.25, base, scheme="tilted")
x = 0.5 * welding_window(d, 0.25, scheme="tilted")[1]
for r in zipper.welding_length_test(cf, x, [0.08, 0.04, 0.02]):
    print(f"eps = {r.epsilon:<5} right {r.len_right:.4f}  left {r.len_left:.4f}  rel diff {r.rel_diff:.4f}")
euclid = zipper.welding_length_test(cf, x, 0.04, gamma=0.0)
print(f"Euclidean lengths: {euclid.len_right:.4f} vs {euclid.len_left:.4f}")

# Small ensemble medians; the acceptance suite runs 500 members.
s = zipper.welding_ensemble(2.0, 0.25, 1e-3, 8, [0.08, 0.04, 0.02], 0, n=(256, 128))
print("ensemble medians", [round(m, 4) for m in s.medians], "decreasing:", s.decreasing)

# Natural-parametrisation density is conformally covariant: both sides of
# the change of variables agree up to quadrature error, which falls like m^-2.
for m in (50, 100, 200):
    c = zipper.covariance_transform_check([1, 2, 1, 2], zero_driver(1.0, 1e-3), 1.0, 6.0, m=m)
    print(f"m = {m:<4} lhs {c.lhs:.10f}  rhs {c.rhs:.10f}  rel err {c.rel_err:.2e}")
