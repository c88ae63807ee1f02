"""Martingales along the reverse flow, checked pathwise and in expectation.

Run with ``python demos/martingales_tour.py``.  Takes about ten seconds.
"""
from sle_lqg import martingales as mg
from sle_lqg.loewner import reverse_flow, sample_driver

kappa, z = 2.0, 1 + 1j
d = sample_driver(kappa, 0.5, 1e-4, seed=1)
tr = reverse_flow(d, z, track_pair=-1 + 2j)

# Quadratic variation of h_t(z) computed two ways on one path.
qv = mg.pathwise_qv_check(tr)
cv = mg.pathwise_covariation_check(tr)
print(f"int Re(2/f)^2 dt = {qv.lhs:.6f}   C_0 - C_t = {qv.rhs:.6f}")
print(f"int Re(2/f_y) Re(2/f_z) dt = {cv.lhs:.6f}   G_0 - G_t = {cv.rhs:.6f}")

# The gap is a time-discretisation error: halving dt halves it.
res = mg.richardson_ratio(kappa, z, 0.5, 1e-3, 100, seed=2)
print(f"mean error at dt: {res['err_dt']:.3e}, at dt/2: {res['err_half']:.3e}, ratio {res['ratio']:.3f}")

# Expectations at time T match the time-zero values.
for spec in (mg.McSpec("h", 2j, 8 / 3, 0.5, 1e-3, 10_000, 0),
             mg.McSpec("M_bulk", 2j, 4.0, 0.5, 1e-3, 10_000, 0, alpha=0.3),
             mg.McSpec("forward_length", 2j, 2.0, 0.3, 1e-3, 10_000, 0)):
    r = mg.mc_expectation(spec)
    print(f"{spec.quantity:<15} mean {r.mean:.5f} +- {r.stderr:.5f}   target {r.target:.5f}   z = {r.z_score:+.2f}")
