"""A short tour of the Loewner flows.

Run with ``python demos/loewner_tour.py``.  Takes a couple of seconds.
"""
import cmath

import numpy as np

from sle_lqg.analytic import build_params, central_charge
from sle_lqg.loewner import (find_welded_partner, forward_flow, reverse_flow, run_flow, sample_driver,
                             welding_window, zero_driver)

print("kappa   gamma   gamma'  Q       d       d_hat   c")
for kappa in (2, 8 / 3, 4, 6, 8):
    p = build_params(kappa)
    d_hat = "-" if p.d_boundary is None else f"{p.d_boundary:.4f}"
    print(f"{kappa:<7.4g} {p.gamma:<7.4f} {p.gamma_dual:<7.4f} {p.Q:<7.4f} {p.d_bulk:<7.4f} "
          f"{d_hat:<7} {central_charge(kappa):.4f}")

# With a zero driver every split step is exact, so the flow reproduces
# f_t(z) = sqrt(z^2 - 4t) up to rounding.
tr = reverse_flow(zero_driver(1.0, 1e-3), 1 + 1j)
print("\nf_1(1+i) computed:", tr.final.w, " closed form:", cmath.sqrt((1 + 1j) ** 2 - 4))

# The forward flow swallows i at t = 1/4, long before the closed form
# sqrt(z^2 + 4t) would turn real at t = 1.
fw = forward_flow(zero_driver(1.0, 1e-3), 1j)
print("forward flow loses i at t =", fw.t[np.argmin(fw.alive)])

# A random driver.  Zipping up glues [x', 0] to [0, x] along the curve; the
# tilted-slit steps make that gluing exact from both sides.
d = sample_driver(2.0, 0.25, 1e-3, seed=7)
left, right = welding_window(d, 0.25, scheme="tilted")
x = right / 2
xp = find_welded_partner(d, 0.25, x, scheme="tilted")
w = run_flow(d.increments, d.dt, np.array([x, xp], dtype=complex), scheme="tilted").w
print(f"\nwelding window ({left:.4f}, {right:.4f}); x = {x:.4f} is welded to x' = {xp:.4f}")
print("both land on the curve at", w[0], "mismatch", abs(w[0] - w[1]))

# Zipping back down with the time-reversed, negated driver undoes the flow.
z = 0.3 + 0.7j
up = reverse_flow(d, z).final.w
down = forward_flow(d.time_reversed(), up).final.w
print(f"\n{z} -> {up:.6f} -> {down:.12f}")
