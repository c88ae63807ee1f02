import cmath
import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sle_lqg.errors import AbsorbedError, DomainError, LifecycleError, NoPartnerError
from sle_lqg.loewner import (
    derive_seed,
    find_welded_partner,
    forward_flow,
    reverse_flow,
    run_flow,
    sample_driver,
    sample_increments,
    welding_window,
    zero_driver,
    zip_down,
)


def rk4_forward(z0, h=1e-5, stop=1e-3, t_end=2.0):
    """Integrate dg/dt = 2/g by RK4 until |g| < stop or t_end; independent of the slit maps."""
    g, t = complex(z0), 0.0
    f = lambda u: 2 / u
    while abs(g) > stop and t < t_end - h / 2:
        k1 = f(g)
        k2 = f(g + h / 2 * k1)
        k3 = f(g + h / 2 * k2)
        k4 = f(g + h * k3)
        g += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return t, g


def test_zero_kappa_driver_is_zero():
    assert not np.any(sample_driver(0.0, 1.0, 1e-3, 5).increments)


def test_driver_determinism():
    a = sample_driver(2.0, 1.0, 1e-3, 7)
    b = sample_driver(2.0, 1.0, 1e-3, 7)
    assert a.n_steps == 1000
    assert np.array_equal(a.increments, b.increments)
    assert not np.array_equal(a.increments, sample_driver(2.0, 1.0, 1e-3, 8).increments)
    rows = sample_increments(2.0, 1.0, 1e-3, [7, 8])
    assert np.array_equal(rows[0], a.increments)


def test_increment_variance():
    d = sample_driver(4.0, 1000.0, 1e-3, 12345)
    n = d.n_steps
    assert n == 10**6
    var = np.mean(d.increments**2)
    # chi-square with n degrees of freedom: sd of the sample variance is sigma^2 sqrt(2/n)
    assert abs(var - 4e-3) <= 3 * 4e-3 * math.sqrt(2 / n)


@pytest.mark.parametrize("bad", [(math.nan, 1.0, 1e-3), (2.0, math.inf, 1e-3), (2.0, 1.0, 0.0), (2.0, 1.0, 0.3)])
def test_driver_domain_errors(bad):
    with pytest.raises(DomainError):
        sample_driver(*bad, seed=1)


def test_seed_derivation_is_stable():
    assert derive_seed(1, "a", 2) == derive_seed(1, "a", 2)
    assert derive_seed(1, "a", 2) != derive_seed(1, "a", 3)
    assert 0 <= derive_seed("x") < 2**64


def test_reverse_zero_driver_closed_forms():
    tr = reverse_flow(zero_driver(1.0, 1e-3), 1j)
    assert tr.final.w == pytest.approx(1j * math.sqrt(5), abs=1e-12)
    assert tr.final.dw == pytest.approx(1 / math.sqrt(5), abs=1e-12)
    tr = reverse_flow(zero_driver(1.0, 1e-3), 1 + 1j)
    assert tr.final.w == pytest.approx(0.4858682717566457 + 2.0581710272714923j, abs=1e-10)


@pytest.mark.parametrize("z0", [1j, 1 + 1j, -0.3 + 0.05j, 2.5 + 0.4j])
def test_reverse_exact_step_property(z0):
    tr = reverse_flow(zero_driver(1.0, 1e-2), z0)
    exact = np.array([cmath.sqrt(z0 * z0 - 4 * t) for t in tr.t])
    exact = np.where(exact.imag < 0, -exact, exact)
    assert np.max(np.abs(tr.w - exact)) <= 1e-10


def test_initial_state():
    tr = reverse_flow(sample_driver(3.0, 0.1, 1e-3, 2), 0.2 + 0.5j)
    assert tr.state(0).w == 0.2 + 0.5j and tr.state(0).dw == 1 and tr.state(0).t == 0.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.5, 8), st.floats(-2, 2), st.floats(0.01, 2))
def test_reverse_pushes_points_up(seed, kappa, x, y):
    tr = reverse_flow(sample_driver(kappa, 0.2, 1e-3, seed), complex(x, y))
    assert np.all(np.diff(tr.w.imag) >= -1e-12)
    assert np.all(np.diff(tr.int_r2) >= 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.5, 8))
def test_derivative_right_of_window(seed, kappa):
    d = sample_driver(kappa, 0.2, 1e-3, seed)
    x = np.linspace(1, 5, 9) + 4 * np.max(np.abs(d.values()))
    b = run_flow(d.increments, d.dt, x.astype(complex), record=True)
    assert np.all(b.dw.real >= 1 - 1e-12)
    assert np.all(b.w.imag == 0)


def test_seed_start_is_absorbed():
    with pytest.raises(AbsorbedError):
        reverse_flow(zero_driver(0.1, 1e-3), 0.0)


def test_forward_swallowing_time_matches_ode():
    t_ode, _ = rk4_forward(1j)
    assert t_ode == pytest.approx(0.25, abs=1e-4)
    tr = forward_flow(zero_driver(1.0, 1e-3), 1j)
    k = int(np.argmin(tr.alive))
    assert not tr.final.alive
    assert tr.t[k] == pytest.approx(t_ode, abs=2e-3)
    with pytest.raises(LifecycleError):
        tr.final.require_alive()


def test_forward_real_point_closed_form():
    tr = forward_flow(zero_driver(1.0, 1e-3), 3.0)
    assert tr.final.alive
    assert tr.final.w == pytest.approx(math.sqrt(13), abs=1e-12)
    _, g = rk4_forward(3.0, h=1e-3, t_end=1.0)
    assert abs(g - tr.final.w) <= 1e-10


def test_forward_rejects_origin():
    with pytest.raises(DomainError):
        forward_flow(zero_driver(0.1, 1e-3), 0.0)


@pytest.mark.parametrize("scheme", ["vertical", "tilted"])
def test_forward_inverts_reverse(scheme):
    d = sample_driver(3.0, 0.5, 1e-3, 11)
    z = 0.3 + 0.7j
    w = reverse_flow(d, z, scheme=scheme).final.w
    back = forward_flow(d.time_reversed(), w, scheme=scheme).final.w
    assert abs(back - z) <= 10 * d.dt
    assert abs(zip_down(d, np.array([w]), scheme=scheme)[0][0] - z) <= 1e-10


def test_zipper_consistency_zero_driver():
    d = zero_driver(0.5, 1e-3)
    z = -0.4 + 0.9j
    w = reverse_flow(d, z).final.w
    assert abs(forward_flow(d.time_reversed(), w).final.w - z) <= 1e-10


@pytest.mark.parametrize("scheme", ["vertical", "tilted"])
def test_symmetric_driver_welds_mirror_points(scheme):
    d = zero_driver(0.25, 1e-3)
    left, right = welding_window(d, 0.25, scheme=scheme)
    assert left == pytest.approx(-1.0, abs=1e-9) and right == pytest.approx(1.0, abs=1e-9)
    for x in (0.1, 0.5, 0.9):
        assert find_welded_partner(d, 0.25, x, scheme=scheme) == pytest.approx(-x, abs=1e-9)


def test_partner_of_sample_driver():
    d = sample_driver(2.0, 0.25, 1e-3, 7)
    left, right = welding_window(d, 0.25, scheme="tilted")
    x = right / 2
    xp = find_welded_partner(d, 0.25, x, scheme="tilted")
    assert left < xp < 0
    w = run_flow(d.increments, d.dt, np.array([x, xp], dtype=complex), scheme="tilted").w
    assert abs(w[0] - w[1]) <= 1e-9
    # just inside the right edge the partner sits just inside the left edge
    assert find_welded_partner(d, 0.25, right * (1 - 1e-9), scheme="tilted") == pytest.approx(left, abs=1e-5)


def test_no_partner_outside_window():
    d = sample_driver(2.0, 0.25, 1e-3, 7)
    _, right = welding_window(d, 0.25, scheme="tilted")
    with pytest.raises(NoPartnerError):
        find_welded_partner(d, 0.25, 2 * right, scheme="tilted")
    with pytest.raises(DomainError):
        find_welded_partner(d, 0.3, 0.1)


def test_trajectory_csv(tmp_path):
    tr = reverse_flow(zero_driver(0.01, 1e-3), 1j)
    path = tmp_path / "traj.csv"
    tr.to_csv(path)
    rows = list(csv.DictReader(open(path)))
    assert list(rows[0]) == ["step", "t", "re_w", "im_w", "re_dw", "im_dw", "int_R2"]
    assert len(rows) == 11
    assert float(rows[-1]["im_w"]) == tr.final.w.imag


def test_refined_driver_keeps_coarse_path():
    d = sample_driver(2.0, 0.1, 1e-3, 3)
    r = d.refined()
    assert r.dt == 5e-4 and r.n_steps == 200
    assert np.allclose(r.values()[::2], d.values(), atol=1e-14)
