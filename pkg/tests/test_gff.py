import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sle_lqg import analytic, gff
from sle_lqg.errors import ConfigError, DomainError, GeometryError
from sle_lqg.loewner import derive_seed

DISC = gff.UnitDisc()
BOX = gff.HalfPlaneBox(4.0, 2.0)


def disc_green(y, z):
    return -math.log(abs((y - z) / (1 - y * np.conj(z))))


@pytest.fixture(scope="module")
def box_field():
    return gff.sample_gff(BOX, (128, 64), gff.NEUMANN, 3)


def test_same_seed_same_field():
    a = gff.sample_gff(DISC, 64, gff.DIRICHLET, 9)
    b = gff.sample_gff(DISC, 64, gff.DIRICHLET, 9)
    assert np.array_equal(a.values, b.values)
    batched = list(gff.iter_gff(DISC, 64, gff.DIRICHLET, [8, 9, 10], chunk=3))[1]
    assert np.array_equal(batched.values, a.values)
    assert not np.array_equal(gff.sample_gff(DISC, 64, gff.DIRICHLET, 10).values, a.values)


def test_dirichlet_boundary_vanishes():
    d = gff.sample_gff(DISC, 64, gff.DIRICHLET, 1)
    assert np.all(d.values[~d.mask()] == 0.0)
    b = gff.sample_gff(BOX, (64, 32), gff.DIRICHLET, 1)
    v = b.values
    assert not np.any(v[0]) and not np.any(v[-1]) and not np.any(v[:, 0]) and not np.any(v[:, -1])


def test_neumann_mean_zero(box_field):
    assert abs(box_field.values.mean()) <= 1e-10


def test_small_grid_rejected():
    with pytest.raises(ConfigError):
        gff.sample_gff(DISC, 8, gff.DIRICHLET, 0)


def test_unsupported_combination():
    with pytest.raises(ConfigError):
        gff.sample_gff(DISC, 64, gff.NEUMANN, 0)


def test_constant_field_circle_average(box_field):
    c = box_field.with_values(np.full(box_field.values.shape, 2.5))
    for z, eps in [(0.3 + 1j, 0.1), (-1 + 0.7j, 0.5)]:
        assert gff.circle_average(c, z, eps) == pytest.approx(2.5, abs=1e-13)


def test_circle_average_linear(box_field):
    other = gff.sample_gff(BOX, (128, 64), gff.NEUMANN, 4)
    z, eps = 0.2 + 0.9j, 0.3
    lhs = gff.circle_average(box_field + other, z, eps)
    rhs = gff.circle_average(box_field, z, eps) + gff.circle_average(other, z, eps)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_circle_geometry_errors(box_field):
    with pytest.raises(GeometryError):
        gff.circle_average(box_field, 0.1j, 0.2)
    with pytest.raises(GeometryError):
        gff.circle_average(box_field, 1j, box_field.spacing)


@pytest.mark.parametrize("domain, n, bc, node", [(DISC, 64, gff.DIRICHLET, (30, 25)),
                                                 (BOX, (64, 32), gff.NEUMANN, (3, 3))])
def test_fft_circle_averages_match_direct(domain, n, bc, node):
    f = gff.sample_gff(domain, n, bc, 2)
    eps = 0.2
    fast = gff._all_circle_averages(f, eps)
    i, j = node
    direct = gff.circle_average(f, f.x[j] + 1j * f.y[i], eps, allow_exit=True)
    assert fast[i, j] == pytest.approx(direct, abs=1e-12)


def test_circle_average_variance(disc_ensemble):
    for k, eps in enumerate(disc_ensemble.var_radii):
        a = disc_ensemble.var_avg[:, k]
        n = a.size
        var = a.var(ddof=1)
        # standard error of a Gaussian sample variance
        se = var * math.sqrt(2 / (n - 1))
        assert abs(var - math.log(1 / eps)) <= 3 * se, (eps, var)


def test_disc_covariance(disc_ensemble):
    y, z = disc_ensemble.pair
    target = disc_green(y, z)
    assert abs(y - z) >= 0.2
    for data, rel in ((disc_ensemble.points, None), (disc_ensemble.pair_avg, 0.05)):
        p = (data[:, 0] - data[:, 0].mean()) * (data[:, 1] - data[:, 1].mean())
        est, se = p.mean(), p.std(ddof=1) / math.sqrt(p.size)
        assert abs(est - target) <= 3 * se
        if rel is not None:
            # disjoint circle averages have covariance exactly G, since G is harmonic in each point
            assert abs(est / target - 1) <= rel


def test_neumann_box_covariance_difference():
    pts = np.array([-0.25 + 0.5j, 0.25 + 0.5j, -1 + 0.5j, 1 + 0.5j])
    seeds = [derive_seed(2024, "box", i) for i in range(2000)]
    V = np.array([f.evaluate(pts) for f in gff.iter_gff(gff.HalfPlaneBox(6, 3), (384, 192), gff.NEUMANN, seeds)])
    V -= V.mean(axis=0)
    # the box adds a nearly constant term to the covariance; a difference of pairs cancels it
    est = np.mean(V[:, 0] * V[:, 1] - V[:, 2] * V[:, 3])
    target = analytic.neumann_green(pts[0], pts[1]) - analytic.neumann_green(pts[2], pts[3])
    assert abs(est / target - 1) <= 0.10


def test_moment_fit_gamma_zero(disc_ensemble):
    fit = gff.fit_moment_slope(disc_ensemble.moment_avg, 0.0, disc_ensemble.moment_radii)
    assert fit.slope == 0.0 and np.all(fit.log_moments == 0.0)


@pytest.mark.parametrize("gamma", [1.0, math.sqrt(2)])
def test_moment_slope(disc_ensemble, gamma):
    fit = gff.fit_moment_slope(disc_ensemble.moment_avg, gamma, disc_ensemble.moment_radii)
    assert fit.expected_slope == pytest.approx(gamma**2 / 2)
    assert abs(fit.z_score) <= 3, fit


def test_moment_fit_needs_three_radii():
    with pytest.raises(ConfigError):
        gff.moment_test([], 1.0, 0j, [0.1, 0.2])
    with pytest.raises(ConfigError):
        gff.fit_moment_slope(np.zeros((10, 2)), 1.0, [0.1, 0.2])


def test_moment_fit_recovers_synthetic_slope():
    rng = np.random.default_rng(0)
    eps = np.array([0.05, 0.1, 0.2, 0.4])
    # independent Gaussian increments with variance log(1/eps) mimic circle averages
    steps = np.sqrt(np.diff(np.concatenate([[0], np.log(1 / eps[::-1])])))
    X = np.cumsum(rng.standard_normal((20000, 4)) * steps, axis=1)[:, ::-1]
    fit = gff.fit_moment_slope(X, 1.0, eps)
    assert abs(fit.z_score) <= 3 and fit.stderr < 0.05


def test_area_gamma_zero_is_lebesgue():
    f = gff.sample_gff(DISC, 256, gff.DIRICHLET, 0)
    assert abs(gff.quantum_area(f, 0.0, 0.1).total / math.pi - 1) <= 0.01


def test_expected_mass(disc_ensemble):
    m = disc_ensemble.mass
    # E mu(disc) = int (1 - |z|^2)^(1/2) dz = 2 pi / 3
    assert abs(m.mean() - 2 * math.pi / 3) <= 3 * m.std(ddof=1) / math.sqrt(m.size)


def test_area_gamma_domain():
    f = gff.sample_gff(DISC, 64, gff.DIRICHLET, 0)
    for g in (2.0, 2.5, -0.1):
        with pytest.raises(DomainError):
            gff.quantum_area(f, g, 0.1)


@settings(max_examples=10, deadline=None)
@given(st.floats(-2, 2), st.floats(0.1, 1.9))
def test_area_constant_shift(lam, gamma):
    f = gff.sample_gff(BOX, (64, 32), gff.NEUMANN, 5)
    a = gff.quantum_area(f, gamma, 0.2).cell_mass
    b = gff.quantum_area(f + lam, gamma, 0.2).cell_mass
    inside = a > 0
    assert np.allclose(b[inside] / a[inside], math.exp(gamma * lam), rtol=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 1.9))
def test_area_monotone(seed, gamma):
    f = gff.sample_gff(DISC, 48, gff.DIRICHLET, 5)
    bump = np.abs(np.random.default_rng(seed).standard_normal(f.values.shape)) * f.mask()
    assert np.all(gff.quantum_area(f + bump, gamma, 0.15).cell_mass
                  >= gff.quantum_area(f, gamma, 0.15).cell_mass)


def test_measure_csv(tmp_path):
    f = gff.sample_gff(DISC, 32, gff.DIRICHLET, 0)
    mu = gff.quantum_area(f, 1.0, 0.2)
    mu.to_csv(tmp_path / "mu.csv")
    lines = (tmp_path / "mu.csv").read_text().splitlines()
    assert lines[0] == "cell_index,x,y,mass"
    assert sum(float(r.split(",")[3]) for r in lines[1:]) == pytest.approx(mu.total, rel=1e-12)


def test_boundary_length_gamma_zero(box_field):
    assert gff.boundary_quantum_length(box_field, 0.0, (-0.7, 1.2), 0.1) == pytest.approx(1.9, abs=1e-15)


def test_boundary_length_additive(box_field):
    a, b, c = -0.83, 0.11, 1.27
    whole = gff.boundary_quantum_length(box_field, 1.2, (a, c), 0.1)
    parts = (gff.boundary_quantum_length(box_field, 1.2, (a, b), 0.1)
             + gff.boundary_quantum_length(box_field, 1.2, (b, c), 0.1))
    assert whole == pytest.approx(parts, abs=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.floats(-2, 2), st.floats(0.1, 1.9))
def test_boundary_length_constant_shift(lam, gamma):
    f = gff.sample_gff(BOX, (64, 32), gff.NEUMANN, 3)
    a = gff.boundary_quantum_length(f, gamma, (-0.5, 0.9), 0.2)
    b = gff.boundary_quantum_length(f + lam, gamma, (-0.5, 0.9), 0.2)
    assert b / a == pytest.approx(math.exp(gamma * lam / 2), rel=1e-12)


def test_boundary_length_needs_free_boundary():
    f = gff.sample_gff(BOX, (64, 32), gff.DIRICHLET, 3)
    with pytest.raises(ConfigError):
        gff.boundary_quantum_length(f, 1.0, (-0.5, 0.5), 0.2)


def test_save_load_roundtrip(tmp_path, box_field):
    box_field.save(tmp_path / "h")
    back = gff.GridField.load(tmp_path / "h")
    assert np.array_equal(back.values, box_field.values)
    assert back.header() == box_field.header()
    raw = np.fromfile(tmp_path / "h.bin", dtype="<f8")
    assert raw.size == box_field.values.size
