"""A free field coupled to the reverse Loewner flow, and two experiments on it.

The coupled field is ``h(z) = h0(f_t(z)) + hm_t(z)`` where ``h0`` is a
free-boundary field sampled on a box and
``hm_t(z) = (2/sqrt(kappa)) log|f_t(z)| + Q log|f_t'(z)|``.

* :func:`welding_length_test` compares boundary quantum lengths of the two
  boundary arcs ``[x', 0]`` and ``[0, x]`` that the flow glues together.
* :func:`covariance_transform_check` integrates ``|f_t'|^d G`` over a
  rectangle and the pushed-forward density over its image, two quadratures of
  one integral.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from . import analytic
from .errors import ConfigError, DomainError, GeometryError, NoPartnerError
from .gff import NEUMANN, GridField, HalfPlaneBox, piecewise_linear_integral, sample_gff
from .loewner import (DriverPath, derive_seed, find_welded_partner, run_flow, sample_driver,
                      welding_window, zip_down)

__all__ = [
    "CoupledField",
    "couple_field",
    "symmetrized",
    "WeldRecord",
    "welding_length_test",
    "welding_ensemble",
    "WeldingSummary",
    "CovarianceRecord",
    "covariance_transform_check",
]

SEMICIRCLE_POINTS = 32


@dataclass(frozen=True)
class CoupledField:
    """``h = h0 o f_t + hm_t`` for one driver, evaluated lazily by running the flow."""

    driver: DriverPath
    t: float
    base_field: GridField
    scheme: str = "vertical"

    @property
    def kappa(self) -> float:
        return self.driver.kappa

    def flow(self, z):
        d = self.driver.truncated(self.t)
        b = run_flow(d.increments, d.dt, np.asarray(z, dtype=complex), scheme=self.scheme)
        return b.w, b.dw

    def harmonic_part(self, z) -> np.ndarray:
        """``hm_t(z)``; deterministic given the driver."""
        w, dw = self.flow(z)
        return self._hm(w, dw)

    def _hm(self, w, dw):
        Q = analytic.background_charge(self.kappa)
        return 2 / math.sqrt(self.kappa) * np.log(np.abs(w)) + Q * np.log(np.abs(dw))

    def evaluate(self, z) -> np.ndarray:
        """Coupled field at ``z``; raises GeometryError if ``f_t(z)`` leaves the base box."""
        w, dw = self.flow(z)
        return self.base_field.evaluate(w) + self._hm(w, dw)


def couple_field(driver: DriverPath, t: float, base_field: GridField, scheme: str = "vertical") -> CoupledField:
    if base_field.bc != NEUMANN:
        raise ConfigError("the base field must have free (Neumann) boundary conditions")
    driver.step_index(t)
    return CoupledField(driver, float(t), base_field, scheme)


def symmetrized(field: GridField) -> GridField:
    """Average of the field and its mirror image in the imaginary axis."""
    if not np.allclose(field.x, -field.x[::-1], rtol=0, atol=1e-12):
        raise GeometryError("grid is not symmetric about the imaginary axis")
    return field.with_values(0.5 * (field.values + field.values[:, ::-1]))


@dataclass(frozen=True)
class WeldRecord:
    x: float
    x_prime: float
    epsilon: float
    gamma: float
    len_right: float
    len_left: float
    rel_diff: float


def _semicircle_offsets(epsilon):
    # midpoint rule in the angle keeps every sample off the real axis
    theta = (np.arange(SEMICIRCLE_POINTS) + 0.5) * np.pi / SEMICIRCLE_POINTS
    return epsilon * np.exp(1j * theta)


def _nodes(lo, hi, spacing):
    j0 = math.floor(lo / spacing) - 1
    j1 = math.ceil(hi / spacing) + 1
    return spacing * np.arange(j0, j1 + 1)


def _lengths(coupled, x, x_prime, epsilons, gamma, spacing):
    """Boundary lengths of ``[0, x]`` and ``[x', 0]`` for each radius, one flow run."""
    blocks, pts = [], []
    for eps in epsilons:
        sp_ = spacing(eps)
        nodes = _nodes(x_prime, x, sp_)
        blocks.append((eps, nodes))
        pts.append((nodes[:, None] + _semicircle_offsets(eps)[None, :]).ravel())
    h = coupled.evaluate(np.concatenate(pts)) if gamma != 0 else None
    out, start = [], 0
    for eps, nodes in blocks:
        size = nodes.size * SEMICIRCLE_POINTS
        if gamma == 0:
            dens = np.ones(nodes.size)
        else:
            avg = h[start:start + size].reshape(nodes.size, SEMICIRCLE_POINTS).mean(axis=1)
            dens = eps ** (gamma**2 / 4) * np.exp(0.5 * gamma * avg)
        start += size
        right = piecewise_linear_integral(nodes, dens, 0.0, x)
        left = piecewise_linear_integral(nodes, dens, x_prime, 0.0)
        out.append((eps, right, left))
    return out


def _rel(a, b):
    return abs(a - b) / (0.5 * (a + b))


def welding_length_test(coupled: CoupledField, x: float, epsilon, *, gamma: Optional[float] = None,
                        node_spacing: Optional[float] = None, accept_ulp_bracket: bool = True):
    """Quantum boundary lengths of the welded arcs ``[0, x]`` and ``[x', 0]``.

    ``epsilon`` may be a single radius or a sequence (one record per radius).
    The boundary density is ``eps^(gamma^2/4) exp((gamma/2) h_eps(s))`` with
    ``h_eps`` the upper-semicircle average of the coupled field, sampled on a
    lattice of spacing ``node_spacing`` (default ``eps/8``) that contains 0.
    ``gamma`` defaults to ``sqrt(kappa)``; only ``kappa < 4`` is supported.
    """
    kappa = coupled.kappa
    if not 0 < kappa < 4:
        raise DomainError("welding lengths are compared for 0 < kappa < 4")
    g = math.sqrt(kappa) if gamma is None else float(gamma)
    x_prime = find_welded_partner(coupled.driver, coupled.t, x, scheme=coupled.scheme,
                                  accept_ulp_bracket=accept_ulp_bracket)
    single = np.isscalar(epsilon)
    eps_list = [float(epsilon)] if single else [float(e) for e in epsilon]

    def spacing(eps):
        return node_spacing if node_spacing is not None else eps / 8

    recs = [WeldRecord(float(x), float(x_prime), eps, g, r, l_, _rel(r, l_))
            for eps, r, l_ in _lengths(coupled, x, x_prime, eps_list, g, spacing)]
    return recs[0] if single else recs


DECREASE_RTOL = 1e-9


@dataclass(frozen=True)
class WeldingSummary:
    epsilons: tuple
    medians: tuple
    decreasing: bool
    n_members: int
    n_failed: int
    gamma: float
    rows: list

    def record(self) -> dict:
        d = asdict(self)
        d.pop("rows")
        return d

    def to_csv(self, path) -> None:
        keys = ["member_index", "t", "x", "x_prime", "epsilon", "len_right", "len_left", "rel_diff", "status"]
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(keys)
            for r in self.rows:
                out.writerow([r[k] for k in keys])


def _member(args):
    (i, kappa, t, dt, epsilons, master_seed, box, n, x_fraction, gamma, scheme) = args
    driver = sample_driver(kappa, t, dt, derive_seed(master_seed, "weld-driver", i))
    field = sample_gff(HalfPlaneBox(*box), n, NEUMANN, derive_seed(master_seed, "weld-field", i))
    cf = couple_field(driver, t, field, scheme)
    x = x_fraction * welding_window(driver, t, scheme)[1]
    base = {"member_index": i, "t": t, "x": x}
    try:
        recs = welding_length_test(cf, x, epsilons, gamma=gamma)
    except (NoPartnerError, GeometryError) as exc:
        return [dict(base, x_prime=math.nan, epsilon=e, len_right=math.nan, len_left=math.nan,
                     rel_diff=math.nan, status=type(exc).__name__) for e in epsilons]
    return [dict(base, x_prime=r.x_prime, epsilon=r.epsilon, len_right=r.len_right,
                 len_left=r.len_left, rel_diff=r.rel_diff, status="ok") for r in recs]


def welding_ensemble(kappa: float, t: float, dt: float, n_members: int, epsilons: Sequence[float],
                     master_seed: int, *, box=(8.0, 4.0), n=(512, 256), x_fraction: float = 0.5,
                     gamma: Optional[float] = None, scheme: str = "tilted", workers: int = 1) -> WeldingSummary:
    """Median welded-length mismatch per radius over independent (driver, field) pairs.

    Member ``i`` draws its driver and base field from seeds derived from
    ``(master_seed, i)`` and tests ``x = x_fraction`` times the right end of
    its welding window.  Members whose partner cannot be resolved are kept in
    the rows with status ``NoPartnerError`` and left out of the medians.
    ``decreasing`` requires each median, ordered from the largest radius
    down, to fall by more than ``DECREASE_RTOL`` relative to the previous one.
    """
    g = math.sqrt(kappa) if gamma is None else float(gamma)
    jobs = [(i, kappa, t, dt, tuple(epsilons), master_seed, tuple(box), n, x_fraction, g, scheme)
            for i in range(n_members)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_member, jobs, chunksize=4))
    else:
        parts = [_member(j) for j in jobs]
    rows = [r for p in parts for r in p]
    ok = [p for p in parts if p[0]["status"] == "ok"]
    meds = tuple(float(np.median([p[k]["rel_diff"] for p in ok])) if ok else math.nan
                 for k in range(len(epsilons)))
    order = np.argsort(epsilons)[::-1]
    seq = [meds[k] for k in order]
    # a step counts as a decrease only beyond rounding; gamma=0 medians agree to ~1e-14
    decreasing = all(b < a * (1 - DECREASE_RTOL) for a, b in zip(seq, seq[1:]))
    return WeldingSummary(tuple(float(e) for e in epsilons), meds, bool(decreasing), n_members,
                          n_members - len(ok), g, rows)


@dataclass(frozen=True)
class CovarianceRecord:
    m: int
    lhs: float
    rhs: float
    rel_err: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _shoelace(a, b, c, d):
    def cross(p, q):
        return p.real * q.imag - q.real * p.imag

    return 0.5 * (cross(a, b) + cross(b, c) + cross(c, d) + cross(d, a))


def covariance_transform_check(rect: Sequence[float], driver: DriverPath, t: float, kappa: float,
                               m: int = 200, scheme: str = "vertical") -> CovarianceRecord:
    """Two quadratures of ``int_D |f_t'|^d G dz`` for ``D = [x0, x1] x [y0, y1]``.

    ``lhs`` is the tensor trapezoid rule on an ``m x m`` grid of ``D``.
    ``rhs`` integrates ``N(w) = G(f_t^{-1}(w)) |(f_t^{-1})'(w)|^(2-d)`` over
    ``f_t(D)``: on each image cell, the mean of ``N`` at its corners (inverse
    map recomputed by zipping down) times the cell's polygon area.  Both
    rules are second order, so ``rel_err`` decays like ``m^-2``.
    """
    x0, x1, y0, y1 = map(float, rect)
    if not (x1 > x0 and y1 > y0):
        raise GeometryError("rectangle must have positive extent")
    if y0 < 0.1:
        raise GeometryError("rectangle must stay at least 0.1 above the real axis")
    d_bulk = 1 + kappa / 8
    X, Y = np.meshgrid(np.linspace(x0, x1, m + 1), np.linspace(y0, y1, m + 1))
    Z = X + 1j * Y
    dr = driver.truncated(t)
    b = run_flow(dr.increments, dr.dt, Z, scheme=scheme)
    W, dW = b.w, b.dw
    wx = np.ones(m + 1)
    wx[[0, -1]] = 0.5
    hx, hy = (x1 - x0) / m, (y1 - y0) / m
    lhs = float(np.sum(wx[:, None] * wx[None, :] * np.abs(dW) ** d_bulk * analytic.natural_param_density(Z, kappa)) * hx * hy)

    pre, dpre = zip_down(dr, W, scheme=scheme)
    N = analytic.natural_param_density(pre, kappa) * np.abs(dpre) ** (2 - d_bulk)
    corner_mean = 0.25 * (N[:-1, :-1] + N[:-1, 1:] + N[1:, 1:] + N[1:, :-1])
    area = _shoelace(W[:-1, :-1], W[:-1, 1:], W[1:, 1:], W[1:, :-1])
    rhs = float(np.sum(corner_mean * area))
    return CovarianceRecord(int(m), lhs, rhs, abs(lhs - rhs) / abs(lhs))
