"""Martingales along Loewner flows and Monte Carlo checks of their expectations.

Evaluators take a :class:`~sle_lqg.loewner.FlowState` whose ``w``/``dw`` may
be arrays, so one call handles a whole batch of paths.  Monte Carlo runs are
split into fixed chunks of paths; chunk statistics are merged in index order,
which keeps the result bit-identical whatever the number of workers.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import analytic
from .errors import ConfigError, ConsistencyError, DomainError, SingularityError
from .loewner import FlowState, FlowTrajectory, derive_seed, run_flow, sample_increments

__all__ = [
    "McAccumulator",
    "MartingaleSample",
    "McSpec",
    "McResult",
    "QUANTITIES",
    "mart_h",
    "conformal_factor_C",
    "exp_martingale_bulk",
    "exp_martingale_boundary",
    "forward_length_martingale",
    "forward_boundary_martingale",
    "PathwiseRecord",
    "pathwise_qv_check",
    "pathwise_covariation_check",
    "richardson_ratio",
    "mc_expectation",
    "write_records_csv",
]

DUAL_FORM_RTOL = 1e-10
CHUNK = 256


@dataclass
class McAccumulator:
    """Streaming count/mean/sum-of-squared-deviations (Chan et al. merge)."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add(self, values) -> "McAccumulator":
        v = np.asarray(values, dtype=float).ravel()
        if v.size == 0:
            return self
        m = float(v.mean())
        return self.merge(McAccumulator(int(v.size), m, float(np.sum((v - m) ** 2))))

    def merge(self, other: "McAccumulator") -> "McAccumulator":
        if other.count == 0:
            return self
        if self.count == 0:
            self.count, self.mean, self.m2 = other.count, other.mean, other.m2
            return self
        n = self.count + other.count
        delta = other.mean - self.mean
        self.mean += delta * other.count / n
        self.m2 += other.m2 + delta * delta * self.count * other.count / n
        self.count = n
        return self

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else math.nan

    @property
    def standard_error(self) -> float:
        if self.count < 2:
            return math.nan
        return math.sqrt(self.m2 / (self.count * (self.count - 1)))


@dataclass(frozen=True)
class MartingaleSample:
    value_t: float
    value_0: float
    seed: int


def _nonzero(w):
    w = np.asarray(w)
    if np.any(w == 0):
        raise SingularityError("the tracked image sits at the driver (w = 0)")
    return w


def _interior(w):
    w = np.asarray(w)
    if np.any(w.imag <= 0):
        raise SingularityError("the tracked image is not in the open upper half-plane")
    return w


def _out(a):
    return a if np.ndim(a) else float(a)


def mart_h(state: FlowState, kappa: float):
    """``(2/sqrt(kappa)) log|w| + Q log|dw|``."""
    state.require_alive()
    w = _nonzero(state.w)
    Q = analytic.background_charge(kappa)
    return _out(2 / math.sqrt(kappa) * np.log(np.abs(w)) + Q * np.log(np.abs(state.dw)))


def conformal_factor_C(state: FlowState):
    """``-log(Im w |dw|)``."""
    w = _interior(state.w)
    return _out(-np.log(w.imag * np.abs(state.dw)))


def _agree(a, b, what):
    a, b = np.asarray(a), np.asarray(b)
    rel = np.abs(a - b) / np.maximum(np.abs(b), np.finfo(float).tiny)
    worst = float(np.max(rel)) if rel.size else 0.0
    if not worst <= DUAL_FORM_RTOL:
        raise ConsistencyError(f"{what}: closed forms differ by relative {worst:.3e}")


def exp_martingale_bulk(state: FlowState, alpha: float, kappa: float):
    """Exponential bulk martingale, computed in two equivalent ways.

    Returns ``|w|^(2 alpha/sqrt(kappa)) |dw|^(alpha Q - alpha^2/2) (Im w)^(-alpha^2/2)``
    after checking it against ``exp(alpha h + alpha^2 C / 2)``; a mismatch
    beyond relative 1e-10 raises :class:`ConsistencyError`.
    """
    state.require_alive()
    w = _interior(_nonzero(state.w))
    Q = analytic.background_charge(kappa)
    aw, adw = np.abs(w), np.abs(state.dw)
    product = aw ** (2 * alpha / math.sqrt(kappa)) * adw ** (alpha * Q - alpha**2 / 2) * w.imag ** (-(alpha**2) / 2)
    h = 2 / math.sqrt(kappa) * np.log(aw) + Q * np.log(adw)
    C = -np.log(w.imag * adw)
    _agree(np.exp(alpha * h + alpha**2 / 2 * C), product, "bulk exponential martingale")
    return _out(product)


def _boundary_image(state):
    w = np.asarray(state.w)
    if np.any(w.imag != 0) or np.any(w.real <= 0):
        raise DomainError("boundary martingale needs a real image to the right of the driver")
    dw = np.asarray(state.dw)
    if np.any(dw.imag != 0) or np.any(dw.real <= 0):
        raise DomainError("boundary derivative must be real and positive")
    return w.real, dw.real


def exp_martingale_boundary(state: FlowState, beta: float, kappa: float):
    """``u^(2 beta/sqrt(kappa)) f'^(beta Q - beta^2)`` for a real point right of the window.

    Cross-checked against ``exp(beta h) f'^(-beta^2)``.
    """
    u, fp = _boundary_image(state)
    Q = analytic.background_charge(kappa)
    product = u ** (2 * beta / math.sqrt(kappa)) * fp ** (beta * Q - beta**2)
    h = 2 / math.sqrt(kappa) * np.log(u) + Q * np.log(fp)
    _agree(np.exp(beta * h) * fp ** (-(beta**2)), product, "boundary exponential martingale")
    return _out(product)


def forward_length_martingale(state: FlowState, kappa: float):
    """``G(g_t(z)) |g_t'(z)|^(2 - d)`` with ``d = 1 + kappa/8``."""
    state.require_alive()
    d = 1 + kappa / 8
    return _out(analytic.natural_param_density(state.w, kappa) * np.abs(state.dw) ** (2 - d))


def forward_boundary_martingale(state: FlowState, kappa: float):
    """``(g_t(x)/g_t'(x))^(d_hat - 1)`` for ``4 < kappa < 8``."""
    if not 4 < kappa < 8:
        raise DomainError("the boundary intersection martingale needs 4 < kappa < 8")
    state.require_alive()
    u, gp = _boundary_image(state)
    return _out((u / gp) ** (1 - 8 / kappa))


@dataclass(frozen=True)
class PathwiseRecord:
    lhs: float
    rhs: float
    abs_err: float


def pathwise_qv_check(traj: FlowTrajectory) -> PathwiseRecord:
    """Compare the accumulated ``int Re(2/w)^2 dt`` with ``C_0 - C_t``."""
    lhs = float(traj.int_r2[-1])
    rhs = conformal_factor_C(traj.state(0)) - conformal_factor_C(traj.final)
    return PathwiseRecord(lhs, rhs, abs(lhs - rhs))


def pathwise_covariation_check(traj: FlowTrajectory) -> PathwiseRecord:
    """Compare ``int Re(2/w_y) Re(2/w_z) dt`` with ``G_0(y, z) - G_0(f_t(y), f_t(z))``."""
    if traj.w_pair is None:
        raise DomainError("trajectory must track a pair of points")
    y0, z0 = traj.w[0], traj.w_pair[0]
    if y0 == z0:
        raise SingularityError("coincident points")
    lhs = float(traj.int_rr[-1])
    rhs = analytic.neumann_green(y0, z0) - analytic.neumann_green(traj.w[-1], traj.w_pair[-1])
    return PathwiseRecord(lhs, rhs, abs(lhs - rhs))


def _pathwise_errors(increments, dt, z, pair):
    pts = np.array([z] if pair is None else [z, pair], dtype=complex)
    b = run_flow(increments, dt, pts, "reverse", cross=pair is not None)
    w = b.w
    if pair is None:
        rhs = -np.log(z.imag) + np.log(w[:, 0].imag * np.abs(b.dw[:, 0]))
        return np.abs(b.int_r2[:, 0] - rhs)
    rhs = analytic.neumann_green(z, pair) - analytic.neumann_green(w[:, 0], w[:, 1])
    return np.abs(b.int_rr - rhs)


def richardson_ratio(kappa: float, z: complex, total_time: float, dt: float, n_paths: int,
                     seed: int, pair: Optional[complex] = None) -> dict:
    """Order test for the pathwise identities.

    Each path is simulated at ``dt`` and, with Brownian-bridge midpoints, at
    ``dt/2``.  Returns the mean absolute errors at both steps and their ratio;
    first-order convergence gives a ratio near 1/2.
    """
    from .loewner import sample_driver

    coarse, fine = [], []
    for i in range(n_paths):
        d = sample_driver(kappa, total_time, dt, derive_seed(seed, i))
        coarse.append(d.increments)
        fine.append(d.refined().increments)
    e1 = _pathwise_errors(np.array(coarse), dt, complex(z), pair)
    e2 = _pathwise_errors(np.array(fine), dt / 2, complex(z), pair)
    return {"err_dt": float(e1.mean()), "err_half": float(e2.mean()),
            "ratio": float(e2.mean() / e1.mean()), "n_paths": n_paths}


# Monte Carlo -------------------------------------------------------------

QUANTITIES = {
    # name: (direction, needs real start, parameter name)
    "h": ("reverse", False, None),
    "M_bulk": ("reverse", False, "alpha"),
    "M_boundary": ("reverse", True, "beta"),
    "forward_length": ("forward", False, None),
    "forward_boundary": ("forward", True, None),
}


@dataclass(frozen=True)
class McSpec:
    """One Monte Carlo expectation experiment."""

    quantity: str
    z: complex
    kappa: float
    T: float
    dt: float
    N: int
    master_seed: int
    alpha: Optional[float] = None
    beta: Optional[float] = None
    name: str = ""
    swallowed: str = "exclude"

    def validate(self):
        if self.quantity not in QUANTITIES:
            raise ConfigError(f"unknown quantity {self.quantity!r}; choose from {sorted(QUANTITIES)}")
        _, real_start, pname = QUANTITIES[self.quantity]
        z = complex(self.z)
        if real_start and (z.imag != 0 or z.real <= 0):
            raise ConfigError(f"{self.quantity} is a boundary quantity: start must be a positive real")
        if not real_start and z.imag <= 0:
            raise ConfigError(f"{self.quantity} is a bulk quantity: start must be interior")
        if pname and getattr(self, pname) is None:
            raise ConfigError(f"{self.quantity} needs parameter {pname}")
        if self.quantity == "forward_boundary" and not 4 < self.kappa < 8:
            raise ConfigError("forward_boundary needs 4 < kappa < 8")
        if self.swallowed not in ("exclude", "stop"):
            raise ConfigError("swallowed must be 'exclude' or 'stop'")
        if self.swallowed == "stop" and self.quantity == "M_boundary":
            raise ConfigError("M_boundary keeps only the final state; use swallowed='exclude'")
        if self.N < 100:
            raise ConfigError("N must be at least 100")

    def params(self) -> dict:
        d = {"quantity": self.quantity, "z": [complex(self.z).real, complex(self.z).imag],
             "kappa": self.kappa, "T": self.T}
        if self.alpha is not None:
            d["alpha"] = self.alpha
        if self.beta is not None:
            d["beta"] = self.beta
        return d


def _evaluate(spec: McSpec, state: FlowState):
    q = spec.quantity
    if q == "h":
        return mart_h(state, spec.kappa)
    if q == "M_bulk":
        return exp_martingale_bulk(state, spec.alpha, spec.kappa)
    if q == "M_boundary":
        return exp_martingale_boundary(state, spec.beta, spec.kappa)
    if q == "forward_length":
        return forward_length_martingale(state, spec.kappa)
    return forward_boundary_martingale(state, spec.kappa)


def _target(spec: McSpec) -> float:
    z = complex(spec.z)
    start = FlowState(0.0, np.array([z]), np.array([1 + 0j]))
    return float(np.asarray(_evaluate(spec, start))[0])


def _chunk_stats(args):
    spec, start, stop = args
    label = spec.name or spec.quantity
    seeds = [derive_seed(spec.master_seed, label, i) for i in range(start, stop)]
    inc = sample_increments(spec.kappa, spec.T, spec.dt, seeds)
    direction = QUANTITIES[spec.quantity][0]
    b = run_flow(inc, spec.dt, np.array([complex(spec.z)]), direction)
    alive = b.alive[:, 0]
    if direction == "reverse" and QUANTITIES[spec.quantity][1]:
        # a real point zipped onto the curve leaves the boundary martingale's domain
        alive = alive & (b.w[:, 0].imag == 0) & (b.w[:, 0].real > 0)
    # a swallowed point keeps its last live state, which is the stopped process
    keep = alive if spec.swallowed == "exclude" else np.ones_like(alive)
    st = FlowState(spec.T, b.w[keep, 0], b.dw[keep, 0], True)
    vals = np.asarray(_evaluate(spec, st), dtype=float)
    acc = McAccumulator().add(vals)
    return acc, int((~alive).sum()), vals, [s for s, k in zip(seeds, keep) if k]


@dataclass
class McResult:
    name: str
    params: dict
    mean: float
    stderr: float
    target: float
    z_score: float
    n_paths: int
    dt: float
    seed: int
    n_excluded: int = 0
    samples: Optional[list] = field(default=None, repr=False)

    @property
    def excluded_fraction(self) -> float:
        return self.n_excluded / self.n_paths

    def record(self) -> dict:
        d = asdict(self)
        d.pop("samples")
        d["excluded_fraction"] = self.excluded_fraction
        return d

    def to_json(self) -> str:
        return json.dumps(self.record(), sort_keys=True)


def z_score(mean, stderr, target):
    if stderr == 0 or not math.isfinite(stderr):
        return 0.0 if mean == target else math.inf
    return (mean - target) / stderr


def mc_expectation(spec: McSpec, workers: int = 1, chunk: int = CHUNK, keep_samples: bool = False) -> McResult:
    """Monte Carlo mean of a martingale at time ``T`` against its value at time 0.

    Path ``i`` uses seed ``derive_seed(master_seed, name, i)`` (``name``
    defaults to the quantity).  Forward-flow paths whose point is swallowed
    before ``T``, and reverse-flow paths that zip a real start onto the curve,
    are counted in ``n_excluded``; with
    ``swallowed="exclude"`` they are dropped, with ``"stop"`` they contribute
    their value at the swallowing step.  Dropping them conditions on survival
    and biases the mean whenever swallowing is not negligible.
    """
    spec.validate()
    target = _target(spec)
    jobs = [(spec, s, min(s + chunk, spec.N)) for s in range(0, spec.N, chunk)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk_stats, jobs))
    else:
        parts = [_chunk_stats(j) for j in jobs]
    acc, excluded, samples = McAccumulator(), 0, []
    for a, ex, vals, seeds in parts:
        acc.merge(a)
        excluded += ex
        if keep_samples:
            samples.extend(MartingaleSample(float(v), target, s) for v, s in zip(vals, seeds))
    if acc.count >= 2 and acc.m2 == 0:
        se = 0.0
    else:
        se = acc.standard_error
    return McResult(spec.name or spec.quantity, spec.params(), acc.mean, se, target,
                    z_score(acc.mean, se, target), spec.N, spec.dt, spec.master_seed, excluded,
                    samples if keep_samples else None)


def write_records_csv(records, path) -> None:
    """Aggregate CSV of experiment records (``params`` serialised as JSON)."""
    keys = ["name", "mean", "stderr", "target", "z_score", "n_paths", "dt", "seed", "params"]
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(keys)
        for r in records:
            r = r.record() if hasattr(r, "record") else r
            out.writerow([json.dumps(r[k], sort_keys=True) if k == "params" else r.get(k) for k in keys])
