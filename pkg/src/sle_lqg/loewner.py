"""Brownian drivers and split-step Loewner flows.

Each time step composes two exactly solvable flows: the slit flow
``dw/dt = -+2/w`` (solved by ``w -> sqrt(w^2 -+ 4 dt)``) and a translation by
the driver increment.  The reverse (zipping-up) step is slit-then-shift,

    w <- sqrt(w^2 - 4 dt) - dW,

and the forward (zipping-down) step is shift-then-slit,

    w <- sqrt((w - dW)^2 + 4 dt).

With a constant driver both factors are exact, so ``f_t(z) = sqrt(z^2 - 4t)``
is reproduced to rounding.  Running the forward flow with the increments of
a reverse run reversed in time and negated inverts that run step by step.

``scheme="tilted"`` replaces the vertical slit plus translation by one
slanted slit per step, the exact map for a driver moving like ``sqrt(s)``
within the step.  Its tip sits exactly where the driver ends, so every step
zips a pair of real intervals onto the curve from both sides.  Welding
computations use it for that reason.
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import AbsorbedError, DomainError, LifecycleError, NoPartnerError

__all__ = [
    "derive_seed",
    "DriverPath",
    "sample_driver",
    "zero_driver",
    "driver_from_increments",
    "sample_increments",
    "FlowState",
    "FlowTrajectory",
    "FlowBatch",
    "run_flow",
    "reverse_flow",
    "forward_flow",
    "zip_down",
    "welding_window",
    "find_welded_partner",
    "WELD_TOLERANCE",
]

WELD_TOLERANCE = 1e-9
MAX_BISECTION = 200


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from any sequence of ints/strings (blake2b digest)."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(repr(p).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def _normals(seed: int, n: int) -> np.ndarray:
    # Philox is counter-based: draw j of a stream is a pure function of (seed, j).
    return np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1))).standard_normal(n)


@dataclass(frozen=True)
class DriverPath:
    """Increments ``sqrt(kappa) dB`` of a Brownian driver on a uniform grid."""

    kappa: float
    dt: float
    increments: np.ndarray = field(repr=False)
    seed: int = 0

    def __post_init__(self):
        inc = np.array(self.increments, dtype=float)
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def n_steps(self) -> int:
        return self.increments.size

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def values(self) -> np.ndarray:
        """Driver path ``sqrt(kappa) B_t`` on the grid, starting at 0."""
        return np.concatenate([[0.0], np.cumsum(self.increments)])

    def step_index(self, t: float) -> int:
        k = int(round(t / self.dt))
        if t < 0 or k > self.n_steps or abs(k * self.dt - t) > 1e-9 * max(1.0, t):
            raise DomainError(f"t={t} is not a grid time within the horizon {self.horizon}")
        return k

    def truncated(self, t: float) -> "DriverPath":
        return DriverPath(self.kappa, self.dt, self.increments[: self.step_index(t)], self.seed)

    def time_reversed(self, negate: bool = True) -> "DriverPath":
        """Increments in reverse order (negated by default): the zip-down driver."""
        inc = self.increments[::-1]
        return DriverPath(self.kappa, self.dt, -inc if negate else inc.copy(), self.seed)

    def refined(self) -> "DriverPath":
        """Same Brownian path on the grid ``dt/2`` (Brownian-bridge midpoints)."""
        xi = _normals(derive_seed(self.seed, "refine", self.n_steps), self.n_steps)
        half = 0.5 * self.increments + 0.5 * math.sqrt(self.kappa * self.dt) * xi
        inc = np.empty(2 * self.n_steps)
        inc[0::2] = half
        inc[1::2] = self.increments - half
        return DriverPath(self.kappa, self.dt / 2, inc, derive_seed(self.seed, "refined"))


def _check_grid(kappa, total_time, dt):
    for name, v in (("kappa", kappa), ("total_time", total_time), ("dt", dt)):
        if not math.isfinite(v):
            raise DomainError(f"{name} must be finite")
    if kappa < 0 or dt <= 0 or total_time < 0:
        raise DomainError("need kappa >= 0, dt > 0, total_time >= 0")
    n = int(round(total_time / dt))
    if abs(n * dt - total_time) > 1e-9 * max(1.0, total_time):
        raise DomainError("dt must divide total_time")
    return n


def sample_driver(kappa: float, total_time: float, dt: float, seed: int) -> DriverPath:
    """Driver with i.i.d. ``Normal(0, kappa dt)`` increments keyed on ``seed``."""
    n = _check_grid(kappa, total_time, dt)
    inc = math.sqrt(kappa * dt) * _normals(seed, n)
    return DriverPath(float(kappa), float(dt), inc, int(seed))


def zero_driver(total_time: float, dt: float, kappa: float = 0.0) -> DriverPath:
    """Identically zero driver; ``kappa`` only labels it for kappa-dependent observables."""
    n = _check_grid(0.0, total_time, dt)
    return DriverPath(float(kappa), float(dt), np.zeros(n), 0)


def driver_from_increments(increments, dt: float, kappa: float = float("nan")) -> DriverPath:
    return DriverPath(kappa, float(dt), np.asarray(increments, dtype=float), 0)


def sample_increments(kappa: float, total_time: float, dt: float, seeds) -> np.ndarray:
    """Stack of driver increments, one row per seed; row ``i`` equals
    ``sample_driver(kappa, total_time, dt, seeds[i]).increments``."""
    n = _check_grid(kappa, total_time, dt)
    scale = math.sqrt(kappa * dt)
    out = np.empty((len(seeds), n))
    for i, s in enumerate(seeds):
        out[i] = scale * _normals(s, n)
    return out


def _slit(w, c):
    """``sqrt(w^2 + c)`` on the branch asymptotic to ``w``, lifted to ``Im >= 0``.

    Real points keep their sign; real points inside the slit interval go to
    the upper side of the slit.
    """
    w = np.asarray(w, dtype=complex)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = w * np.sqrt(1 + c / (w * w))
    zero = w == 0
    if np.any(zero):
        s = np.where(zero, np.sqrt(complex(c)), s)
    return np.where(s.imag < 0, -s, s)


def _tilt(shift, dt):
    """Exponent and base points of the tilted slit whose tip has preimage ``shift``.

    The map ``F(u) = (u + left)^(1 - alpha) (u - right)^alpha`` sends the
    upper half-plane onto itself minus a segment at angle ``alpha pi``, with
    ``F(u) = u - 2 dt/u + O(u^-2)`` and critical point ``u = shift``.  It is the
    exact Loewner map of the driver ``U(s) = shift sqrt(s/dt)`` over one step.
    """
    s = np.asarray(shift, dtype=float) / (2 * math.sqrt(dt))
    alpha = 0.5 * (1 - s / np.sqrt(s * s + 4))
    left = 2 * np.sqrt(dt * alpha / (1 - alpha))
    right = 2 * np.sqrt(dt * (1 - alpha) / alpha)
    return alpha, left, right


def _upper(u):
    return u.real + 1j * np.abs(u.imag)


def _tilted_map(u, alpha, left, right):
    """``F(u)`` and ``F'(u)/F(u)``; real points off the slit interval stay real."""
    u = _upper(np.asarray(u, dtype=complex))
    F = np.exp((1 - alpha) * np.log(u + left) + alpha * np.log(u - right))
    real = (u.imag == 0) & ((u.real > right) | (u.real < -left))
    if np.any(real):
        x = u.real
        with np.errstate(invalid="ignore", divide="ignore"):
            mag = np.abs(x + left) ** (1 - alpha) * np.abs(x - right) ** alpha
        F = np.where(real, np.sign(x) * mag + 0j, F)
    return F, (1 - alpha) / (u + left) + alpha / (u - right)


def _tilted_inverse(w, dt, alpha, left, right, tol=1e-15, max_iter=80):
    """Root ``u`` in the closed upper half-plane of ``F(u) = w`` (Newton on ``log F``)."""
    w = _upper(np.asarray(w, dtype=complex))
    logw = np.log(w)
    u = _slit(w, 4 * dt)
    for _ in range(max_iter):
        g = (1 - alpha) * np.log(u + left) + alpha * np.log(u - right) - logw
        dg = (1 - alpha) / (u + left) + alpha / (u - right)
        step = g / dg
        u_new = u - step
        for _ in range(60):
            bad = u_new.imag < 0
            if not np.any(bad):
                break
            step = np.where(bad, step / 2, step)
            u_new = u - step
        u = _upper(u_new)
        if np.all(np.abs(step) <= tol * np.maximum(1.0, np.abs(u))):
            break
    return u


def _reverse_step(w, a, dt, scheme):
    """One zipping-up step; returns the new image and the derivative factor."""
    if scheme == "vertical":
        s = _slit(w, -4 * dt)
        return s - a, w / s
    alpha, left, right = _tilt(-a, dt)
    F, dlog = _tilted_map(w - a, alpha, left, right)
    return F, F * dlog


def _forward_step(w, b, dt, scheme):
    """One zipping-down step with driver increment ``b``; returns image, factor and the
    pre-slit point (used to detect swallowing)."""
    if scheme == "vertical":
        shifted = w - b
        s = _slit(shifted, 4 * dt)
        return s, shifted / s, shifted
    alpha, left, right = _tilt(b, dt)
    u = _tilted_inverse(w, dt, alpha, left, right)
    F, dlog = _tilted_map(u, alpha, left, right)
    return u - b, 1 / (F * dlog), w


SCHEMES = ("vertical", "tilted")


@dataclass(frozen=True)
class FlowState:
    """Image ``w`` and derivative ``dw`` of a tracked point at time ``t``.

    ``w``, ``dw`` and ``alive`` may be arrays (one entry per path or point).
    """

    t: float
    w: complex
    dw: complex
    alive: bool = True

    def require_alive(self):
        if not np.all(self.alive):
            raise LifecycleError("state refers to a swallowed point")


@dataclass(frozen=True)
class FlowBatch:
    """Output of :func:`run_flow`.

    Arrays have shape ``batch`` (final state only) or ``(n_steps + 1,) + batch``
    when ``recorded``.  ``int_r2`` accumulates ``Re(2/w)^2 dt`` per point and
    ``int_rr`` accumulates ``Re(2/w_0) Re(2/w_1) dt`` over the trailing pair axis.
    """

    direction: str
    dt: float
    t: np.ndarray
    w: np.ndarray
    dw: np.ndarray
    alive: np.ndarray
    int_r2: np.ndarray
    int_rr: Optional[np.ndarray] = None
    recorded: bool = False

    def state(self, k: int = -1) -> FlowState:
        if self.recorded:
            return FlowState(float(self.t[k]), self.w[k], self.dw[k], self.alive[k])
        if k not in (-1, self.t.size - 1):
            raise DomainError("only the final state was kept; run with record=True")
        return FlowState(float(self.t[-1]), self.w, self.dw, self.alive)


def _prepare(increments, points):
    inc = np.asarray(increments, dtype=float)
    z = np.asarray(points, dtype=complex)
    if inc.ndim == 1:
        return inc, z.copy(), lambda k: inc[k]
    if inc.ndim != 2:
        raise DomainError("increments must be 1-D or (paths, steps)")
    cols = np.ascontiguousarray(inc.T)
    shape = (inc.shape[0],) + (1,) * z.ndim
    w = np.broadcast_to(z, (inc.shape[0],) + z.shape).copy()
    return inc, w, lambda k: cols[k].reshape(shape)


def run_flow(increments, dt: float, points, direction: str = "reverse", *,
             scheme: str = "vertical", record: bool = False, cross: bool = False,
             swallow_tolerance: Optional[float] = None) -> FlowBatch:
    """Evolve ``points`` under the reverse or forward flow.

    ``increments`` is 1-D (one driver, state shape ``points.shape``) or
    ``(P, N)`` (P drivers, state shape ``(P,) + points.shape``).  With
    ``cross=True`` the trailing axis of the state must have length 2 and the
    off-diagonal integral of ``Re(2/w)`` products is accumulated.  Pathwise
    integrals use the post-step state.
    """
    if direction not in ("reverse", "forward"):
        raise DomainError(f"unknown direction {direction!r}")
    if scheme not in SCHEMES:
        raise DomainError(f"unknown scheme {scheme!r}")
    inc, w, step_inc = _prepare(increments, points)
    n = inc.shape[-1]
    dt = float(dt)
    tol = 2 * math.sqrt(dt) if swallow_tolerance is None else swallow_tolerance

    if direction == "reverse" and np.any(w == 0):
        raise AbsorbedError("the origin is the seed of the reverse flow")
    if cross and w.shape[-1] != 2:
        raise DomainError("cross integrals need a trailing axis of length 2")

    dw = np.ones_like(w)
    alive = np.ones(w.shape, dtype=bool)
    real_sign = np.where(w.imag == 0, np.sign(w.real), 0.0)
    int_r2 = np.zeros(w.shape)
    int_rr = np.zeros(w.shape[:-1]) if cross else None

    hist = {k: [] for k in ("w", "dw", "alive", "r2", "rr")}

    def push():
        hist["w"].append(w.copy())
        hist["dw"].append(dw.copy())
        hist["alive"].append(alive.copy())
        hist["r2"].append(int_r2.copy())
        if cross:
            hist["rr"].append(int_rr.copy())

    if record:
        push()

    for k in range(n):
        a = step_inc(k)
        if direction == "reverse":
            if np.any(w == 0):
                raise AbsorbedError(f"a boundary point hit the seed at step {k}")
            w, factor = _reverse_step(w, a, dt, scheme)
            dw = dw * factor
        else:
            new, factor, pre = _forward_step(w, a, dt, scheme)
            dead = np.abs(pre - (a if scheme == "tilted" else 0)) < tol
            dead |= (real_sign != 0) & (np.sign(new.real) != real_sign)
            dead |= (real_sign == 0) & (new.imag <= 0)
            alive = alive & ~dead
            w = np.where(alive, new, w)
            dw = np.where(alive, dw * factor, dw)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = (2 / w).real
        r = np.where(alive, r, 0.0)
        int_r2 = int_r2 + r * r * dt
        if cross:
            int_rr = int_rr + r[..., 0] * r[..., 1] * dt
        if record:
            push()

    t = dt * np.arange(n + 1)
    if record:
        rr = np.array(hist["rr"]) if cross else None
        return FlowBatch(direction, dt, t, np.array(hist["w"]), np.array(hist["dw"]),
                         np.array(hist["alive"]), np.array(hist["r2"]), rr, True)
    return FlowBatch(direction, dt, t, w, dw, alive, int_r2, int_rr)


@dataclass(frozen=True)
class FlowTrajectory:
    """Time series of one tracked point (and optionally a partner point)."""

    direction: str
    kappa: float
    dt: float
    t: np.ndarray
    w: np.ndarray
    dw: np.ndarray
    alive: np.ndarray
    int_r2: np.ndarray
    w_pair: Optional[np.ndarray] = None
    dw_pair: Optional[np.ndarray] = None
    int_rr: Optional[np.ndarray] = None

    @property
    def n_steps(self) -> int:
        return self.t.size - 1

    def state(self, k: int = -1) -> FlowState:
        return FlowState(float(self.t[k]), complex(self.w[k]), complex(self.dw[k]), bool(self.alive[k]))

    def pair_state(self, k: int = -1) -> FlowState:
        if self.w_pair is None:
            raise DomainError("trajectory does not track a pair")
        return FlowState(float(self.t[k]), complex(self.w_pair[k]), complex(self.dw_pair[k]), True)

    @property
    def final(self) -> FlowState:
        return self.state(-1)

    def to_csv(self, path) -> None:
        """Write ``step, t, re_w, im_w, re_dw, im_dw, int_R2`` rows."""
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["step", "t", "re_w", "im_w", "re_dw", "im_dw", "int_R2"])
            for k in range(self.t.size):
                w, dw = self.w[k], self.dw[k]
                out.writerow([k, repr(float(self.t[k])), repr(float(w.real)), repr(float(w.imag)),
                              repr(float(dw.real)), repr(float(dw.imag)), repr(float(self.int_r2[k]))])


def _trajectory(driver, z0, track_pair, direction, scheme) -> FlowTrajectory:
    pair = track_pair is not None
    pts = np.array([z0, track_pair] if pair else [z0], dtype=complex)
    b = run_flow(driver.increments, driver.dt, pts, direction, scheme=scheme, record=True, cross=pair)
    return FlowTrajectory(
        direction, driver.kappa, driver.dt, b.t, b.w[:, 0], b.dw[:, 0], b.alive[:, 0], b.int_r2[:, 0],
        b.w[:, 1] if pair else None, b.dw[:, 1] if pair else None, b.int_rr if pair else None,
    )


def reverse_flow(driver: DriverPath, z0: complex, track_pair: Optional[complex] = None,
                 scheme: str = "vertical") -> FlowTrajectory:
    """Zipping-up flow ``f_t(z0)`` with derivative and pathwise ``Re(2/f)`` integrals.

    Examples
    --------
    >>> traj = reverse_flow(zero_driver(1.0, 0.01), 1j)
    >>> round(traj.final.w.imag, 6), round(traj.final.dw.real, 6)
    (2.236068, 0.447214)
    """
    z0 = complex(z0)
    if z0.imag < 0:
        raise DomainError("z0 must lie in the closed upper half-plane")
    return _trajectory(driver, z0, track_pair, "reverse", scheme)


def forward_flow(driver: DriverPath, z0: complex, scheme: str = "vertical") -> FlowTrajectory:
    """Zipping-down flow ``g_t(z0)``, centred at the driver.

    A point is marked swallowed at the first step where it comes within
    ``2 sqrt(dt)`` of the driver or, for a real start, crosses it.
    """
    z0 = complex(z0)
    if z0.imag < 0 or z0 == 0:
        raise DomainError("z0 must be in the upper half-plane or a nonzero real")
    return _trajectory(driver, z0, None, "forward", scheme)


def zip_down(driver: DriverPath, w, t: Optional[float] = None, scheme: str = "vertical"):
    """Preimage ``f_t^{-1}(w)`` and ``(f_t^{-1})'(w)`` for the reverse flow of ``driver``."""
    d = driver if t is None else driver.truncated(t)
    b = run_flow(d.time_reversed().increments, d.dt, w, "forward", scheme=scheme,
                 swallow_tolerance=0.0)
    return b.w, b.dw


class _RealZipper:
    """Reverse flow of real points, used to locate welded pairs.

    In step coordinates ``v`` (the image just before step ``k``) the step zips
    the open interval ``(lo_k, hi_k)`` onto the new slit; ``v = 0`` goes to the
    tip and points at equal ``height`` on opposite sides of 0 coincide.
    """

    def __init__(self, driver: DriverPath, scheme: str):
        self.inc = [float(a) for a in driver.increments]
        self.dt = driver.dt
        self.scheme = scheme
        if scheme == "tilted":
            al, le, ri = _tilt(-np.asarray(driver.increments), driver.dt)
            self.tilt = list(zip(al.tolist(), le.tolist(), ri.tolist()))
        self.thr = 2 * math.sqrt(self.dt)

    def zipped_now(self, k, v):
        if self.scheme == "vertical":
            return abs(v) < self.thr
        _, le, ri = self.tilt[k]
        u = v - self.inc[k]
        return -le < u < ri

    def height(self, k, v):
        if self.scheme == "vertical":
            return math.sqrt(max(4 * self.dt - v * v, 0.0))
        al, le, ri = self.tilt[k]
        u = v - self.inc[k]
        return abs(u + le) ** (1 - al) * abs(u - ri) ** al

    def advance(self, k, v):
        if self.scheme == "vertical":
            return math.copysign(math.sqrt(v * v - 4 * self.dt), v) - self.inc[k]
        al, le, ri = self.tilt[k]
        u = v - self.inc[k]
        return math.copysign(abs(u + le) ** (1 - al) * abs(u - ri) ** al, u)

    def zip_step(self, x, k_end):
        """``(k, v)``: step at which ``x`` is zipped and its pre-step value, or ``(None, v)``."""
        v = float(x)
        for k in range(k_end):
            if self.zipped_now(k, v):
                return k, v
            v = self.advance(k, v)
        return None, v


def welding_window(driver: DriverPath, t: float, scheme: str = "vertical") -> tuple:
    """Real interval ``(left, right)`` zipped onto the curve by time ``t``."""
    k_t = driver.step_index(t)
    rz = _RealZipper(driver, scheme)

    def zipped(y):
        return rz.zip_step(y, k_t)[0] is not None

    edges = []
    for sgn in (-1.0, 1.0):
        lo, hi = 0.0, sgn * 1.0
        while zipped(hi):
            lo, hi = hi, 2 * hi
        for _ in range(MAX_BISECTION):
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi):
                break
            if zipped(mid):
                lo = mid
            else:
                hi = mid
        edges.append(lo)
    return edges[0], edges[1]


def find_welded_partner(driver: DriverPath, t: float, x: float, *,
                        scheme: str = "vertical", tolerance: float = WELD_TOLERANCE,
                        accept_ulp_bracket: bool = False) -> float:
    """Negative boundary point ``x'`` with ``f_t(x') == f_t(x)``.

    Two points zipped in the same step at equal height on opposite sides of
    the tip preimage land on the same point of the curve.  The real flow
    preserves order on unzipped points, so the partner is located by
    bisection on the negative axis and then checked by direct re-evaluation.

    When a strongly tilted step sits just before the zip step, neighbouring
    doubles near ``x'`` can land far apart on the curve and no double meets
    ``tolerance``.  With ``accept_ulp_bracket`` such a partner is still
    returned if the height mismatch changes sign between two adjacent doubles.
    """
    if not x > 0:
        raise DomainError("x must be positive")
    k_t = driver.step_index(t)
    rz = _RealZipper(driver, scheme)
    k_x, v_x = rz.zip_step(x, k_t)
    if k_x is None:
        raise NoPartnerError(f"x={x} is not zipped by t={t}")
    if v_x <= 0:
        raise NoPartnerError(f"x={x} welds to a point on its own side")
    target = rz.height(k_x, v_x)

    def F(y):
        k, v = rz.zip_step(y, k_x)
        if k is not None or v >= 0:
            return 1.0
        if not rz.zipped_now(k_x, v):
            return -1.0
        return rz.height(k_x, v) - target

    hi, lo = 0.0, -max(1.0, 2 * x)
    while F(lo) >= 0:
        lo *= 2
        if lo < -1e12:
            raise NoPartnerError("no partner bracket on the negative axis")
    for _ in range(MAX_BISECTION):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if F(mid) < 0:
            lo = mid
        else:
            hi = mid
    cands = [y for y in (lo, hi) if abs(F(y)) < 1.0] or [lo]
    d = driver.truncated(t)
    pts = np.array([x] + cands, dtype=complex)
    w = run_flow(d.increments, d.dt, pts, scheme=scheme).w
    err = np.abs(w[1:] - w[0])
    best = int(np.argmin(err))
    bracketed = (np.nextafter(lo, 0.0) == hi and -1.0 < F(lo) < 0.0 < F(hi) < 1.0)
    if err[best] > tolerance and not (accept_ulp_bracket and bracketed):
        raise NoPartnerError(f"x={x} has no partner on the negative axis "
                             f"(closest mismatch {err[best]:.3g})")
    return cands[best]
