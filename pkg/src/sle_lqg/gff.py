"""Gaussian free fields on grids, circle averages and regularised LQG measures.

Normalisation: the field has Dirichlet energy ``(1/2pi) int |grad h|^2``, so
its covariance is the Green function with ``-Laplacian G = 2 pi delta``
(``G(y, z) ~ -log|y - z|``).  In a Laplacian eigenbasis ``(lam_k, phi_k)``,

    h = sum_k xi_k sqrt(2 pi / lam_k) phi_k,   xi_k iid N(0, 1).

Rectangular boxes use fast sine (Dirichlet) or cosine (Neumann) transforms.
The masked unit disc has no fast eigenbasis; there the same Gaussian law is
sampled as ``sqrt(2 pi) M^{-1} B^T xi`` with ``B`` the edge-node incidence
matrix and ``M = B^T B`` the scaled five-point Laplacian.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Iterator, Optional, Sequence, Union

import numpy as np
import scipy.fft
import scipy.signal
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, DomainError, GeometryError
from .loewner import _normals, derive_seed

__all__ = [
    "UnitDisc",
    "HalfPlaneBox",
    "DIRICHLET",
    "NEUMANN",
    "GridField",
    "sample_gff",
    "iter_gff",
    "circle_average",
    "semicircle_average",
    "circle_average_samples",
    "MomentFit",
    "fit_moment_slope",
    "moment_test",
    "QuantumMeasure",
    "quantum_area",
    "boundary_length_density",
    "boundary_quantum_length",
    "piecewise_linear_integral",
]

DIRICHLET = "dirichlet"
NEUMANN = "neumann"


@dataclass(frozen=True)
class UnitDisc:
    """Unit disc, embedded in the square ``[-1, 1]^2`` by masking."""

    def contains(self, z):
        return np.abs(np.asarray(z)) < 1.0

    @property
    def area(self) -> float:
        return math.pi


@dataclass(frozen=True)
class HalfPlaneBox:
    """Box ``[-width/2, width/2] x [0, height]`` standing on the real axis."""

    width: float
    height: float

    def contains(self, z):
        z = np.asarray(z)
        return (np.abs(z.real) <= self.width / 2) & (z.imag >= 0) & (z.imag <= self.height)

    @property
    def area(self) -> float:
        return self.width * self.height


Domain = Union[UnitDisc, HalfPlaneBox]


@dataclass(frozen=True)
class GridField:
    """Field values on a uniform node grid; ``values[i, j]`` sits at ``(x[j], y[i])``."""

    domain: Domain
    bc: str
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    seed: Optional[int] = None

    @property
    def n(self) -> tuple:
        return self.values.shape[1], self.values.shape[0]

    @property
    def hx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def hy(self) -> float:
        return float(self.y[1] - self.y[0])

    @property
    def spacing(self) -> float:
        return min(self.hx, self.hy)

    def mask(self) -> np.ndarray:
        """Nodes belonging to the domain."""
        if isinstance(self.domain, UnitDisc):
            X, Y = np.meshgrid(self.x, self.y)
            return self.domain.contains(X + 1j * Y)
        return np.ones(self.values.shape, dtype=bool)

    def with_values(self, values) -> "GridField":
        return GridField(self.domain, self.bc, self.x, self.y, np.asarray(values, dtype=float), self.seed)

    def __add__(self, other):
        if isinstance(other, GridField):
            return self.with_values(self.values + other.values)
        return self.with_values(self.values + other)

    def evaluate(self, points) -> np.ndarray:
        """Bilinear interpolation at complex ``points``.

        Dirichlet fields vanish off the grid (zero extension).  Neumann fields
        are extended by reflection, which is the constant extension over the
        half cell between the outermost nodes and the box edge; further out
        raises :class:`GeometryError`.
        """
        p = np.asarray(points, dtype=complex)
        fx = (p.real - self.x[0]) / self.hx
        fy = (p.imag - self.y[0]) / self.hy
        nx, ny = self.n
        if self.bc == NEUMANN:
            tol = 1e-9
            if np.any((fx < -0.5 - tol) | (fx > nx - 0.5 + tol) | (fy < -0.5 - tol) | (fy > ny - 0.5 + tol)):
                raise GeometryError("point outside the Neumann box")
            fx = np.clip(fx, 0, nx - 1)
            fy = np.clip(fy, 0, ny - 1)
            outside = None
        else:
            outside = (fx < 0) | (fx > nx - 1) | (fy < 0) | (fy > ny - 1)
            fx = np.clip(fx, 0, nx - 1)
            fy = np.clip(fy, 0, ny - 1)
        j = np.minimum(np.floor(fx).astype(np.intp), nx - 2)
        i = np.minimum(np.floor(fy).astype(np.intp), ny - 2)
        tx, ty = fx - j, fy - i
        v = self.values
        out = ((1 - ty) * ((1 - tx) * v[i, j] + tx * v[i, j + 1])
               + ty * ((1 - tx) * v[i + 1, j] + tx * v[i + 1, j + 1]))
        if outside is not None and np.any(outside):
            out = np.where(outside, 0.0, out)
        return out

    def header(self) -> dict:
        dom = ({"type": "UnitDisc"} if isinstance(self.domain, UnitDisc)
               else {"type": "HalfPlaneBox", "width": self.domain.width, "height": self.domain.height})
        return {"domain": dom, "n": list(self.n), "bc": self.bc, "seed": self.seed,
                "x0": float(self.x[0]), "y0": float(self.y[0]), "hx": self.hx, "hy": self.hy,
                "dtype": "float64", "order": "row-major (y, x)"}

    def save(self, stem) -> None:
        """Write ``<stem>.bin`` (row-major float64) and ``<stem>.json`` (header)."""
        np.ascontiguousarray(self.values, dtype="<f8").tofile(f"{stem}.bin")
        with open(f"{stem}.json", "w") as fh:
            json.dump(self.header(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, stem) -> "GridField":
        with open(f"{stem}.json") as fh:
            hd = json.load(fh)
        nx, ny = hd["n"]
        vals = np.fromfile(f"{stem}.bin", dtype="<f8").reshape(ny, nx)
        d = hd["domain"]
        dom = UnitDisc() if d["type"] == "UnitDisc" else HalfPlaneBox(d["width"], d["height"])
        x = hd["x0"] + hd["hx"] * np.arange(nx)
        y = hd["y0"] + hd["hy"] * np.arange(ny)
        return cls(dom, hd["bc"], x, y, vals, hd["seed"])


def _grid_shape(n):
    nx, ny = (n, n) if np.isscalar(n) else n
    nx, ny = int(nx), int(ny)
    if min(nx, ny) < 16:
        raise ConfigError("grid resolution must be at least 16 per side")
    return nx, ny


class _Sampler:
    """Maps standard normal vectors to field arrays for one (domain, n, bc)."""

    def __init__(self, domain, n, bc):
        self.domain, self.bc = domain, bc
        nx, ny = self.nx, self.ny = _grid_shape(n)
        if isinstance(domain, UnitDisc):
            if bc != DIRICHLET:
                raise ConfigError("the unit disc supports Dirichlet boundary conditions only")
            self.x = np.linspace(-1.0, 1.0, nx)
            self.y = np.linspace(-1.0, 1.0, ny)
            if nx != ny:
                raise ConfigError("the disc grid must be square")
            self._disc = _disc_operator(nx)
            self.n_normals = self._disc[1].shape[1]
        elif isinstance(domain, HalfPlaneBox):
            W, H = domain.width, domain.height
            if bc == NEUMANN:
                hx, hy = W / nx, H / ny
                self.x = -W / 2 + hx * (np.arange(nx) + 0.5)
                self.y = hy * (np.arange(ny) + 0.5)
                kx, ky = np.arange(nx), np.arange(ny)
                lam = ((2 / hy * np.sin(np.pi * ky / (2 * ny)))[:, None] ** 2
                       + (2 / hx * np.sin(np.pi * kx / (2 * nx)))[None, :] ** 2)
                lam[0, 0] = np.inf
                self.scale = np.sqrt(2 * np.pi / (lam * hx * hy))
                self.n_normals = nx * ny
            elif bc == DIRICHLET:
                self.x = np.linspace(-W / 2, W / 2, nx)
                self.y = np.linspace(0.0, H, ny)
                hx, hy = self.x[1] - self.x[0], self.y[1] - self.y[0]
                kx, ky = np.arange(1, nx - 1), np.arange(1, ny - 1)
                lam = ((2 / hy * np.sin(np.pi * ky / (2 * (ny - 1))))[:, None] ** 2
                       + (2 / hx * np.sin(np.pi * kx / (2 * (nx - 1))))[None, :] ** 2)
                self.scale = np.sqrt(2 * np.pi / (lam * hx * hy))
                self.n_normals = (nx - 2) * (ny - 2)
            else:
                raise ConfigError(f"unknown boundary condition {bc!r}")
        else:
            raise ConfigError(f"unsupported domain {domain!r}")

    def sample(self, xi: np.ndarray) -> np.ndarray:
        """``xi`` has shape ``(B, n_normals)``; returns ``(B, ny, nx)``."""
        B = xi.shape[0]
        nx, ny = self.nx, self.ny
        if isinstance(self.domain, UnitDisc):
            idx, Bt, lu = self._disc
            rhs = (Bt @ xi.T) * math.sqrt(2 * math.pi)
            out = np.zeros((B, ny * nx))
            # one column at a time: blocked solves round differently, and a
            # field must not depend on which batch it was drawn in
            for k in range(B):
                out[k, idx] = lu.solve(np.ascontiguousarray(rhs[:, k]))
            return out.reshape(B, ny, nx)
        if self.bc == NEUMANN:
            coef = xi.reshape(B, ny, nx) * self.scale
            out = scipy.fft.idctn(coef, type=2, norm="ortho", axes=(1, 2))
            return out - out.mean(axis=(1, 2), keepdims=True)
        coef = xi.reshape(B, ny - 2, nx - 2) * self.scale
        out = np.zeros((B, ny, nx))
        out[:, 1:-1, 1:-1] = scipy.fft.idstn(coef, type=1, norm="ortho", axes=(1, 2))
        return out


@lru_cache(maxsize=4)
def _disc_operator(n):
    g = np.linspace(-1.0, 1.0, n)
    X, Y = np.meshgrid(g, g)
    inside = (X**2 + Y**2 < 1.0).ravel()
    idx = np.flatnonzero(inside)
    pos = -np.ones(n * n, dtype=np.intp)
    pos[idx] = np.arange(idx.size)
    node = np.arange(n * n).reshape(n, n)
    pairs = [(node[:, :-1].ravel(), node[:, 1:].ravel()), (node[:-1, :].ravel(), node[1:, :].ravel())]
    rows, cols, vals = [], [], []
    e = 0
    for a, b in pairs:
        keep = inside[a] | inside[b]
        a, b = a[keep], b[keep]
        ids = e + np.arange(a.size)
        for ends, sign in ((a, 1.0), (b, -1.0)):
            m = inside[ends]
            rows.append(ids[m])
            cols.append(pos[ends[m]])
            vals.append(np.full(m.sum(), sign))
        e += a.size
    inc = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(e, idx.size))
    M = (inc.T @ inc).tocsc()
    return idx, inc.T.tocsr(), spla.splu(M)


@lru_cache(maxsize=8)
def _sampler(domain, n, bc):
    return _Sampler(domain, n, bc)


def _key_n(n):
    return n if np.isscalar(n) else tuple(n)


def iter_gff(domain: Domain, n, bc: str, seeds: Sequence[int], chunk: int = 16) -> Iterator[GridField]:
    """Yield one field per seed, sampling ``chunk`` fields at a time.

    Field ``i`` depends only on ``seeds[i]``; ``chunk`` only sets how many
    transforms are batched together.
    """
    s = _sampler(domain, _key_n(n), bc)
    seeds = list(seeds)
    for start in range(0, len(seeds), chunk):
        block = seeds[start:start + chunk]
        xi = np.stack([_normals(sd, s.n_normals) for sd in block])
        for sd, vals in zip(block, s.sample(xi)):
            yield GridField(domain, bc, s.x, s.y, vals, int(sd))


def sample_gff(domain: Domain, n, bc: str, seed: int) -> GridField:
    """One GFF sample with the ``2 pi`` Green-function normalisation."""
    return next(iter_gff(domain, n, bc, [seed], chunk=1))


def _circle_points(z, eps, K, half=False):
    z = np.asarray(z, dtype=complex)
    if half:
        theta = np.linspace(0.0, np.pi, K + 1)
    else:
        theta = 2 * np.pi * np.arange(K) / K
    return z[..., None] + eps * np.exp(1j * theta)


def _n_angles(field, eps):
    return max(64, int(math.ceil(2 * math.pi * eps / field.spacing)))


def _check_radius(field, eps):
    if eps < 2 * field.spacing * (1 - 1e-9):
        raise GeometryError(f"epsilon={eps} is below two grid spacings ({2 * field.spacing:.4g})")


def _inside(field, pts):
    dom = field.domain
    if isinstance(dom, UnitDisc):
        return np.abs(pts) <= 1.0 + 1e-12
    tol = 1e-12
    return ((np.abs(pts.real) <= dom.width / 2 + tol) & (pts.imag >= -tol)
            & (pts.imag <= dom.height + tol))


def circle_average(field: GridField, z, epsilon: float, *, allow_exit: bool = False):
    """Mean of the interpolated field over the circle of radius ``epsilon`` about ``z``.

    Uses ``K = max(64, ceil(2 pi eps / spacing))`` equally spaced points.
    With ``allow_exit`` a Dirichlet field is extended by zero outside its
    domain; otherwise a circle leaving the domain raises GeometryError.
    """
    _check_radius(field, epsilon)
    pts = _circle_points(z, epsilon, _n_angles(field, epsilon))
    if not (allow_exit and field.bc == DIRICHLET) and not np.all(_inside(field, pts)):
        raise GeometryError("circle leaves the domain")
    out = field.evaluate(pts).mean(axis=-1)
    return out if out.ndim else float(out)


def semicircle_average(values_on_arc: np.ndarray) -> np.ndarray:
    """Trapezoid mean over ``theta in [0, pi]`` of samples taken at ``K + 1`` angles."""
    v = np.asarray(values_on_arc)
    K = v.shape[-1] - 1
    return (v.sum(axis=-1) - 0.5 * (v[..., 0] + v[..., -1])) / K


def circle_average_samples(fields: Iterable[GridField], z, epsilons: Sequence[float]) -> np.ndarray:
    """Array ``(n_fields, n_eps)`` of circle averages, streaming over ``fields``."""
    rows = [[circle_average(f, z, e) for e in epsilons] for f in fields]
    return np.array(rows, dtype=float)


@dataclass(frozen=True)
class MomentFit:
    """Least-squares slope of ``log E exp(gamma h_eps)`` against ``log(1/eps)``."""

    gamma: float
    epsilons: np.ndarray
    log_moments: np.ndarray
    log_moment_se: np.ndarray
    slope: float
    stderr: float
    intercept: float

    @property
    def expected_slope(self) -> float:
        return self.gamma**2 / 2

    @property
    def z_score(self) -> float:
        if self.stderr == 0:
            return 0.0 if self.slope == self.expected_slope else math.inf
        return (self.slope - self.expected_slope) / self.stderr


def fit_moment_slope(samples: np.ndarray, gamma: float, epsilons: Sequence[float]) -> MomentFit:
    """Fit the moment exponent from circle-average samples.

    The standard error propagates the full sample covariance of
    ``exp(gamma h_eps)`` across radii (delta method), since every radius is
    measured on the same fields.
    """
    eps = np.asarray(epsilons, dtype=float)
    if eps.size < 3:
        raise ConfigError("a moment fit needs at least three radii")
    X = np.asarray(samples, dtype=float)
    N = X.shape[0]
    if gamma == 0:
        z = np.zeros(eps.size)
        return MomentFit(0.0, eps, z, z, 0.0, 0.0, 0.0)
    E = np.exp(gamma * X)
    m = E.mean(axis=0)
    cov = np.cov(E, rowvar=False) / N
    jac = 1 / m
    cov_log = cov * np.outer(jac, jac)
    t = np.log(1 / eps)
    c = (t - t.mean()) / np.sum((t - t.mean()) ** 2)
    logm = np.log(m)
    slope = float(c @ logm)
    se = float(math.sqrt(max(c @ cov_log @ c, 0.0)))
    return MomentFit(float(gamma), eps, logm, np.sqrt(np.diag(cov_log)), slope, se,
                     float(logm.mean() - slope * t.mean()))


def moment_test(fields: Iterable[GridField], gamma: float, z, epsilons: Sequence[float]) -> MomentFit:
    """Estimate ``E exp(gamma h_eps(z))`` per radius from a field ensemble and fit its exponent."""
    if len(epsilons) < 3:
        raise ConfigError("a moment fit needs at least three radii")
    return fit_moment_slope(circle_average_samples(fields, z, epsilons), gamma, epsilons)


@dataclass(frozen=True)
class QuantumMeasure:
    """Regularised quantum area ``eps^(gamma^2/2) exp(gamma h_eps) dA`` per grid cell."""

    cell_mass: np.ndarray = field(repr=False)
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    epsilon: float = 0.0
    gamma: float = 0.0

    @property
    def total(self) -> float:
        return float(self.cell_mass.sum())

    def to_csv(self, path) -> None:
        ny, nx = self.cell_mass.shape
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["cell_index", "x", "y", "mass"])
            for i in range(ny):
                for j in range(nx):
                    m = self.cell_mass[i, j]
                    if m:
                        out.writerow([i * nx + j, repr(float(self.x[j])), repr(float(self.y[i])), repr(float(m))])


def quantum_area(field: GridField, gamma: float, epsilon: float) -> QuantumMeasure:
    """Cell masses ``eps^(gamma^2/2) exp(gamma h_eps(node)) hx hy`` over the domain's nodes.

    Dirichlet fields use the zero extension for circles reaching the
    boundary; on a Neumann box, nodes whose circle leaves the box carry no mass.
    """
    if not 0 <= gamma < 2:
        raise DomainError("the regularised area measure is built for 0 <= gamma < 2")
    _check_radius(field, epsilon)
    X, Y = np.meshgrid(field.x, field.y)
    Z = X + 1j * Y
    mask = field.mask()
    if field.bc == NEUMANN:
        dom = field.domain
        mask = mask & (np.abs(Z.real) + epsilon <= dom.width / 2) & (Z.imag - epsilon >= 0) \
            & (Z.imag + epsilon <= dom.height)
    mass = np.zeros(Z.shape)
    if gamma == 0:
        mass[mask] = field.hx * field.hy
    else:
        avg = _all_circle_averages(field, epsilon)
        mass[mask] = epsilon ** (gamma**2 / 2) * np.exp(gamma * avg[mask]) * field.hx * field.hy
    return QuantumMeasure(mass, field.x, field.y, float(epsilon), float(gamma))


def _ring_kernel(field, epsilon):
    """Stencil whose correlation with the node values gives the circle average at every node."""
    K = _n_angles(field, epsilon)
    off = _circle_points(0j, epsilon, K)
    fx, fy = off.real / field.hx, off.imag / field.hy
    j, i = np.floor(fx).astype(np.intp), np.floor(fy).astype(np.intp)
    tx, ty = fx - j, fy - i
    r = int(max(np.abs(j).max(), np.abs(i).max())) + 1
    ker = np.zeros((2 * r + 1, 2 * r + 1))
    for di, dj, w in ((0, 0, (1 - ty) * (1 - tx)), (0, 1, (1 - ty) * tx),
                      (1, 0, ty * (1 - tx)), (1, 1, ty * tx)):
        np.add.at(ker, (i + di + r, j + dj + r), w / K)
    return ker, r


def _all_circle_averages(field, epsilon):
    """Circle averages centred at every node, extending the field as :meth:`GridField.evaluate` does."""
    ker, r = _ring_kernel(field, epsilon)
    # edge replication reproduces the Neumann clamp; zeros the Dirichlet extension
    padded = np.pad(field.values, r, mode="edge" if field.bc == NEUMANN else "constant")
    # correlation, i.e. convolution with the flipped stencil
    return scipy.signal.fftconvolve(padded, ker[::-1, ::-1], mode="valid")


def piecewise_linear_integral(xs: np.ndarray, fs: np.ndarray, a: float, b: float) -> float:
    """Exact integral over ``[a, b]`` of the linear interpolant of ``(xs, fs)``."""
    xs = np.asarray(xs, dtype=float)
    fs = np.asarray(fs, dtype=float)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (fs[1:] + fs[:-1]) * np.diff(xs))])

    def P(x):
        if x < xs[0] - 1e-12 or x > xs[-1] + 1e-12:
            raise GeometryError("integration limit outside the sampled range")
        j = int(np.clip(np.searchsorted(xs, x, side="right") - 1, 0, xs.size - 2))
        fx = np.interp(x, xs, fs)
        return cum[j] + (x - xs[j]) * 0.5 * (fs[j] + fx)

    return float(P(b) - P(a))


def boundary_length_density(field: GridField, gamma: float, s, epsilon: float) -> np.ndarray:
    """``eps^(gamma^2/4) exp((gamma/2) h_eps^semi(s))`` at real points ``s``."""
    if field.bc != NEUMANN:
        raise ConfigError("boundary quantum length needs a free (Neumann) boundary field")
    _check_radius(field, epsilon)
    s = np.asarray(s, dtype=float)
    pts = _circle_points(s + 0j, epsilon, _n_angles(field, epsilon) // 2, half=True)
    if not np.all(_inside(field, pts)):
        raise GeometryError("semicircle leaves the box")
    avg = semicircle_average(field.evaluate(pts))
    return epsilon ** (gamma**2 / 4) * np.exp(0.5 * gamma * avg)


def boundary_quantum_length(field: GridField, gamma: float, interval: Sequence[float], epsilon: float) -> float:
    """Regularised boundary quantum length of ``interval`` on the bottom edge.

    The density is sampled at the grid's x-nodes and integrated as a
    piecewise-linear function, so lengths are additive over adjacent intervals.
    """
    lo, hi = float(interval[0]), float(interval[1])
    if lo > hi:
        raise DomainError("interval must be increasing")
    j0 = max(int(np.searchsorted(field.x, lo, side="right")) - 1, 0)
    j1 = min(int(np.searchsorted(field.x, hi, side="left")) + 1, field.x.size)
    xs = field.x[j0:j1]
    if xs.size < 2 or lo < xs[0] - 1e-12 or hi > xs[-1] + 1e-12:
        raise GeometryError("interval must lie between the outermost grid nodes")
    if gamma == 0:
        return hi - lo
    return piecewise_linear_integral(xs, boundary_length_density(field, gamma, xs, epsilon), lo, hi)
