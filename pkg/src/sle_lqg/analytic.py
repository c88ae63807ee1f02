"""Closed-form exponents, charges, Green functions and densities.

Every quantity here is a pure function of ``kappa`` (or of ``gamma`` for the
KPZ map).  Bulk points are complex numbers in the open upper half-plane;
array inputs are accepted wherever the formula is pointwise.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, SingularityError

__all__ = [
    "LqgParams",
    "build_params",
    "background_charge",
    "kpz_bulk",
    "kpz_bulk_inverse",
    "kpz_dimension",
    "kpz_dimension_boundary",
    "central_charge",
    "neumann_green",
    "natural_param_density",
    "bulk_moment_initial",
    "boundary_moment_initial",
    "expected_bulk_length_density",
    "expected_boundary_densities",
    "expected_area_density",
    "BoundaryDensities",
]


def _check_kappa(kappa, allow_zero=False):
    kappa = float(kappa)
    if not math.isfinite(kappa) or kappa < 0 or (kappa == 0 and not allow_zero):
        raise DomainError(f"kappa must be a positive finite number, got {kappa!r}")
    return kappa


@dataclass(frozen=True)
class LqgParams:
    """Exponents tied to one value of ``kappa``.

    ``d_boundary`` is ``None`` outside ``4 < kappa < 8``, where the boundary
    intersection measure is not constructed.
    """

    kappa: float
    gamma: float
    gamma_dual: float
    Q: float
    alpha_bulk: float
    beta_boundary: float
    d_bulk: float
    d_boundary: Optional[float]

    @property
    def kappa_dual(self) -> float:
        return 16.0 / self.kappa

    def as_dict(self) -> dict:
        return {
            "kappa": self.kappa,
            "gamma": self.gamma,
            "gamma_dual": self.gamma_dual,
            "Q": self.Q,
            "alpha_bulk": self.alpha_bulk,
            "beta_boundary": self.beta_boundary,
            "d_bulk": self.d_bulk,
            "d_boundary": self.d_boundary,
            "central_charge": central_charge(self.kappa),
        }


def background_charge(kappa: float) -> float:
    """``Q = sqrt(kappa)/2 + 2/sqrt(kappa)``."""
    s = math.sqrt(_check_kappa(kappa))
    return s / 2 + 2 / s


def build_params(kappa: float) -> LqgParams:
    """Bundle the LQG exponents associated with ``SLE_kappa``.

    Examples
    --------
    >>> p = build_params(4.0)
    >>> p.gamma, p.gamma_dual, p.Q, p.d_bulk
    (2.0, 2.0, 2.0, 1.5)
    """
    kappa = _check_kappa(kappa)
    s = math.sqrt(kappa)
    gamma = min(s, 4 / s)
    gamma_dual = max(s, 4 / s)
    alpha = s / 2
    beta = s / 2 - 2 / s
    params = LqgParams(
        kappa=kappa,
        gamma=gamma,
        gamma_dual=gamma_dual,
        Q=gamma / 2 + 2 / gamma,
        alpha_bulk=alpha,
        beta_boundary=beta,
        d_bulk=1 + kappa / 8,
        d_boundary=(2 - 8 / kappa) if 4 < kappa < 8 else None,
    )
    if beta > params.Q / 2:
        warnings.warn(
            f"boundary exponent {beta:.4g} exceeds Q/2 = {params.Q / 2:.4g} at kappa={kappa}",
            RuntimeWarning,
            stacklevel=2,
        )
    return params


def _check_gamma_subcritical(gamma):
    gamma = float(gamma)
    if not (0 < gamma < 2):
        raise DomainError(f"gamma must lie in (0, 2), got {gamma!r}")
    return gamma


def kpz_bulk(delta, gamma):
    """Euclidean weight ``x = (gamma^2/4) delta^2 + (1 - gamma^2/4) delta``."""
    g = _check_gamma_subcritical(gamma) ** 2 / 4
    delta = np.asarray(delta, dtype=float)
    out = g * delta**2 + (1 - g) * delta
    return out if out.ndim else float(out)


def kpz_bulk_inverse(x, gamma):
    """Nonnegative quantum weight ``delta`` solving ``kpz_bulk(delta, gamma) == x``.

    Uses the cancellation-free form of the quadratic root.
    """
    g = _check_gamma_subcritical(gamma) ** 2 / 4
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("the nonnegative KPZ root exists only for x >= 0")
    b = 1 - g
    out = 2 * x / (b + np.sqrt(b * b + 4 * g * x))
    return out if out.ndim else float(out)


def _seiberg_warn(value, bound, label):
    if value > bound:
        warnings.warn(f"{label} = {value:.6g} exceeds its Seiberg bound {bound:.6g}",
                      RuntimeWarning, stacklevel=3)


def kpz_dimension(alpha: float, params: LqgParams) -> float:
    """Bulk dimension ``d = alpha*Q - alpha^2/2``; warns when ``alpha > Q``."""
    _seiberg_warn(alpha, params.Q, "alpha")
    return alpha * params.Q - alpha**2 / 2


def kpz_dimension_boundary(beta: float, params: LqgParams) -> float:
    """Boundary dimension ``d_hat = beta*Q - beta^2``; warns when ``beta > Q/2``."""
    _seiberg_warn(beta, params.Q / 2, "beta")
    return beta * params.Q - beta**2


def central_charge(kappa: float) -> float:
    """``c = (6 - kappa)(6 - 16/kappa)/4``, symmetric under ``kappa -> 16/kappa``."""
    kappa = _check_kappa(kappa)
    lo, hi = sorted((kappa, 16.0 / kappa))
    return (6 - lo) * (6 - hi) / 4


def _bulk(z, name="z"):
    z = np.asarray(z, dtype=complex)
    if np.any(~np.isfinite(z)):
        raise SingularityError(f"{name} must be finite")
    if np.any(z.imag <= 0):
        raise SingularityError(f"{name} must lie strictly in the upper half-plane")
    return z


def _out(a):
    return a if np.ndim(a) else float(a)


def neumann_green(y, z):
    """Neumann Green function of the half-plane, ``-log(|y - z| |y - conj(z)|)``.

    Normalised so that ``-Laplacian G = 2 pi delta``.
    """
    y = _bulk(y, "y")
    z = _bulk(z, "z")
    sep = np.abs(y - z)
    if np.any(sep == 0):
        raise SingularityError("neumann_green is singular at y == z")
    return _out(-np.log(sep * np.abs(y - np.conj(z))))


def natural_param_density(z, kappa):
    """Expected natural-parametrisation density ``|z|^a (Im z)^b``.

    ``a = 1 - 8/kappa`` and ``b = 8/kappa + kappa/8 - 2``.
    """
    kappa = _check_kappa(kappa)
    z = _bulk(z)
    a = 1 - 8 / kappa
    b = 8 / kappa + kappa / 8 - 2
    return _out(np.abs(z) ** a * z.imag**b)


def bulk_moment_initial(z, alpha, kappa):
    """``E exp(alpha h(z)) = |z|^(2 alpha/sqrt(kappa)) (Im z)^(-alpha^2/2)`` at time zero."""
    kappa = _check_kappa(kappa)
    z = _bulk(z)
    return _out(np.abs(z) ** (2 * alpha / math.sqrt(kappa)) * z.imag ** (-(alpha**2) / 2))


def boundary_moment_initial(x, beta, kappa):
    """Boundary analogue ``x^(2 beta / sqrt(kappa))`` for ``x > 0``."""
    kappa = _check_kappa(kappa)
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise SingularityError("boundary moments need x > 0")
    return _out(x ** (2 * beta / math.sqrt(kappa)))


def _sin_arg(z):
    return z.imag / np.abs(z)


def expected_bulk_length_density(z, kappa):
    """Expected quantum length density ``(sin arg z)^(8/kappa - 2)``.

    Equals ``bulk_moment_initial(z, sqrt(kappa)/2, kappa) * natural_param_density(z, kappa)``.
    """
    kappa = _check_kappa(kappa)
    z = _bulk(z)
    return _out(_sin_arg(z) ** (8 / kappa - 2))


def expected_area_density(w, kappa):
    """Invariant expected quantum area density at ``w``.

    ``|w|^(2 - kappa/2) (sin phi)^(-kappa/2)`` for ``kappa <= 4`` and
    ``(sin phi)^(-8/kappa)`` for ``kappa >= 4``.
    """
    kappa = _check_kappa(kappa)
    w = _bulk(w, "w")
    s = _sin_arg(w)
    if kappa <= 4:
        return _out(np.abs(w) ** (2 - kappa / 2) * s ** (-kappa / 2))
    return _out(s ** (-8 / kappa))


@dataclass(frozen=True)
class BoundaryDensities:
    """``intersection_density`` is ``None`` unless ``4 < kappa < 8``."""

    intersection_density: Optional[float]
    boundary_length_density: float


def expected_boundary_densities(x, kappa) -> BoundaryDensities:
    """Expected boundary densities at a positive boundary point.

    The intersection density is ``x^(2 - 12/kappa)``; the quantum boundary
    length density is ``u`` for ``kappa <= 4`` and ``u^(4/kappa)`` otherwise.
    """
    kappa = _check_kappa(kappa)
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise SingularityError("boundary densities need a positive argument")
    inter = _out(x ** (2 - 12 / kappa)) if 4 < kappa < 8 else None
    length = _out(x if kappa <= 4 else x ** (4 / kappa))
    return BoundaryDensities(inter, length)
