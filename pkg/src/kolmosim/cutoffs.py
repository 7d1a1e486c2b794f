"""Time-dependent comparison bounds and the smooth cutoff functions that
regularize the turbulent viscosity.

The lower/upper envelopes solve the comparison ODEs w' = -alpha*w^2 and
b' = -b*omega_upper; the cutoffs Phi (for b) and Psi (for omega) are C-infinity
monotone piecewise blends built from the classical exp(-1/u) step, so every
finite derivative-bound requirement is met by one construction.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .spectral import SpectralField, grid_to_coefficients


@dataclass(frozen=True)
class InitialBounds:
    """Pointwise bounds of the admissible initial data."""

    b_min0: float
    omega_min0: float
    omega_max0: float
    alpha: float

    def __post_init__(self):
        if not (0 < self.omega_min0 <= self.omega_max0):
            raise ValueError("need 0 < omega_min0 <= omega_max0")
        if self.b_min0 <= 0:
            raise ValueError("need b_min0 > 0")
        if self.alpha <= 0:
            raise ValueError("need alpha > 0")


class ProfileValues(NamedTuple):
    b_lower: float
    omega_lower: float
    omega_upper: float
    nu_lower: float


def time_profiles(bounds: InitialBounds, t: float) -> ProfileValues:
    """Envelope values (b_lower, omega_lower, omega_upper, nu_lower) at time t.

    omega_lower(t) = omega_min0 / (1 + alpha*omega_min0*t)
    omega_upper(t) = omega_max0 / (1 + alpha*omega_max0*t)
    b_lower(t)     = b_min0 * (1 + alpha*omega_max0*t)^(-1/alpha)
    nu_lower(t)    = b_lower(t) / (4 * omega_upper(t))
    """
    if t < 0:
        raise ValueError("profiles defined for t >= 0 only")
    a = bounds.alpha
    w_lo = bounds.omega_min0 / (1.0 + a * bounds.omega_min0 * t)
    w_hi = bounds.omega_max0 / (1.0 + a * bounds.omega_max0 * t)
    b_lo = bounds.b_min0 * (1.0 + a * bounds.omega_max0 * t) ** (-1.0 / a)
    nu_lo = 0.25 * b_lo / w_hi
    return ProfileValues(b_lo, w_lo, w_hi, nu_lo)


def smooth_step(u):
    """C-infinity monotone step: 0 for u <= 0, 1 for u >= 1."""
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        lo = np.where(u > 0.0, np.exp(-1.0 / np.maximum(u, 1e-300)), 0.0)
        hi = np.where(u < 1.0, np.exp(-1.0 / np.maximum(1.0 - u, 1e-300)), 0.0)
    out = lo / (lo + hi)
    return np.where(u <= 0.0, 0.0, np.where(u >= 1.0, 1.0, out))


@dataclass(frozen=True)
class CutoffProfile:
    """Immutable cutoff construction for one run.

    smoothness_order is ceil(s)+1, the number of derivatives whose bounds the
    estimates consume; the exp-bump construction is C-infinity so the order
    only matters for the recorded derivative constant.
    """

    bounds: InitialBounds
    smoothness_order: int = 3
    transition: str = "exp-bump"

    def __post_init__(self):
        if self.smoothness_order < 1:
            raise ValueError("smoothness_order must be >= 1")
        if self.transition != "exp-bump":
            raise ValueError(f"unknown transition construction: {self.transition}")

    def values(self, t: float) -> ProfileValues:
        return time_profiles(self.bounds, t)

    @functools.cached_property
    def derivative_constant(self) -> float:
        """Measured c0 with |Phi^(k)| <= c0*b_lower^(1-k), |Psi^(k)| <= c0*omega_lower^(1-k)."""
        return measure_derivative_constant(self, self.smoothness_order)


def phi_b(x, t: float, profile: CutoffProfile):
    """Cutoff for b: plateau b_lower/2 below, identity above b_lower."""
    b_lo = time_profiles(profile.bounds, t).b_lower
    x = np.asarray(x, dtype=float)
    u = (x - 0.5 * b_lo) / (0.5 * b_lo)
    s = smooth_step(u)
    blend = (1.0 - s) * (0.5 * b_lo) + s * x
    out = np.where(x < 0.5 * b_lo, 0.5 * b_lo, np.where(x >= b_lo, x, blend))
    return out if out.ndim else float(out)


def psi_omega(x, t: float, profile: CutoffProfile):
    """Cutoff for omega: plateaus omega_lower/2 and 2*omega_upper, identity band between."""
    vals = time_profiles(profile.bounds, t)
    w_lo, w_hi = vals.omega_lower, vals.omega_upper
    x = np.asarray(x, dtype=float)
    s_lo = smooth_step((x - 0.5 * w_lo) / (0.5 * w_lo))
    lower_blend = (1.0 - s_lo) * (0.5 * w_lo) + s_lo * x
    s_hi = smooth_step((x - w_hi) / w_hi)
    upper_blend = (1.0 - s_hi) * x + s_hi * (2.0 * w_hi)
    out = np.where(
        x < 0.5 * w_lo, 0.5 * w_lo,
        np.where(x < w_lo, lower_blend,
                 np.where(x <= w_hi, x,
                          np.where(x < 2.0 * w_hi, upper_blend, 2.0 * w_hi))))
    return out if out.ndim else float(out)


def nu_bar_grid(b_grid: np.ndarray, omega_grid: np.ndarray, t: float,
                profile: CutoffProfile) -> np.ndarray:
    """Pointwise regularized viscosity Phi_t(b)/Psi_t(omega) on a physical grid."""
    return phi_b(b_grid, t, profile) / psi_omega(omega_grid, t, profile)


def nu_bar(b_n: SpectralField, omega_n: SpectralField, t: float, n_grid: int,
           profile: CutoffProfile) -> SpectralField:
    """Regularized viscosity as a truncated spectral field.

    n_grid is the number of physical points per axis used for the composition
    quadrature; it must resolve the fields (n_grid >= 2*cutoff-1).
    """
    if (b_n.dim, b_n.cutoff) != (omega_n.dim, omega_n.cutoff):
        raise ValueError("fields must share layout")
    b_grid = b_n.physical(points=n_grid).real
    w_grid = omega_n.physical(points=n_grid).real
    grid = nu_bar_grid(b_grid, w_grid, t, profile)
    coeffs = grid_to_coefficients(grid.astype(complex), b_n.cutoff, b_n.dim)
    return SpectralField(b_n.dim, b_n.cutoff, coeffs)


def _max_derivatives(fn, lo: float, hi: float, order: int, points: int = 4001):
    """sup |f^(k)| for k = 1..order by repeated second-order differencing."""
    xs = np.linspace(lo, hi, points)
    ys = fn(xs)
    sups = []
    for _ in range(order):
        ys = np.gradient(ys, xs)
        sups.append(float(np.max(np.abs(ys))))
    return sups


def measure_derivative_constant(profile: CutoffProfile, order: int,
                                t_values=(0.0, 1.0, 10.0)) -> float:
    """Empirical c0 over the sampled times; recorded, not asserted a priori."""
    c0 = 0.0
    for t in t_values:
        vals = time_profiles(profile.bounds, t)
        b_lo, w_lo, w_hi = vals.b_lower, vals.omega_lower, vals.omega_upper
        sups = _max_derivatives(lambda x: phi_b(x, t, profile), 0.0, 2.0 * b_lo, order)
        for k, sup in enumerate(sups, start=1):
            c0 = max(c0, sup * b_lo ** (k - 1))
        sups = _max_derivatives(lambda x: psi_omega(x, t, profile), 0.0, 3.0 * w_hi, order)
        for k, sup in enumerate(sups, start=1):
            c0 = max(c0, sup * w_lo ** (k - 1))
    return c0
