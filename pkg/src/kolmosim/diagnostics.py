"""Quantities the local-existence argument tracks: the norm-growth exponent
beta(s), the guaranteed existence time and uniform norm ceiling, per-sample
energy-inequality residuals over a trajectory, and pointwise extrema checks
against the comparison-ODE envelopes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Sequence, Tuple

import numpy as np

from .cutoffs import CutoffProfile
from .spectral import fast_grid_size
from .system import SimState


@dataclass(frozen=True)
class ConstantModel:
    """Time-dependent constant C(t) = c_tilde * (1+t)^gamma."""

    c_tilde: float
    gamma: float = 0.0

    def __post_init__(self):
        if self.c_tilde <= 0:
            raise ValueError("c_tilde must be positive")

    def __call__(self, t) -> float:
        return self.c_tilde * (1.0 + np.asarray(t, dtype=float)) ** self.gamma


def beta_exponent(s: float, d: int) -> float:
    """Norm-growth exponent beta(s) > 1 for d/2 < s.

    The closed form is stated for d/2 < s <= d/2 + 1; above that range the
    same expression is evaluated literally (a conservative choice, see
    beta_formula_extended).
    """
    if s <= d / 2:
        raise ValueError(f"need s > d/2: s={s}, d={d}")
    gap = s - d / 2
    return 0.5 * max(4.0, (2 * math.ceil(s) + 3 + 0.5 * gap) * 4.0 / gap)


def beta_formula_extended(s: float, d: int) -> bool:
    """True when s lies above the range the beta formula was derived for."""
    return s > d / 2 + 1


def uniform_bound(initial_triple_sq: float) -> float:
    """Ceiling 2*X0 + 1 for the squared triple norm on [0, T]."""
    return 2.0 * initial_triple_sq + 1.0


def p_k(triple_sq, k: float):
    """Norm polynomial P_k = (1 + triple_sq)^(k/2)."""
    return (1.0 + np.asarray(triple_sq, dtype=float)) ** (k / 2.0)


def _budget(initial_triple_sq: float, beta: float) -> float:
    return (1.0 - 2.0 ** (1.0 - beta)) * (1.0 + initial_triple_sq) ** (1.0 - beta)


def _growth_integral(t: float, cmodel: ConstantModel) -> float:
    """Closed form of the accumulated constant int_0^t c(1+tau)^gamma dtau."""
    if cmodel.gamma == -1.0:
        return cmodel.c_tilde * math.log1p(t)
    g1 = cmodel.gamma + 1.0
    return cmodel.c_tilde * ((1.0 + t) ** g1 - 1.0) / g1


def existence_time(initial_triple_sq: float, beta: float,
                   cmodel: ConstantModel) -> float:
    """Largest T with (beta-1) * int_0^T c(1+tau)^gamma dtau equal to the
    budget (1 - 2^(1-beta)) * (1 + X0)^(1-beta).

    Solved in closed form, then cross-checked against a bisection root of the
    same balance equation; the two must agree to 1e-10.  Returns math.inf
    when gamma < -1 and the bounded integral never spends the budget.
    """
    if beta <= 1.0:
        raise ValueError("beta must exceed 1")
    if initial_triple_sq < 0:
        raise ValueError("initial_triple_sq must be >= 0")
    target = _budget(initial_triple_sq, beta) / (beta - 1.0)

    if cmodel.gamma == -1.0:
        t_closed = math.expm1(target / cmodel.c_tilde)
    else:
        g1 = cmodel.gamma + 1.0
        x = g1 * target / cmodel.c_tilde
        if x <= -1.0:
            return math.inf
        # expm1/log1p keep tiny positive T (large beta, large X0) from
        # rounding to zero.
        t_closed = math.expm1(math.log1p(x) / g1)
        if not math.isfinite(t_closed):
            return math.inf

    # Independent root bracket + bisection on the residual.
    def residual(t):
        return _growth_integral(t, cmodel) - target

    hi = max(t_closed, 1e-6)
    for _ in range(200):
        if residual(hi) > 0:
            break
        hi *= 2.0
    else:
        return math.inf
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if residual(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-12 * max(1.0, hi):
            break
    t_bisect = 0.5 * (lo + hi)
    if abs(t_bisect - t_closed) > 1e-10 * max(1.0, abs(t_closed)):
        raise RuntimeError(
            f"closed form {t_closed!r} and bisection {t_bisect!r} disagree")
    return t_closed


@dataclass
class EnergyReport:
    """Per-sample energy-inequality data."""

    t: float
    norms: Tuple[float, float, float]        # (|v|_Hs, |omega|_Hs, |b|_Hs)
    triple_sq: float
    hs1_triple_sq: float
    p_values: dict
    lhs: float
    rhs_bound: float
    extrema: Tuple[float, float, float]      # (min omega, max omega, min b)

    @property
    def satisfied(self) -> bool:
        return self.lhs <= self.rhs_bound


def _grid_extrema(state: SimState, grid: int | None = None):
    pts = grid if grid is not None else fast_grid_size(4 * (2 * state.cutoff - 1))
    w = state.omega.physical(points=pts).real
    b = state.b.physical(points=pts).real
    return float(np.min(w)), float(np.max(w)), float(np.min(b))


def energy_balance(trajectory, s: float, nu_lower: Callable[[float], float],
                   beta: float, cmodel: ConstantModel,
                   p_orders: Sequence[float] = (),
                   grid: int | None = None) -> Tuple[List[EnergyReport], float]:
    """Evaluate the integrated energy inequality along a trajectory.

    lhs(t) = d/dt (1 + triple_sq) + nu_lower(t) * hs1_triple_sq, with the
    time derivative taken by centered differences over the sample times
    (one-sided at the ends).  Returns the per-sample reports plus the
    smallest empirical c_hat with lhs <= c_hat * (1+t)^gamma * P_{2 beta}
    everywhere.
    """
    states = list(trajectory.states) if hasattr(trajectory, "states") else list(trajectory)
    if len(states) < 3:
        raise ValueError("need at least 3 trajectory samples")
    times = np.array([st.t for st in states])
    triple = np.array([st.triple_norm_sq(s) for st in states])
    hs1 = np.array([st.triple_norm_sq(s + 1.0) - st.triple_norm_sq(s)
                    for st in states])
    d_dt = np.gradient(1.0 + triple, times)
    nu = np.array([nu_lower(t) for t in times])
    lhs = d_dt + nu * hs1
    shape = (1.0 + times) ** cmodel.gamma * p_k(triple, 2.0 * beta)
    rhs = cmodel.c_tilde * shape
    c_hat = max(0.0, float(np.max(lhs / shape)))

    reports = []
    for i, st in enumerate(states):
        reports.append(EnergyReport(
            t=float(times[i]),
            norms=(st.v.hs_norm(s), st.omega.hs_norm(s), st.b.hs_norm(s)),
            triple_sq=float(triple[i]),
            hs1_triple_sq=float(hs1[i]),
            p_values={k: float(p_k(triple[i], k)) for k in p_orders},
            lhs=float(lhs[i]),
            rhs_bound=float(rhs[i]),
            extrema=_grid_extrema(st, grid),
        ))
    return reports, c_hat


@dataclass(frozen=True)
class ExtremaReport:
    min_omega: float
    max_omega: float
    min_b: float
    passed: bool
    margins: Tuple[float, float, float] = field(default=(0.0, 0.0, 0.0))

    def __iter__(self):
        return iter((self.min_omega, self.max_omega, self.min_b, self.passed))


def extrema_monitor(state: SimState, profile: CutoffProfile, grid: int,
                    eps_tol: float = 1e-6) -> ExtremaReport:
    """Check grid extrema of omega and b against the envelope values at
    state.t, with relative slack eps_tol for quadrature and time-stepping
    error."""
    min_w, max_w, min_b = _grid_extrema(state, grid)
    env = profile.values(state.t)
    lo_w = env.omega_lower * (1.0 - eps_tol)
    hi_w = env.omega_upper * (1.0 + eps_tol)
    lo_b = env.b_lower * (1.0 - eps_tol)
    passed = (min_w >= lo_w) and (max_w <= hi_w) and (min_b >= lo_b)
    return ExtremaReport(min_w, max_w, min_b, passed,
                         margins=(min_w - lo_w, hi_w - max_w, min_b - lo_b))
