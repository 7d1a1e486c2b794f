"""Right-hand side of the truncated coefficient ODE system.

State is (v, omega, b) at one Galerkin cutoff n.  The evolution is

    dv = -P_n(v.grad v) + div P_n(nubar Dv) - grad p
    dw = -P_n(v.grad w) + div P_n(nubar grad w) - alpha P_n(w^2)
    db = -P_n(v.grad b) + div P_n(nubar grad b) - P_n(b w) + P_n(nubar |Dv|^2)

with Dv the symmetric gradient and p solving -lap p = div[P_n(v.grad v)
- div P_n(nubar Dv)] with zero mean, which makes dv exactly divergence-free.

Quadratic products are evaluated on an oversampled grid (alias-free for
oversample >= 2); only the composed viscosity nubar = Phi(b)/Psi(omega) is a
genuine quadrature, whose residual the oversampling controls.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .cutoffs import CutoffProfile, InitialBounds, nu_bar_grid
from .spectral import (
    FOUR_PI_SQ,
    SpectralField,
    VectorSpectralField,
    _geometry,
    coefficients_to_real_grid,
    fast_grid_size,
    real_grid_to_coefficients,
)


@dataclass
class ModelParams:
    alpha: float
    s: float
    bounds: InitialBounds
    oversample: int = 4

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.oversample < 2:
            raise ValueError("oversample must be >= 2 (alias-free quadratics)")

    def check_dimension(self, dim: int):
        if self.s <= dim / 2:
            raise ValueError(f"need s > d/2: s={self.s}, d={dim}")


@dataclass
class SimState:
    v: VectorSpectralField
    omega: SpectralField
    b: SpectralField
    t: float = 0.0

    def __post_init__(self):
        layouts = {(self.v.dim, self.v.cutoff),
                   (self.omega.dim, self.omega.cutoff),
                   (self.b.dim, self.b.cutoff)}
        if len(layouts) != 1:
            raise ValueError("v, omega, b must share dim and cutoff")

    @property
    def dim(self) -> int:
        return self.omega.dim

    @property
    def cutoff(self) -> int:
        return self.omega.cutoff

    def copy(self) -> "SimState":
        return SimState(self.v.copy(), self.omega.copy(), self.b.copy(), self.t)

    def fields(self):
        return list(self.v.components) + [self.omega, self.b]

    def triple_norm_sq(self, s: float) -> float:
        return self.v.hs_norm_sq(s) + self.omega.hs_norm_sq(s) + self.b.hs_norm_sq(s)

    def realness_residual(self) -> float:
        return max(f.realness_residual() for f in self.fields())

    def div_residual(self) -> float:
        return self.v.div_residual()

    def symmetrized(self) -> "SimState":
        return SimState(self.v.symmetrized(), self.omega.symmetrized(),
                        self.b.symmetrized(), self.t)

    def validate(self, div_tol: float = 1e-10, real_tol: float = 1e-12):
        if self.t < 0:
            raise ValueError("state time must be >= 0")
        if self.div_residual() > div_tol:
            raise ValueError(f"velocity not divergence-free: residual {self.div_residual():.3e}")
        if self.realness_residual() > real_tol:
            raise ValueError(f"coefficients not conjugate-symmetric: "
                             f"residual {self.realness_residual():.3e}")


def hypothesis_violations(state: SimState, s: float, grid_oversample: int = 4):
    """Checkable local-existence hypotheses; returns problem descriptions."""
    problems = []
    if state.dim < 2:
        problems.append(f"dimension d = {state.dim} < 2")
    if s <= state.dim / 2:
        problems.append(f"regularity s = {s} <= d/2 = {state.dim / 2}")
    if state.div_residual() > 1e-10:
        problems.append(f"div v0 != 0 (residual {state.div_residual():.3e})")
    pts = grid_oversample * (2 * state.cutoff - 1)
    w_min = float(np.min(state.omega.physical(points=pts).real))
    b_min = float(np.min(state.b.physical(points=pts).real))
    if w_min <= 0:
        problems.append(f"min omega_0 = {w_min:.3e} <= 0")
    if b_min <= 0:
        problems.append(f"min b_0 = {b_min:.3e} <= 0")
    return problems


def _derivative_multipliers(dim: int, cutoff: int):
    geo = _geometry(dim, cutoff)
    return [2j * np.pi * geo.k[a] for a in range(dim)]


def _assemble(state: SimState, params: ModelParams, profile: CutoffProfile):
    """One pass of grid products shared by rhs and pressure_gradient."""
    d, n = state.dim, state.cutoff
    # at least M*(2n-1) points, rounded up to an FFT-friendly size
    pts = fast_grid_size(params.oversample * (2 * n - 1))
    mult = _derivative_multipliers(d, n)

    v_c = [f.coeffs for f in state.v.components]
    w_c, b_c = state.omega.coeffs, state.b.coeffs

    stack = []
    stack.extend(v_c)                                   # d velocity components
    for i in range(d):                                  # d^2 velocity derivatives
        stack.extend(mult[j] * v_c[i] for j in range(d))
    stack.append(w_c)
    stack.extend(mult[j] * w_c for j in range(d))
    stack.append(b_c)
    stack.extend(mult[j] * b_c for j in range(d))
    # states hold the realness invariant, so the half-spectrum path applies
    grids = coefficients_to_real_grid(np.stack(stack), n, d, pts)

    v_g = grids[:d]
    dv_g = grids[d:d + d * d].reshape(d, d, *grids.shape[1:])   # dv_g[i, j] = d_j v_i
    w_g = grids[d + d * d]
    dw_g = grids[d + d * d + 1: d + d * d + 1 + d]
    b_g = grids[d + d * d + 1 + d]
    db_g = grids[d + d * d + 2 + d:]

    nu_g = nu_bar_grid(b_g, w_g, state.t, profile)

    deform = 0.5 * (dv_g + np.swapaxes(dv_g, 0, 1))             # symmetric gradient
    deform_sq = np.sum(deform * deform, axis=(0, 1))

    products = []
    products.extend(np.sum(v_g * dv_g[i], axis=0) for i in range(d))   # v.grad v
    products.append(np.sum(v_g * dw_g, axis=0))                        # v.grad w
    products.append(np.sum(v_g * db_g, axis=0))                        # v.grad b
    for i in range(d):                                                 # nubar Dv
        products.extend(nu_g * deform[i, j] for j in range(d))
    products.extend(nu_g * dw_g[j] for j in range(d))                  # nubar grad w
    products.extend(nu_g * db_g[j] for j in range(d))                  # nubar grad b
    products.append(w_g * w_g)
    products.append(b_g * w_g)
    products.append(nu_g * deform_sq)
    coeffs = real_grid_to_coefficients(np.stack(products), n, d)

    adv_v = coeffs[:d]
    adv_w = coeffs[d]
    adv_b = coeffs[d + 1]
    visc_v = coeffs[d + 2: d + 2 + d * d].reshape(d, d, *coeffs.shape[1:])
    visc_w = coeffs[d + 2 + d * d: d + 2 + d * d + d]
    visc_b = coeffs[d + 2 + d * d + d: d + 2 + d * d + 2 * d]
    w_sq = coeffs[-3]
    bw = coeffs[-2]
    production = coeffs[-1]

    # F = -P_n(v.grad v) + div P_n(nubar Dv), the force the pressure balances
    force = []
    for i in range(d):
        f_i = -adv_v[i]
        for j in range(d):
            f_i = f_i + mult[j] * visc_v[i, j]
        force.append(f_i)

    geo = _geometry(d, n)
    div_force = sum(mult[i] * force[i] for i in range(d))
    denom = np.where(geo.k_sq == 0, 1.0, FOUR_PI_SQ * geo.k_sq)
    p_hat = -div_force / denom
    center = (n - 1,) * d
    p_hat[center] = 0.0

    dv = [force[i] - mult[i] * p_hat for i in range(d)]
    dw = -adv_w + sum(mult[j] * visc_w[j] for j in range(d)) - params.alpha * w_sq
    db = (-adv_b + sum(mult[j] * visc_b[j] for j in range(d)) - bw + production)

    return {
        "force": VectorSpectralField(tuple(SpectralField(d, n, f) for f in force)),
        "grad_p": VectorSpectralField(tuple(SpectralField(d, n, mult[i] * p_hat) for i in range(d))),
        "dv": VectorSpectralField(tuple(SpectralField(d, n, c) for c in dv)),
        "domega": SpectralField(d, n, dw),
        "db": SpectralField(d, n, db),
        "pressure": SpectralField(d, n, p_hat),
    }


def pressure_gradient(state: SimState, params: ModelParams,
                      profile: CutoffProfile) -> VectorSpectralField:
    """grad p with -lap p = div[P_n(v.grad v) - div P_n(nubar Dv)], zero mean."""
    return _assemble(state, params, profile)["grad_p"]


def rhs(state: SimState, params: ModelParams,
        profile: CutoffProfile) -> Tuple[VectorSpectralField, SpectralField, SpectralField]:
    out = _assemble(state, params, profile)
    return out["dv"], out["domega"], out["db"]


def advective_diffusive_force(state: SimState, params: ModelParams,
                              profile: CutoffProfile) -> VectorSpectralField:
    """-P_n(v.grad v) + div P_n(nubar Dv), before pressure correction."""
    return _assemble(state, params, profile)["force"]


def leray_project(f: VectorSpectralField) -> VectorSpectralField:
    """Modewise removal of the gradient part (cross-check for the pressure path)."""
    return f.leray_project()


def transport_terms(state: SimState, oversample: int = 4):
    """Truncated advection products (P_n(v.grad v), P_n(v.grad w), P_n(v.grad b)).

    Exposed separately so the exact-convolution consistency of the quadratic
    terms across cutoffs can be checked in isolation.
    """
    d, n = state.dim, state.cutoff
    pts = fast_grid_size(oversample * (2 * n - 1))
    mult = _derivative_multipliers(d, n)
    v_c = [f.coeffs for f in state.v.components]
    stack = list(v_c)
    for i in range(d):
        stack.extend(mult[j] * v_c[i] for j in range(d))
    stack.append(state.omega.coeffs)
    stack.extend(mult[j] * state.omega.coeffs for j in range(d))
    stack.append(state.b.coeffs)
    stack.extend(mult[j] * state.b.coeffs for j in range(d))
    grids = coefficients_to_real_grid(np.stack(stack), n, d, pts)
    v_g = grids[:d]
    dv_g = grids[d:d + d * d].reshape(d, d, *grids.shape[1:])
    dw_g = grids[d + d * d + 1: d + d * d + 1 + d]
    db_g = grids[d + d * d + 2 + d:]
    prods = [np.sum(v_g * dv_g[i], axis=0) for i in range(d)]
    prods.append(np.sum(v_g * dw_g, axis=0))
    prods.append(np.sum(v_g * db_g, axis=0))
    coeffs = real_grid_to_coefficients(np.stack(prods), n, d)
    adv_v = VectorSpectralField(tuple(SpectralField(d, n, coeffs[i]) for i in range(d)))
    return adv_v, SpectralField(d, n, coeffs[d]), SpectralField(d, n, coeffs[d + 1])
