"""Unrolled accelerated iteration: extrapolation, data consistency, learned prox.

The recurrence, with one shared ERD block across all K steps:

    x0 = Ht y,  z1 = x0 + Ht(y - H x0)
    step k:  z  = x_k + w_k (x_k - x_{k-1})
             zt = z + Ht(y - H z)
             x_{k+1} = erd(zt)

``objective`` and ``majorizer`` evaluate the variational objective
J(x) = 1/2 ||y - Hx||^2 + lam R(x) and its quadratic surrogate for an
explicit test regularizer; they exist so tests can check the surrogate's
tightness/domination properties and monotone descent with an exact prox.
The learned prox path makes no descent claim.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import degradation as deg
from .erd import ErdWeights, ProjectionParams, erd_forward
from .errors import InvalidSpecError, StateError
from .tensor import Tensor, mul_scalar

# (K, fb_steps) defaults per scale: feedback pays off only at x4.
SOLVER_DEFAULTS = {2: (20, 1), 3: (20, 1), 4: (10, 4)}


@dataclass(frozen=True)
class SolverConfig:
    K: int
    fb_steps: int = 1
    scale: int = 2
    ht_mode: str = "bilinear"

    def __post_init__(self):
        if self.K < 0:
            raise InvalidSpecError(f"K must be >= 0, got {self.K}")
        if self.fb_steps < 1:
            raise InvalidSpecError(f"fb_steps must be >= 1, got {self.fb_steps}")
        if self.ht_mode not in deg.HT_MODES:
            raise InvalidSpecError(f"ht_mode must be one of {deg.HT_MODES}")

    @staticmethod
    def for_scale(scale: int, ht_mode: str = "bilinear") -> "SolverConfig":
        k, fb = SOLVER_DEFAULTS.get(scale, (20, 1))
        return SolverConfig(K=k, fb_steps=fb, scale=scale, ht_mode=ht_mode)


@dataclass
class SolverWeights:
    """K trainable extrapolation scalars, w[0] starting at zero."""

    w: list[Tensor] = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.w)


def init_extrapolation_weights(K: int, dtype=np.float64) -> SolverWeights:
    """w_t = (t - 1) / (t + 2) for t = 1..K: zero first, increasing toward 1."""
    if K < 1:
        raise InvalidSpecError(f"extrapolation weights need K >= 1, got {K}")
    return SolverWeights(
        [Tensor.scalar((t - 1.0) / (t + 2.0), dtype, requires_grad=True)
         for t in range(1, K + 1)])


@dataclass
class SolverState:
    x_prev: Tensor
    x_curr: Tensor
    z: Tensor          # latest proximal-step input (initialization line for k = 0)
    k: int = 0


def initialize(y: Tensor, model: deg.DegradationModel,
               ht_mode: str = "bilinear") -> SolverState:
    """x0 = Ht y and the first data-consistency point z1 = x0 + Ht(y - H x0)."""
    x0 = deg.apply_ht(y, model, ht_mode)
    z1 = x0 + deg.apply_ht(y - deg.apply_h(x0, model), model, ht_mode)
    return SolverState(x_prev=x0, x_curr=x0, z=z1, k=0)


def step(state: SolverState, y: Tensor, model: deg.DegradationModel,
         erd_weights: ErdWeights, solver_weights: SolverWeights,
         proj: ProjectionParams, fb_steps: int = 1,
         ht_mode: str = "bilinear") -> SolverState:
    """Advance one iteration: extrapolate, enforce data consistency, apply the prox."""
    if state.k >= solver_weights.K:
        raise StateError(f"step {state.k} out of range for K={solver_weights.K}")
    w_k = solver_weights.w[state.k]
    z = state.x_curr + mul_scalar(state.x_curr - state.x_prev, w_k)
    zt = z + deg.apply_ht(y - deg.apply_h(z, model), model, ht_mode)
    x_next = erd_forward(zt, erd_weights, proj, fb_steps)
    return SolverState(x_prev=state.x_curr, x_curr=x_next, z=zt, k=state.k + 1)


def run(y: Tensor, model: deg.DegradationModel, erd_weights: ErdWeights,
        solver_weights: SolverWeights, config: SolverConfig,
        proj: ProjectionParams) -> Tensor:
    """x_K after K steps of the shared-weight recurrence (K = 0: initialization only)."""
    state = initialize(y, model, config.ht_mode)
    if config.K == 0:
        return state.x_curr
    if config.K > solver_weights.K:
        raise InvalidSpecError(
            f"config K={config.K} exceeds the {solver_weights.K} extrapolation weights")
    for _ in range(config.K):
        state = step(state, y, model, erd_weights, solver_weights, proj,
                     config.fb_steps, config.ht_mode)
    return state.x_curr


# -- test oracles ----------------------------------------------------------------


def objective(x: Tensor, y: Tensor, model: deg.DegradationModel, lam: float,
              reg: Callable[[np.ndarray], float]) -> float:
    """J(x) = 1/2 ||y - H x||_2^2 + lam * R(x) for an explicit regularizer R."""
    if lam < 0:
        raise InvalidSpecError(f"lambda must be >= 0, got {lam}")
    r = y.data - deg.apply_h(x, model).data
    return 0.5 * float(np.sum(r.astype(np.float64) ** 2)) + lam * float(reg(x.data))


def majorizer(x: Tensor, x0: Tensor, y: Tensor, model: deg.DegradationModel,
              lam: float, alpha: float, reg: Callable[[np.ndarray], float],
              hth_norm: float | None = None) -> float:
    """Quadratic surrogate of the objective anchored at x0, constant included.

    Q(x; x0) = alpha/2 ||x - z||^2 + lam R(x) + J(x0) - alpha/2 ||z - x0||^2
    with z = x0 + (1/alpha) H^T (y - H x0) and the exact adjoint H^T, so that
    Q(x0; x0) = J(x0) identically and Q >= J whenever alpha dominates
    ||H^T H||_2 (positive-definiteness of alpha I - H^T H).
    """
    if lam < 0:
        raise InvalidSpecError(f"lambda must be >= 0, got {lam}")
    if hth_norm is None:
        size = (x.data.shape[2], x.data.shape[3])
        hth_norm = deg.spectral_norm_hth(model, iters=300, size=size, ht_mode="adjoint")
    if alpha <= hth_norm:
        raise InvalidSpecError(
            f"majorizer invalid: alpha={alpha} must exceed ||H^T H||~{hth_norm:.6f}")
    resid = y - deg.apply_h(x0, model)
    z = x0.data + deg.apply_ht(resid, model, mode="adjoint").data / alpha
    fidelity_x0 = 0.5 * float(np.sum(resid.data.astype(np.float64) ** 2))
    prox_term = 0.5 * alpha * float(np.sum((x.data - z).astype(np.float64) ** 2))
    const = fidelity_x0 - 0.5 * alpha * float(np.sum((z - x0.data).astype(np.float64) ** 2))
    return prox_term + lam * float(reg(x.data)) + const
