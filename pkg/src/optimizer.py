"""Preconditioned Nesterov iterations with penalty and smoothing schedules."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from src.wirelength import SmoothingParams

_H_FLOOR = 1e-300


class DivergenceError(ArithmeticError):
    """Raised when the objective gradient stops being finite."""


def _h_min(divisor: np.ndarray, ratio: float) -> float:
    positive = divisor[divisor > 0]
    if len(positive) == 0:
        return 1.0
    return max(ratio * float(np.median(positive)), _H_FLOOR)


def _apply(gradient: np.ndarray, divisor: np.ndarray) -> np.ndarray:
    gradient = np.asarray(gradient, dtype=float)
    if gradient.ndim == 2:
        divisor = divisor[:, None]
    return gradient / divisor


def precondition_3d(
    gradient: np.ndarray,
    volume: np.ndarray,
    lam: float,
    h_min: Optional[float] = None,
    h_min_ratio: float = 1e-4,
) -> np.ndarray:
    """Scale each object's gradient by 1 / max(lambda * V_i, H_min)."""
    base = lam * np.asarray(volume, dtype=float)
    floor = _h_min(base, h_min_ratio) if h_min is None else h_min
    return _apply(gradient, np.maximum(base, floor))


def precondition_2d(
    gradient: np.ndarray,
    degree: np.ndarray,
    area: np.ndarray,
    lam: float,
    h_min: Optional[float] = None,
    h_min_ratio: float = 1e-4,
) -> np.ndarray:
    """Scale each object's gradient by 1 / max(|N_i| + lambda * A_i, H_min)."""
    base = np.asarray(degree, dtype=float) + lam * np.asarray(area, dtype=float)
    floor = _h_min(base, h_min_ratio) if h_min is None else h_min
    return _apply(gradient, np.maximum(base, floor))


@dataclass(frozen=True)
class OptimizerState:
    """Nesterov iterate: major solution v, reference solution u and its gradient.

    Arrays hold the optimized coordinates only, shape (objects, active axes).
    """

    v: np.ndarray
    u: np.ndarray
    grad: np.ndarray
    alpha: float
    a: float = 1.0
    lam: float = 1.0
    gamma: Optional[SmoothingParams] = None
    iteration: int = 0
    tau: float = 1.0
    u_prev: Optional[np.ndarray] = None
    grad_prev: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise ValueError(f"steplength must be positive, got {self.alpha}")
        if not self.lam > 0:
            raise ValueError(f"penalty must be positive, got {self.lam}")

    @classmethod
    def start(cls, v0: np.ndarray, grad0: np.ndarray, alpha0: float, **kwargs) -> "OptimizerState":
        v0 = np.asarray(v0, dtype=float)
        return cls(v=v0.copy(), u=v0.copy(), grad=np.asarray(grad0, dtype=float), alpha=alpha0, **kwargs)


def next_nesterov_parameter(a: float) -> float:
    return (1.0 + math.sqrt(4.0 * a * a + 1.0)) / 2.0


def initial_steplength(gradient: np.ndarray, bin_width: float) -> float:
    """Steplength whose first move displaces the farthest-moving object by one bin."""
    peak = float(np.max(np.abs(gradient))) if np.size(gradient) else 0.0
    if not math.isfinite(peak) or peak <= 0:
        return bin_width
    return bin_width / peak


def estimate_steplength(
    u_prev: np.ndarray,
    u: np.ndarray,
    grad_prev: np.ndarray,
    grad: np.ndarray,
    alpha_prev: float,
) -> float:
    """Inverse local Lipschitz constant ||du|| / ||dg||; keeps alpha_prev when undefined."""
    dg = float(np.linalg.norm(np.asarray(grad) - np.asarray(grad_prev)))
    du = float(np.linalg.norm(np.asarray(u) - np.asarray(u_prev)))
    if dg <= 0 or du <= 0 or not math.isfinite(dg) or not math.isfinite(du):
        return alpha_prev
    return du / dg


def nesterov_iterate(
    state: OptimizerState,
    gradient_fn: Callable[[np.ndarray], np.ndarray],
    project: Callable[[np.ndarray], np.ndarray] = lambda x: x,
    max_backtracks: int = 5,
    accept_ratio: float = 0.95,
) -> OptimizerState:
    """One accelerated step from the reference solution with Lipschitz backtracking."""
    g = state.grad
    if not np.all(np.isfinite(g)):
        raise DivergenceError(f"non-finite gradient at iteration {state.iteration}")
    a_next = next_nesterov_parameter(state.a)
    momentum = (state.a - 1.0) / a_next
    alpha = state.alpha
    for attempt in range(max_backtracks + 1):
        v_new = project(state.u - alpha * g)
        u_new = project(v_new + momentum * (v_new - state.v))
        g_new = gradient_fn(u_new)
        if not np.all(np.isfinite(g_new)):
            raise DivergenceError(f"non-finite gradient at iteration {state.iteration + 1}")
        alpha_new = estimate_steplength(state.u, u_new, g, g_new, alpha)
        if alpha_new >= accept_ratio * alpha or attempt == max_backtracks:
            break
        alpha /= 2.0
    return replace(
        state,
        v=v_new,
        u=u_new,
        u_prev=state.u,
        grad=g_new,
        grad_prev=g,
        alpha=alpha_new,
        a=a_next,
        iteration=state.iteration + 1,
    )


def initial_lambda(wl_gradient: np.ndarray, density_gradient: np.ndarray) -> float:
    """Penalty that balances the L1 norms of the wirelength and density gradients."""
    num = float(np.abs(wl_gradient).sum())
    den = float(np.abs(density_gradient).sum())
    if num <= 0 or den <= 0 or not math.isfinite(num / den):
        return 1.0
    return num / den


def lambda_schedule(
    lam: float,
    delta_hpwl: float,
    ref: float,
    mu_min: float = 0.75,
    mu_max: float = 1.1,
) -> float:
    """Grow the penalty by mu = 1.1^(1 - dHPWL/ref), clamped to [mu_min, mu_max]."""
    if ref <= 0:
        return lam * mu_max
    exponent = 1.0 - delta_hpwl / ref
    # keep the power finite before clamping
    exponent = min(max(exponent, -60.0), 60.0)
    mu = min(max(1.1**exponent, mu_min), mu_max)
    return lam * mu


def gamma_schedule(
    tau: float,
    bin_dims: Sequence[float],
    tier_depth: float,
    k: float = 2.0,
    b: float = 0.0,
) -> SmoothingParams:
    """gamma = base * 10^(k*tau + b): one base unit at tau=0, 100 at tau=1 by default."""
    factor = 10.0 ** (k * min(max(tau, 0.0), 1.0) + b)
    return SmoothingParams(
        gamma_x=bin_dims[0] * factor,
        gamma_y=bin_dims[1] * factor,
        gamma_z=tier_depth * factor,
    )
