"""
Threshold- and stagnation-aware wrapper around scipy's BFGS.

The objective may return +inf for infeasible parameters; scipy's Wolfe line
search then falls back to bisection, so such points are never accepted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy.optimize import minimize

from ..utils.logger import get_logger

IMPROVEMENT_RTOL = 1e-12
GRADIENT_TOL = 1e-12


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    nit: int = 0
    history: List[float] = field(default_factory=list)
    reached_threshold: bool = False
    message: str = ""


class _Monitor:
    """scipy callback recording J and halting at the threshold or on stagnation."""

    def __init__(
        self,
        result: OptimizeResult,
        threshold: float,
        stagnation_iters: int,
        callback: Optional[Callable[[int, float], None]],
    ):
        self.result = result
        self.threshold = threshold
        self.stagnation_iters = stagnation_iters
        self.callback = callback
        self.since_improvement = 0

    def __call__(self, intermediate_result) -> None:
        result = self.result
        f = float(intermediate_result.fun)
        result.nit += 1
        result.history.append(f)
        if self.callback is not None:
            self.callback(result.nit, f)

        if f < result.fun - IMPROVEMENT_RTOL * max(1.0, abs(result.fun)):
            self.since_improvement = 0
        else:
            self.since_improvement += 1
        if f < result.fun:
            result.x = np.array(intermediate_result.x, dtype=float)
            result.fun = f

        if f < self.threshold:
            result.reached_threshold = True
            result.message = "threshold reached"
            raise StopIteration
        if self.since_improvement >= self.stagnation_iters:
            result.message = "stagnated"
            raise StopIteration


def minimize_bfgs(
    fun: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    threshold: float = -np.inf,
    max_iter: int = 100,
    stagnation_iters: int = 20,
    c1: float = 1e-4,
    callback: Optional[Callable[[int, float], None]] = None,
) -> OptimizeResult:
    """Minimize fun until it drops below threshold or the budget runs out.

    Args:
        fun: Objective; may return +inf for infeasible points
        grad: Gradient of fun
        x0: Starting point
        threshold: Stop as soon as fun(x) < threshold
        max_iter: Maximum number of BFGS iterations
        stagnation_iters: Stop after this many iterations without improvement
        c1: Armijo sufficient-decrease constant of the line search
        callback: Called as callback(iteration, f) after each iteration

    Returns:
        OptimizeResult holding the best point seen
    """
    x = np.array(x0, dtype=float)
    f = float(fun(x))
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the starting point")

    result = OptimizeResult(x=x.copy(), fun=f, history=[f])
    if f < threshold:
        result.reached_threshold = True
        result.message = "threshold reached at the starting point"
        return result

    monitor = _Monitor(result, threshold, stagnation_iters, callback)
    with np.errstate(invalid="ignore", over="ignore"):
        scipy_result = minimize(
            fun,
            x,
            jac=grad,
            method="BFGS",
            callback=monitor,
            options={"maxiter": max_iter, "gtol": GRADIENT_TOL, "c1": c1},
        )

    if not result.message:
        result.message = str(scipy_result.message)
        get_logger().debug(f"BFGS stopped after {result.nit} iterations: {result.message}")
    return result
