"""
Weighted sum of asymmetric quadratic functions (WSAQF) used as the control
Lyapunov function:

    V(x) = x^T P_0 x + sum_l beta_l(x) (x^T P_l (x - mu_l))^2

with beta_l(x) = 1 when x^T P_l (x - mu_l) >= 0 and 0 otherwise.
"""

from __future__ import annotations

import numpy as np

from ..utils.models import ClfParams


def init_identity(dim: int, n_asymmetric: int, eps: float = 1e-8) -> ClfParams:
    """Identity factors and zero centers: the starting point of the optimizer."""
    if dim < 1 or n_asymmetric < 0:
        raise ValueError(f"invalid energy function size: d={dim}, L={n_asymmetric}")
    factors = np.tile(np.eye(dim), (n_asymmetric + 1, 1, 1))
    return ClfParams(factors=factors, centers=np.zeros((n_asymmetric, dim)), eps=eps)


def _asymmetric_terms(P_l: np.ndarray, center: np.ndarray, X: np.ndarray):
    offset = X - center
    sigma = np.einsum("ni,ij,nj->n", X, P_l, offset)
    return sigma, offset


def value_batch(params: ClfParams, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    P = params.P
    V = np.einsum("ni,ij,nj->n", X, P[0], X)
    for l in range(params.n_asymmetric):
        sigma, _ = _asymmetric_terms(P[l + 1], params.centers[l], X)
        V = V + np.where(sigma >= 0, sigma * sigma, 0.0)
    return V


def gradient_batch(params: ClfParams, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    P = params.P
    grad = X @ (P[0] + P[0].T)
    for l in range(params.n_asymmetric):
        P_l = P[l + 1]
        sigma, offset = _asymmetric_terms(P_l, params.centers[l], X)
        active = np.where(sigma >= 0, sigma, 0.0)
        # d sigma / dx = P_l (x - mu_l) + P_l^T x
        grad = grad + 2.0 * active[:, None] * (offset @ P_l.T + X @ P_l)
    return grad


def value(params: ClfParams, x: np.ndarray) -> float:
    return float(value_batch(params, np.asarray(x, dtype=float)[None, :])[0])


def gradient(params: ClfParams, x: np.ndarray) -> np.ndarray:
    """Analytic gradient of V; x^T grad V(x) > 0 for every x != 0."""
    return gradient_batch(params, np.asarray(x, dtype=float)[None, :])[0]
