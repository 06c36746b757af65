"""
Gaussian mixture regression: the conditional mean E[v | x] of a joint mixture.
"""

from __future__ import annotations

from typing import Sequence, Union

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from ..utils.models import GmmModel
from .gmm import LOG_2PI


class GmrConstructionError(ValueError):
    """A component's marginal state covariance cannot be factorized."""

    pass


class GmrCache:
    """Precomputed per-component terms for fast GMR queries.

    For each component k it keeps the Cholesky factor of Sigma_x,k, the log
    normalizer including log(pi_k), and the gain A_k = Sigma_vx,k Sigma_x,k^-1.
    """

    def __init__(self, model: GmmModel):
        d = model.dim
        K = model.n_components
        self.dim = d
        self.n_components = K
        self._mu_x = np.array(model.mu_x, dtype=float)
        self._mu_v = np.array(model.mu_v, dtype=float)
        self._chol = np.empty((K, d, d))
        self._gain = np.empty((K, d, d))
        self._log_norm = np.empty(K)

        with np.errstate(divide="ignore"):
            log_priors = np.log(model.priors)
        for k in range(K):
            try:
                L = scipy.linalg.cholesky(model.sigma_x[k], lower=True)
            except np.linalg.LinAlgError as e:
                raise GmrConstructionError(
                    f"component {k}: marginal state covariance is not positive definite"
                ) from e
            self._chol[k] = L
            # Sigma_x A^T = Sigma_xv
            self._gain[k] = scipy.linalg.cho_solve((L, True), model.sigma_xv[k]).T
            self._log_norm[k] = log_priors[k] - np.sum(np.log(np.diag(L))) - 0.5 * d * LOG_2PI

        if not (np.all(np.isfinite(self._gain)) and np.all(np.isfinite(self._chol))):
            raise GmrConstructionError("non-finite regression gains")

    @classmethod
    def from_model(cls, model: GmmModel) -> "GmrCache":
        return cls(model)

    def log_weights_batch(self, X: np.ndarray) -> np.ndarray:
        """log gamma_k(x) for each row of X, shape (n, K)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        logp = np.empty((X.shape[0], self.n_components))
        for k in range(self.n_components):
            z = scipy.linalg.solve_triangular(self._chol[k], (X - self._mu_x[k]).T, lower=True)
            logp[:, k] = self._log_norm[k] - 0.5 * np.sum(z ** 2, axis=0)

        norm = logsumexp(logp, axis=1, keepdims=True)
        out = np.full(logp.shape, -np.log(self.n_components))
        finite = np.isfinite(norm[:, 0])
        # rows where every component underflows fall back to uniform weights
        out[finite] = logp[finite] - norm[finite]
        return out

    def weights_batch(self, X: np.ndarray) -> np.ndarray:
        return np.exp(self.log_weights_batch(X))

    def weights(self, x: np.ndarray) -> np.ndarray:
        """Normalized responsibilities gamma_k(x), shape (K,)."""
        return self.weights_batch(np.asarray(x, dtype=float)[None, :])[0]

    def estimate_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        gamma = self.weights_batch(X)
        diff = X[:, None, :] - self._mu_x[None, :, :]
        conditional = self._mu_v[None, :, :] + np.einsum("kij,nkj->nki", self._gain, diff)
        return np.einsum("nk,nki->ni", gamma, conditional)

    def estimate(self, x: np.ndarray) -> np.ndarray:
        """v_hat(x) = sum_k gamma_k(x) (mu_v,k + A_k (x - mu_x,k))."""
        return self.estimate_batch(np.asarray(x, dtype=float)[None, :])[0]

    def batch_estimate(self, xs: Union[np.ndarray, Sequence[np.ndarray]]) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        if xs.size == 0:
            return np.empty((0, self.dim))
        return self.estimate_batch(xs.reshape(-1, self.dim))
