"""
Gaussian mixture over joint (x, v) data: K-means++ initialization and EM.

All densities are evaluated in log space through Cholesky factors.
"""

from __future__ import annotations

import warnings
from typing import Optional, Tuple

import numpy as np
import scipy.linalg
from scipy.cluster.vq import kmeans2
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from ..utils.logger import get_logger
from ..utils.models import EmReport, GmmModel

COV_FLOOR_REL = 1e-6
MAX_LLOYD_ITERS = 100
MIN_RESPONSIBILITY_MASS = 1e-12
LOG_2PI = np.log(2.0 * np.pi)


def covariance_floor(data: np.ndarray) -> float:
    """Eigenvalue floor for component covariances: 1e-6 * trace(cov) / D."""
    data = np.asarray(data, dtype=float)
    spread = np.trace(np.atleast_2d(np.cov(data, rowvar=False, bias=True))) if data.shape[0] > 1 else 0.0
    return max(COV_FLOOR_REL * spread / data.shape[1], 1e-12)


def floor_covariance(cov: np.ndarray, eps: float) -> np.ndarray:
    """Symmetrize and clip eigenvalues below eps."""
    sym = 0.5 * (cov + cov.T)
    w, Q = np.linalg.eigh(sym)
    if w.min() >= eps:
        return sym
    w = np.maximum(w, eps)
    clipped = (Q * w) @ Q.T
    return 0.5 * (clipped + clipped.T)


def gaussian_log_density(data: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """log N(data_i; mean, cov) for every row of data."""
    D = mean.shape[0]
    L = scipy.linalg.cholesky(cov, lower=True)
    # (x - mu)^T cov^-1 (x - mu) = |L^-1 (x - mu)|^2
    z = scipy.linalg.solve_triangular(L, (data - mean).T, lower=True)
    return -0.5 * np.sum(z ** 2, axis=0) - np.sum(np.log(np.diag(L))) - 0.5 * D * LOG_2PI


def _weighted_log_densities(model: GmmModel, data: np.ndarray) -> np.ndarray:
    """log(pi_k) + log N(data_i; mu_k, Sigma_k), shape (n, K)."""
    logp = np.empty((data.shape[0], model.n_components))
    with np.errstate(divide="ignore"):
        log_priors = np.log(model.priors)
    for k in range(model.n_components):
        logp[:, k] = log_priors[k] + gaussian_log_density(data, model.means[k], model.covs[k])
    return logp


def _responsibilities(logp: np.ndarray) -> np.ndarray:
    norm = logsumexp(logp, axis=1, keepdims=True)
    finite = np.isfinite(norm[:, 0])
    resp = np.full(logp.shape, 1.0 / logp.shape[1])
    resp[finite] = np.exp(logp[finite] - norm[finite])
    return resp


def _fill_empty_clusters(data: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Move the point worst served by its centroid into every empty cluster."""
    K = centroids.shape[0]
    labels = labels.copy()
    own = cdist(data, centroids, "sqeuclidean")[np.arange(data.shape[0]), labels]
    for j in range(K):
        counts = np.bincount(labels, minlength=K)
        if counts[j] > 0:
            continue
        # only take points whose cluster keeps at least one member
        candidates = np.where(counts[labels] > 1, own, -1.0)
        far = int(np.argmax(candidates))
        labels[far] = j
        centroids[j] = data[far]
        own[far] = 0.0
    return labels


def kmeans_init(data: np.ndarray, K: int, seed: int) -> GmmModel:
    """K-means++ seeding and Lloyd iterations turned into an initial mixture."""
    data = np.asarray(data, dtype=float)
    n, D = data.shape
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if n < K:
        raise ValueError(f"need at least K={K} datapoints, got {n}")
    if not np.all(np.isfinite(data)):
        raise ValueError("data contains non-finite values")

    with warnings.catch_warnings(), np.errstate(divide="ignore", invalid="ignore"):
        # duplicated points can leave a cluster empty; handled below
        warnings.simplefilter("ignore", UserWarning)
        centroids, labels = kmeans2(data, K, iter=MAX_LLOYD_ITERS, minit="++", missing="warn", seed=seed)
    centroids = np.array(centroids, dtype=float)
    labels = _fill_empty_clusters(data, centroids, np.asarray(labels, dtype=int))
    get_logger().debug(f"K-means finished: cluster sizes {np.bincount(labels, minlength=K).tolist()}")

    eps = covariance_floor(data)
    priors = np.empty(K)
    covs = np.empty((K, D, D))
    for j in range(K):
        members = data[labels == j]
        priors[j] = members.shape[0] / n
        centroids[j] = members.mean(axis=0)
        diff = members - centroids[j]
        covs[j] = diff.T @ diff / members.shape[0] + eps * np.eye(D)

    return GmmModel(priors=priors, means=centroids, covs=covs, dim=D // 2)


def e_step(model: GmmModel, data: np.ndarray) -> np.ndarray:
    """Posterior responsibilities gamma_k(x, v), shape (n, K); rows sum to 1."""
    return _responsibilities(_weighted_log_densities(model, np.asarray(data, dtype=float)))


def m_step(
    responsibilities: np.ndarray,
    data: np.ndarray,
    previous: Optional[GmmModel] = None,
    eps: Optional[float] = None,
) -> GmmModel:
    """Closed-form weighted updates of priors, means and covariances.

    Components with total responsibility below 1e-12 keep their previous
    parameters (or the data moments when there is no previous model).
    """
    data = np.asarray(data, dtype=float)
    resp = np.asarray(responsibilities, dtype=float)
    n, D = data.shape
    K = resp.shape[1]
    if eps is None:
        eps = covariance_floor(data)

    mass = resp.sum(axis=0)
    priors = mass / n
    means = np.empty((K, D))
    covs = np.empty((K, D, D))
    for k in range(K):
        if mass[k] < MIN_RESPONSIBILITY_MASS:
            get_logger().warning(f"Mixture component {k} has vanishing responsibility; frozen")
            if previous is not None:
                priors[k] = previous.priors[k]
                means[k] = previous.means[k]
                covs[k] = previous.covs[k]
            else:
                priors[k] = 1.0 / K
                means[k] = data.mean(axis=0)
                covs[k] = floor_covariance(np.atleast_2d(np.cov(data, rowvar=False, bias=True)), eps)
            continue
        means[k] = resp[:, k] @ data / mass[k]
        diff = data - means[k]
        cov = (resp[:, k, None] * diff).T @ diff / mass[k]
        covs[k] = floor_covariance(cov, eps)

    priors = priors / priors.sum()
    dim = previous.dim if previous is not None else D // 2
    return GmmModel(priors=priors, means=means, covs=covs, dim=dim)


def log_likelihood(model: GmmModel, data: np.ndarray) -> float:
    """Sum over datapoints of log sum_k pi_k N(x, v; mu_k, Sigma_k)."""
    logp = _weighted_log_densities(model, np.asarray(data, dtype=float))
    return float(np.sum(logsumexp(logp, axis=1)))


def fit_em(
    data: np.ndarray,
    K: int,
    seed: int,
    tol: float = 1e-6,
    max_iter: int = 500,
) -> Tuple[GmmModel, EmReport]:
    """K-means initialization followed by EM until the relative log-likelihood change drops below tol."""
    logger = get_logger()
    data = np.asarray(data, dtype=float)
    n, D = data.shape
    if n < K * (D + 1):
        logger.warning(f"Only {n} datapoints for K={K} components in dimension {D}; estimates may be poor")

    model = kmeans_init(data, K, seed)
    eps = covariance_floor(data)
    logp = _weighted_log_densities(model, data)
    ll = float(np.sum(logsumexp(logp, axis=1)))
    report = EmReport(loglik_history=[ll])

    for iteration in range(1, max_iter + 1):
        resp = _responsibilities(logp)
        frozen = np.flatnonzero(resp.sum(axis=0) < MIN_RESPONSIBILITY_MASS)
        for k in frozen:
            if int(k) not in report.frozen_components:
                report.frozen_components.append(int(k))

        model = m_step(resp, data, previous=model, eps=eps)
        logp = _weighted_log_densities(model, data)
        new_ll = float(np.sum(logsumexp(logp, axis=1)))
        report.loglik_history.append(new_ll)
        report.iterations = iteration
        logger.debug(f"EM iteration {iteration}: log-likelihood {new_ll:.6f}")

        if abs(new_ll - ll) <= tol * max(abs(ll), np.finfo(float).tiny):
            report.converged = True
            break
        ll = new_ll

    logger.info(
        f"EM finished: K={K}, iterations={report.iterations}, converged={report.converged}, "
        f"log-likelihood={report.loglik_history[-1]:.4f}"
    )
    return model, report
