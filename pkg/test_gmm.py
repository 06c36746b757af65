#!/usr/bin/env python3
"""
Tests for the joint (x, v) Gaussian mixture: initialization, EM steps and fitting
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.core.gmm import (
    _fill_empty_clusters,
    covariance_floor,
    e_step,
    fit_em,
    floor_covariance,
    kmeans_init,
    log_likelihood,
    m_step,
)
from src.utils.models import GmmModel


def _blobs(seed=0, n=100):
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, 0.1, size=(n, 2))
    b = rng.normal(10.0, 0.1, size=(n, 2))
    return np.vstack([a, b])


def _two_far_components():
    return GmmModel(
        priors=np.array([0.5, 0.5]),
        means=np.array([[-10.0, 0.0], [10.0, 0.0]]),
        covs=np.stack([np.eye(2), np.eye(2)]),
        dim=1,
    )


def test_kmeans_single_cluster():
    """K=1 reduces to the sample moments plus the floor"""
    print("Testing kmeans_init with K=1...")
    data = np.random.default_rng(1).normal(size=(50, 4))
    model = kmeans_init(data, 1, seed=0)
    eps = covariance_floor(data)
    assert model.priors[0] == pytest.approx(1.0)
    np.testing.assert_allclose(model.means[0], data.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(model.covs[0], np.cov(data, rowvar=False, bias=True) + eps * np.eye(4), atol=1e-12)
    assert model.dim == 2
    print("✓ single-cluster reduction passed")


def test_kmeans_separated_blobs():
    """Two far blobs are found within 0.2 of their centers"""
    print("Testing kmeans_init on separated blobs...")
    model = kmeans_init(_blobs(), 2, seed=3)
    centers = sorted(model.means.tolist())
    np.testing.assert_allclose(centers[0], [0.0, 0.0], atol=0.2)
    np.testing.assert_allclose(centers[1], [10.0, 10.0], atol=0.2)
    np.testing.assert_allclose(model.priors, [0.5, 0.5])
    print("✓ separated blobs passed")


def test_kmeans_deterministic():
    """Same data and seed give the same mixture"""
    data = _blobs(seed=2)
    first = kmeans_init(data, 3, seed=11)
    second = kmeans_init(data, 3, seed=11)
    assert np.array_equal(first.means, second.means)
    assert np.array_equal(first.covs, second.covs)
    assert np.array_equal(first.priors, second.priors)


def test_kmeans_rejects_bad_input():
    """Too few points, K < 1 and NaN are errors"""
    data = np.zeros((3, 2))
    with pytest.raises(ValueError):
        kmeans_init(data, 4, seed=0)
    with pytest.raises(ValueError):
        kmeans_init(data, 0, seed=0)
    data[1, 1] = np.nan
    with pytest.raises(ValueError):
        kmeans_init(data, 1, seed=0)


def test_kmeans_duplicate_points_keeps_k_clusters():
    """Identical points never leave an empty cluster"""
    data = np.vstack([np.zeros((6, 2)), np.ones((2, 2))])
    model = kmeans_init(data, 3, seed=0)
    assert model.n_components == 3
    assert np.all(model.priors > 0)
    assert model.priors.sum() == pytest.approx(1.0)


def test_fill_empty_clusters_takes_farthest_point():
    """An empty cluster receives the point farthest from its centroid, never a singleton"""
    data = np.array([[0.0], [1.0], [3.0], [10.0]])
    centroids = np.array([[1.0], [10.0], [99.0]])
    labels = np.array([0, 0, 0, 1])
    filled = _fill_empty_clusters(data, centroids, labels)
    np.testing.assert_array_equal(filled, [0, 0, 2, 1])
    np.testing.assert_array_equal(centroids[2], [3.0])
    np.testing.assert_array_equal(labels, [0, 0, 0, 1])
    assert np.all(np.bincount(filled, minlength=3) > 0)


def test_e_step():
    """Responsibilities follow the component densities"""
    print("Testing e_step...")
    data = np.random.default_rng(0).normal(size=(20, 2))
    single = kmeans_init(data, 1, seed=0)
    np.testing.assert_array_equal(e_step(single, data), np.ones((20, 1)))

    model = _two_far_components()
    resp = e_step(model, np.array([[-10.0, 0.0], [0.0, 0.0]]))
    assert resp[0, 0] > 0.999
    np.testing.assert_allclose(resp[1], [0.5, 0.5])
    np.testing.assert_allclose(resp.sum(axis=1), 1.0)
    print("✓ e_step passed")


def test_e_step_far_point_stays_normalized():
    """A point far from every component still gets a proper posterior"""
    resp = e_step(_two_far_components(), np.array([[1e6, 1e6]]))
    assert np.all(np.isfinite(resp))
    assert resp.sum() == pytest.approx(1.0)


def test_m_step_unweighted():
    """All-ones responsibilities reproduce the sample moments"""
    data = np.random.default_rng(2).normal(size=(40, 2))
    model = m_step(np.ones((40, 1)), data)
    np.testing.assert_allclose(model.means[0], data.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(model.covs[0], np.cov(data, rowvar=False, bias=True), atol=1e-12)
    assert model.priors[0] == pytest.approx(1.0)


def test_m_step_hard_assignments():
    """0/1 responsibilities equal per-cluster statistics"""
    print("Testing m_step with hard assignments...")
    rng = np.random.default_rng(5)
    data = rng.normal(size=(10, 2))
    data[5:] += 4.0
    resp = np.zeros((10, 2))
    resp[:5, 0] = 1.0
    resp[5:, 1] = 1.0
    model = m_step(resp, data)
    for k, rows in enumerate([slice(0, 5), slice(5, 10)]):
        cluster = data[rows]
        np.testing.assert_allclose(model.means[k], cluster.mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(model.covs[k], np.cov(cluster, rowvar=False, bias=True), atol=1e-10)
    np.testing.assert_allclose(model.priors, [0.5, 0.5])
    print("✓ hard assignments passed")


def test_m_step_duplicated_data():
    """Duplicating every point leaves the update unchanged"""
    rng = np.random.default_rng(6)
    data = rng.normal(size=(30, 2))
    resp = rng.dirichlet([1.0, 1.0], size=30)
    once = m_step(resp, data)
    twice = m_step(np.vstack([resp, resp]), np.vstack([data, data]))
    np.testing.assert_allclose(once.means, twice.means, atol=1e-12)
    np.testing.assert_allclose(once.covs, twice.covs, atol=1e-12)
    np.testing.assert_allclose(once.priors, twice.priors, atol=1e-12)


def test_m_step_freezes_empty_component():
    """A component without responsibility keeps its previous parameters"""
    data = np.random.default_rng(7).normal(size=(20, 2))
    previous = _two_far_components()
    resp = np.zeros((20, 2))
    resp[:, 0] = 1.0
    model = m_step(resp, data, previous=previous)
    np.testing.assert_array_equal(model.means[1], previous.means[1])
    np.testing.assert_array_equal(model.covs[1], previous.covs[1])
    assert model.priors.sum() == pytest.approx(1.0)


def test_floor_covariance():
    """Eigenvalues are clipped at the floor and symmetry restored"""
    cov = np.array([[1.0, 1.0], [1.0, 1.0]])
    floored = floor_covariance(cov, 1e-3)
    assert np.linalg.eigvalsh(floored).min() >= 1e-3 - 1e-12
    np.testing.assert_allclose(floored, floored.T)
    well = np.diag([2.0, 3.0])
    np.testing.assert_array_equal(floor_covariance(well, 1e-3), well)


def test_log_likelihood_values():
    """Unit Gaussian at its mean, an outlier, and component order"""
    print("Testing log_likelihood...")
    unit = GmmModel(priors=np.array([1.0]), means=np.zeros((1, 2)), covs=np.eye(2)[None], dim=1)
    assert log_likelihood(unit, np.zeros((1, 2))) == pytest.approx(np.log(1.0 / (2.0 * np.pi)))
    assert log_likelihood(unit, np.zeros((1, 2))) == pytest.approx(-1.8379, abs=1e-4)

    data = np.random.default_rng(8).normal(size=(10, 2))
    base = log_likelihood(unit, data)
    assert log_likelihood(unit, np.vstack([data, [[50.0, 50.0]]])) < base

    model = _two_far_components()
    swapped = GmmModel(
        priors=model.priors[::-1].copy(),
        means=model.means[::-1].copy(),
        covs=model.covs[::-1].copy(),
        dim=1,
    )
    assert log_likelihood(model, data) == pytest.approx(log_likelihood(swapped, data), abs=1e-12)
    print("✓ log_likelihood passed")


def test_fit_em_recovers_mixture():
    """Means of a known two-component mixture are recovered"""
    print("Testing fit_em on a known mixture...")
    rng = np.random.default_rng(42)
    labels = rng.integers(0, 2, size=2000)
    centers = np.array([[5.0, 5.0], [-5.0, -5.0]])
    data = centers[labels] + rng.normal(size=(2000, 2))
    model, report = fit_em(data, 2, seed=0)
    recovered = sorted(model.means.tolist())
    np.testing.assert_allclose(recovered[0], [-5.0, -5.0], atol=0.3)
    np.testing.assert_allclose(recovered[1], [5.0, 5.0], atol=0.3)
    assert report.converged
    history = np.array(report.loglik_history)
    assert np.all(np.diff(history) >= -1e-9 * np.maximum(1.0, np.abs(history[:-1])))
    print("✓ fit_em passed")


def test_fit_em_deterministic():
    """Same data, K and seed give the same mixture"""
    data = _blobs(seed=9)
    first, _ = fit_em(data, 2, seed=4)
    second, _ = fit_em(data, 2, seed=4)
    assert np.array_equal(first.means, second.means)
    assert np.array_equal(first.covs, second.covs)


def test_fit_em_iteration_cap():
    """max_iter bounds the number of EM iterations"""
    data = _blobs(seed=1)
    _, report = fit_em(data, 3, seed=0, tol=0.0, max_iter=3)
    assert report.iterations == 3
    assert not report.converged
    assert len(report.loglik_history) == 4


def run_all_tests():
    """Run all mixture tests"""
    print("Running mixture tests...\n")
    return pytest.main([__file__, "-v"])


if __name__ == "__main__":
    sys.exit(run_all_tests())
