import itertools

import numpy as np
import pytest

from rsir.clustering import (
    VARIANCE_FLOOR,
    Codebook,
    GmmModel,
    _reseed_empty,
    gmm_fit,
    gmm_posteriors,
    kmeans_assign,
    kmeans_fit,
)
from rsir.errors import ConfigError, DataError


def brute_force_assign(X, centroids):
    """Independent per-point nearest-centroid scan."""
    labels = []
    for x in X:
        d2 = [np.sum((x - c) ** 2) for c in centroids]
        labels.append(int(np.argmin(d2)))
    return np.array(labels)


def best_two_partition_objective(X):
    """Exact k=2 objective by enumerating every 2-partition."""
    n = len(X)
    best = np.inf
    for bits in range(1, 2 ** (n - 1)):  # point 0 always in part A
        mask = np.array([(bits >> i) & 1 for i in range(n)], dtype=bool)
        if mask.all() or not mask.any():
            continue
        obj = 0.0
        for part in (X[mask], X[~mask]):
            c = part.mean(axis=0)
            obj += np.sum((part - c) ** 2)
        best = min(best, obj)
    return best


class TestKMeans:
    def test_separated_duplicates_exact(self):
        a = np.array([1.0, 2.0])
        b = np.array([9.0, -3.0])
        X = np.vstack([np.tile(a, (10, 1)), np.tile(b, (10, 1))])
        cb = kmeans_fit(X, 2, seed=0)
        rows = {tuple(r) for r in cb.centroids}
        assert rows == {tuple(a), tuple(b)}
        assert cb.objective_history[-1] == 0.0

    def test_n_equals_k(self, rng):
        X = rng.standard_normal((5, 3))
        cb = kmeans_fit(X, 5, seed=1)
        assert {tuple(r) for r in cb.centroids} == {tuple(r) for r in X}
        assert cb.objective_history[-1] == 0.0

    def test_two_blob_objective_matches_enumeration(self, rng):
        blob1 = rng.standard_normal((6, 2)) * 0.3 + np.array([0.0, 0.0])
        blob2 = rng.standard_normal((6, 2)) * 0.3 + np.array([8.0, 8.0])
        X = np.vstack([blob1, blob2])
        cb = kmeans_fit(X, 2, seed=3)
        assert abs(cb.objective_history[-1] - best_two_partition_objective(X)) < 1e-9

    def test_objective_non_increasing(self, rng):
        for seed in range(20):
            X = rng.standard_normal((60, 4))
            cb = kmeans_fit(X, 5, seed=seed)
            hist = cb.objective_history
            assert all(hist[i + 1] <= hist[i] * (1 + 1e-12) for i in range(len(hist) - 1))

    def test_deterministic_given_seed(self, rng):
        X = rng.standard_normal((50, 3))
        a = kmeans_fit(X, 4, seed=11)
        b = kmeans_fit(X, 4, seed=11)
        assert np.array_equal(a.centroids, b.centroids)
        assert a.objective_history == b.objective_history

    def test_errors(self, rng):
        X = rng.standard_normal((3, 2))
        with pytest.raises(DataError, match="at least k"):
            kmeans_fit(X, 4, seed=0)
        with pytest.raises(ConfigError, match="positive"):
            kmeans_fit(X, 0, seed=0)

    def test_reseed_moves_empty_to_farthest_point(self):
        X = np.array([[0.0], [1.0], [50.0]])
        centroids = np.array([[0.5], [-100.0]])
        labels, mind2 = np.array([0, 0, 0]), np.array([0.25, 0.25, 2450.25])
        out = _reseed_empty(X, centroids.copy(), labels, mind2, [1])
        assert out[1, 0] == 50.0


class TestAssign:
    def test_centroids_map_to_themselves(self, rng):
        cb = Codebook(rng.standard_normal((6, 4)))
        assert np.array_equal(kmeans_assign(cb, cb.centroids), np.arange(6))

    def test_tie_breaks_to_lowest_index(self):
        cb = Codebook(np.array([[10.0], [0.0], [20.0], [2.0]]))
        # [1.0] is exactly equidistant from centroids 1 and 3
        assert kmeans_assign(cb, np.array([[1.0]]))[0] == 1

    def test_matches_brute_force(self, rng):
        X = rng.standard_normal((500, 6))
        cb = Codebook(rng.standard_normal((9, 6)))
        assert np.array_equal(kmeans_assign(cb, X), brute_force_assign(X, cb.centroids))

    def test_dimension_mismatch(self, rng):
        cb = Codebook(rng.standard_normal((3, 4)))
        with pytest.raises(DataError, match="dimension mismatch"):
            kmeans_assign(cb, rng.standard_normal((5, 3)))


class TestGmm:
    def test_k1_closed_form(self, rng):
        X = rng.standard_normal((40, 3)) * 2.0 + 1.0
        g = gmm_fit(X, 1, seed=0)
        assert np.allclose(g.means[0], X.mean(axis=0), atol=1e-12)
        assert np.allclose(g.variances[0],
                           np.maximum(X.var(axis=0), VARIANCE_FLOOR), atol=1e-12)
        assert g.weights[0] == 1.0

    def test_two_blob_recovery(self, rng):
        n1, n2, sd = 300, 200, 0.5
        mu1, mu2 = np.array([0.0, 0.0]), np.array([6.0, -6.0])
        X = np.vstack([
            rng.standard_normal((n1, 2)) * sd + mu1,
            rng.standard_normal((n2, 2)) * sd + mu2,
        ])
        g = gmm_fit(X, 2, seed=5)
        order = np.argsort(g.means[:, 0])
        for j, (mu, n) in zip(order, [(mu1, n1), (mu2, n2)]):
            assert np.all(np.abs(g.means[j] - mu) < 3 * sd / np.sqrt(n) + 0.05)
        weights = g.weights[order]
        assert abs(weights[0] - n1 / (n1 + n2)) < 0.05

    def test_loglik_non_decreasing(self, rng):
        for seed in range(20):
            X = rng.standard_normal((80, 3)) * (1 + seed % 3)
            g = gmm_fit(X, 3, seed=seed)
            hist = g.loglik_history
            assert all(hist[i + 1] >= hist[i] - 1e-8 for i in range(len(hist) - 1))

    def test_variance_floor_on_constant_dim(self, rng):
        X = np.column_stack([rng.standard_normal(30), np.full(30, 2.0)])
        g = gmm_fit(X, 1, seed=0)
        assert g.variances[0, 1] == VARIANCE_FLOOR

    def test_deterministic_given_seed(self, rng):
        X = rng.standard_normal((60, 4))
        a = gmm_fit(X, 2, seed=9)
        b = gmm_fit(X, 2, seed=9)
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.means, b.means)
        assert np.array_equal(a.variances, b.variances)

    def test_errors(self, rng):
        with pytest.raises(DataError, match="2k"):
            gmm_fit(rng.standard_normal((5, 2)), 3, seed=0)
        with pytest.raises(DataError, match="zero variance data"):
            gmm_fit(np.ones((10, 2)), 2, seed=0)

    def test_validate_invariants(self, rng):
        g = gmm_fit(rng.standard_normal((50, 3)), 2, seed=0)
        g.validate()


class TestPosteriors:
    def test_k1_all_ones(self, rng):
        g = GmmModel(np.array([1.0]), rng.standard_normal((1, 4)),
                     np.full((1, 4), 0.5))
        resp = gmm_posteriors(g, rng.standard_normal((10, 4)))
        assert np.array_equal(resp, np.ones((10, 1)))

    def test_point_at_far_component_mean(self):
        g = GmmModel(np.array([0.5, 0.5]),
                     np.array([[0.0, 0.0], [30.0, 30.0]]),
                     np.full((2, 2), 1.0))
        resp = gmm_posteriors(g, np.array([[0.0, 0.0]]))
        assert resp[0, 0] > 0.999

    def test_rows_sum_to_one(self, rng):
        g = gmm_fit(rng.standard_normal((60, 3)), 3, seed=1)
        resp = gmm_posteriors(g, rng.standard_normal((40, 3)))
        assert np.all(np.abs(resp.sum(axis=1) - 1.0) < 1e-9)

    def test_dimension_mismatch(self, rng):
        g = gmm_fit(rng.standard_normal((20, 3)), 1, seed=0)
        with pytest.raises(DataError, match="dimension mismatch"):
            gmm_posteriors(g, rng.standard_normal((5, 4)))
