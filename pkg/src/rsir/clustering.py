"""K-means codebooks and diagonal-covariance Gaussian mixtures.

Both trainers are deterministic given (data order, k, seed) and record their
per-iteration objective / log-likelihood so convergence can be audited.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

VARIANCE_FLOOR = 1e-4

# float budget for the chunked distance buffer in assignments
_CHUNK_BUDGET = 20_000_000


@dataclass(eq=False)
class Codebook:
    centroids: np.ndarray  # (k, dim) float64
    n_iters: int = field(default=0, repr=False)
    objective_history: list = field(default_factory=list, repr=False)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def validate(self):
        if not np.isfinite(self.centroids).all():
            raise DataError("non-finite centroid")
        for i in range(self.k):
            for j in range(i + 1, self.k):
                if np.array_equal(self.centroids[i], self.centroids[j]):
                    raise DataError(f"duplicate centroids {i} and {j}")


@dataclass(eq=False)
class GmmModel:
    weights: np.ndarray    # (k,) simplex
    means: np.ndarray      # (k, L)
    variances: np.ndarray  # (k, L), floored
    n_iters: int = field(default=0, repr=False)
    loglik_history: list = field(default_factory=list, repr=False)

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def validate(self):
        if not (np.isfinite(self.weights).all() and np.isfinite(self.means).all()
                and np.isfinite(self.variances).all()):
            raise DataError("non-finite GMM parameter")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise DataError("GMM weights must form a simplex")
        if np.any(self.variances < VARIANCE_FLOOR * (1 - 1e-12)):
            raise DataError(f"GMM variance below floor {VARIANCE_FLOOR}")


def _min_sq_dists(X, centroids):
    """Per-point (label, squared distance to nearest centroid).

    Uses explicit differences (no expanded-product trick) so results agree
    bit-for-bit with a per-point brute-force scan; chunked to bound memory.
    """
    n, d = X.shape
    k = len(centroids)
    labels = np.empty(n, dtype=np.int64)
    mind2 = np.empty(n, dtype=np.float64)
    chunk = max(1, _CHUNK_BUDGET // max(k * d, 1))
    for start in range(0, n, chunk):
        block = X[start : start + chunk]
        diff = block[:, None, :] - centroids[None, :, :]
        d2 = np.sum(diff * diff, axis=2)
        lab = np.argmin(d2, axis=1)  # ties -> lowest centroid index
        labels[start : start + chunk] = lab
        mind2[start : start + chunk] = d2[np.arange(len(block)), lab]
    return labels, mind2


def kmeans_assign(cb: Codebook, X) -> np.ndarray:
    """Index of the nearest centroid (Euclidean) for each row of X.

    Ties break toward the lowest centroid index.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != cb.dim:
        raise DataError(f"dimension mismatch: data {X.shape} vs codebook dim {cb.dim}")
    labels, _ = _min_sq_dists(X, cb.centroids)
    return labels


def _kmeans_pp_init(X, k, rng):
    """Seeded k-means++ (D^2 sampling)."""
    n = len(X)
    centroids = np.empty((k, X.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = X[first]
    d2 = np.sum((X - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))  # all points coincide with chosen centroids
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[j] = X[idx]
        d2 = np.minimum(d2, np.sum((X - centroids[j]) ** 2, axis=1))
    return centroids


def _reseed_empty(X, centroids, labels, mind2, empty):
    """Move each empty cluster's centroid to the worst-fit point.

    Successive empty clusters take successively farther points so two empties
    never land on the same point.
    """
    mind2 = mind2.copy()
    for j in empty:
        far = int(np.argmax(mind2))
        centroids[j] = X[far]
        mind2[far] = -np.inf
    return centroids


def kmeans_fit(X, k: int, seed, max_iters: int = 100, tol: float = 1e-6) -> Codebook:
    """Lloyd's algorithm from a seeded k-means++ start.

    Stops when the relative decrease of the within-cluster squared distance
    falls below ``tol`` or after ``max_iters`` assignments. Empty clusters
    are re-seeded to the point farthest from its assigned centroid.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"expected 2-D data matrix, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise DataError("non-finite value in k-means training data")
    if k < 1:
        raise ConfigError(f"k must be positive, got {k}")
    n, d = X.shape
    if n < k:
        raise DataError(f"need at least k={k} points, got {n}")

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(X, k, rng)

    history = []
    prev = None
    it = 0
    for it in range(1, max_iters + 1):
        labels, mind2 = _min_sq_dists(X, centroids)
        obj = float(mind2.sum())
        history.append(obj)
        if prev is not None and (prev <= 0.0 or (prev - obj) / prev < tol):
            break
        prev = obj

        sums = np.zeros((k, d), dtype=np.float64)
        np.add.at(sums, labels, X)
        counts = np.bincount(labels, minlength=k)
        nonzero = counts > 0
        centroids = centroids.copy()
        centroids[nonzero] = sums[nonzero] / counts[nonzero, None]
        empty = np.flatnonzero(~nonzero)
        if empty.size:
            centroids = _reseed_empty(X, centroids, labels, mind2, empty)

    return Codebook(centroids, n_iters=it, objective_history=history)


def _log_densities(X, weights, means, variances):
    """log(w_j) + log N(x_i; mu_j, diag sigma_j^2) as an (n, k) matrix."""
    n, d = X.shape
    k = len(weights)
    out = np.empty((n, k), dtype=np.float64)
    log_w = np.log(np.maximum(weights, 1e-300))
    for j in range(k):
        var = variances[j]
        diff = X - means[j]
        maha = np.sum(diff * diff / var, axis=1)
        out[:, j] = log_w[j] - 0.5 * (d * np.log(2 * np.pi) + np.sum(np.log(var)) + maha)
    return out


def _logsumexp_rows(M):
    mx = M.max(axis=1)
    return mx + np.log(np.sum(np.exp(M - mx[:, None]), axis=1))


def gmm_fit(X, k: int, seed, max_iters: int = 100, tol: float = 1e-5) -> GmmModel:
    """EM for a diagonal-covariance mixture, initialized from k-means.

    Initial weights are cluster fractions and initial variances the
    per-cluster per-dim sample variance; every variance is clamped to the
    1e-4 floor throughout. Stops when the mean log-likelihood improves by
    less than ``tol``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"expected 2-D data matrix, got shape {X.shape}")
    if k < 1:
        raise ConfigError(f"k must be positive, got {k}")
    n, d = X.shape
    if n < 2 * k:
        raise DataError(f"need at least 2k={2 * k} points to fit a GMM, got {n}")
    if np.all(X == X[0]):
        raise DataError("zero variance data: all training points identical")

    cb = kmeans_fit(X, k, seed)
    labels = kmeans_assign(cb, X)
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    weights = np.maximum(counts, 1e-10)
    weights = weights / weights.sum()
    means = cb.centroids.copy()
    variances = np.full((k, d), VARIANCE_FLOOR, dtype=np.float64)
    for j in range(k):
        members = X[labels == j]
        if len(members):
            variances[j] = np.maximum(members.var(axis=0), VARIANCE_FLOOR)

    history = []
    prev = None
    it = 0
    for it in range(1, max_iters + 1):
        log_joint = _log_densities(X, weights, means, variances)
        lse = _logsumexp_rows(log_joint)
        ll = float(lse.mean())
        history.append(ll)
        if prev is not None and ll - prev < tol:
            break
        prev = ll

        resp = np.exp(log_joint - lse[:, None])
        nk = np.maximum(resp.sum(axis=0), 1e-32)
        weights = nk / nk.sum()
        means = (resp.T @ X) / nk[:, None]
        for j in range(k):
            diff = X - means[j]
            variances[j] = np.maximum((resp[:, j] @ (diff * diff)) / nk[j], VARIANCE_FLOOR)

    return GmmModel(weights, means, variances, n_iters=it, loglik_history=history)


def gmm_posteriors(g: GmmModel, X) -> np.ndarray:
    """Responsibilities gamma(i, j), computed in log space; rows sum to 1."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != g.dim:
        raise DataError(f"dimension mismatch: data {X.shape} vs GMM dim {g.dim}")
    log_joint = _log_densities(X, g.weights, g.means, g.variances)
    return np.exp(log_joint - _logsumexp_rows(log_joint)[:, None])
