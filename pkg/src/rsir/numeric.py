"""Vector normalization, PCA, and the four ranking distance metrics.

Everything here is a pure function over float64 arrays; reductions
accumulate in float64 regardless of input dtype.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, DataError

NORM_EPS = 1e-12


class Metric(str, Enum):
    EUCLIDEAN = "euclidean"
    COSINE = "cosine"
    MANHATTAN = "manhattan"
    CHI_SQUARE = "chi2"


def l2_normalize(v) -> np.ndarray:
    """Scale v to unit Euclidean norm; vectors with norm <= 1e-12 pass through
    as zero vectors."""
    v = np.asarray(v, dtype=np.float64)
    if not np.isfinite(v).all():
        raise DataError("non-finite input to l2_normalize")
    n = np.sqrt(np.sum(v * v))
    if n <= NORM_EPS:
        return np.zeros_like(v)
    return v / n


@dataclass(eq=False)
class PcaModel:
    """Mean vector plus orthonormal projection basis.

    ``basis`` rows are principal directions ordered by descending eigenvalue,
    each flipped so its largest-magnitude component is positive (makes the
    fit fully deterministic). Whitening is off unless ``whiten`` is set.
    """

    mean: np.ndarray         # (d,)
    basis: np.ndarray        # (m, d)
    eigenvalues: np.ndarray  # (m,) non-increasing, >= 0
    whiten: bool = False

    @property
    def input_dim(self) -> int:
        return self.basis.shape[1]

    @property
    def target_dim(self) -> int:
        return self.basis.shape[0]

    def validate(self):
        gram = self.basis @ self.basis.T
        if not np.allclose(gram, np.eye(self.target_dim), atol=1e-6):
            raise DataError("PCA basis rows are not orthonormal")
        ev = self.eigenvalues
        if np.any(ev < -1e-9) or np.any(np.diff(ev) > 1e-12):
            raise DataError("PCA eigenvalues must be non-negative and non-increasing")


def fit_pca(X, m: int, seed=None) -> PcaModel:
    """Fit an m-component PCA via SVD of the centered data matrix.

    ``seed`` is accepted for trainer-interface symmetry; the SVD path is
    fully deterministic and never consumes it.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"expected 2-D data matrix, got shape {X.shape}")
    n, d = X.shape
    if not np.isfinite(X).all():
        raise DataError("non-finite value in PCA training data")
    if n < 2:
        raise DataError(f"need at least 2 samples to fit PCA, got {n}")
    limit = min(n - 1, d)
    if not 1 <= m <= limit:
        raise ConfigError(f"target dim m={m} out of range [1, min(n-1, d)={limit}]")

    mean = X.mean(axis=0)
    centered = X - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    tol = s[0] * max(n, d) * np.finfo(np.float64).eps if s.size else 0.0
    rank = int(np.sum(s > tol))
    if rank < m:
        raise DataError(f"data rank {rank} is below the requested {m} components")

    basis = vt[:m].copy()
    for row in basis:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1.0
    eigenvalues = np.maximum((s[:m] ** 2) / (n - 1), 0.0)
    return PcaModel(mean, basis, eigenvalues, whiten=False)


def apply_pca(model: PcaModel, v) -> np.ndarray:
    """Project ``v`` (a d-vector, or an n x d matrix row by row) onto the basis.

    Batch input is processed one row at a time so batch and single-vector
    application are bit-identical.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 2:
        return np.stack([apply_pca(model, row) for row in v])
    if v.shape != (model.input_dim,):
        raise DataError(
            f"dimension mismatch: PCA expects {model.input_dim}, got {v.shape}"
        )
    y = model.basis @ (v - model.mean)
    if model.whiten:
        y = y / np.sqrt(np.maximum(model.eigenvalues, NORM_EPS))
    return y


def distances_to(metric: Metric, q, refs) -> np.ndarray:
    """Distances from one query vector to each row of ``refs``.

    This is the single code path for both scalar and batch distance
    computation, so rankings cannot drift between the two.
    """
    q = np.asarray(q, dtype=np.float64)
    refs = np.asarray(refs, dtype=np.float64)
    if refs.ndim != 2 or q.ndim != 1 or refs.shape[1] != q.shape[0]:
        raise DataError(
            f"dimension mismatch: query {q.shape} vs references {refs.shape}"
        )
    metric = Metric(metric)

    if metric is Metric.EUCLIDEAN:
        diff = refs - q
        return np.sqrt(np.sum(diff * diff, axis=1))
    if metric is Metric.MANHATTAN:
        return np.sum(np.abs(refs - q), axis=1)
    if metric is Metric.COSINE:
        nq2 = np.sum(q * q)
        nr2 = np.sum(refs * refs, axis=1)
        out = np.empty(len(refs))
        q_zero = nq2 <= NORM_EPS * NORM_EPS
        r_zero = nr2 <= NORM_EPS * NORM_EPS
        both = r_zero & q_zero
        one = r_zero ^ q_zero
        ok = ~(r_zero | q_zero)
        out[both] = 0.0
        out[one] = 1.0
        if np.any(ok):
            dots = np.sum(refs[ok] * q, axis=1)
            # sqrt of the product keeps d(v, v) exactly 0 and stays symmetric
            out[ok] = np.maximum(1.0 - dots / np.sqrt(nr2[ok] * nq2), 0.0)
        return out
    # chi-square: 0.5 * sum (a-b)^2 / (a+b), terms with a+b == 0 skipped
    if np.any(q < 0) or np.any(refs < 0):
        raise DataError("chi-square distance requires non-negative components")
    diff = refs - q
    den = refs + q
    terms = np.divide(diff * diff, den, out=np.zeros_like(den), where=den > 0)
    return 0.5 * np.sum(terms, axis=1)


def distance(metric: Metric, a, b) -> float:
    """Distance between two vectors under the chosen metric."""
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 1:
        raise DataError(f"expected 1-D vector, got shape {b.shape}")
    return float(distances_to(metric, a, b[None, :])[0])
