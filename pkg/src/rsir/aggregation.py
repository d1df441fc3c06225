"""Feature-tensor aggregation: pooling, encoding, multi-scale, multi-patch.

A feature tensor is read two ways: pooling treats it as L feature maps of
size HxW; encoders treat it as W*H local descriptors of dimension L. Before
either, the local descriptors can be L2-normalized (``pre_l2`` mode
"descriptor", the default), each channel map can be normalized instead
("channel"), or the raw activations used ("off").

Every method output then runs through the shared post pipeline: optional PCA
projection followed by a final L2 normalization.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .clustering import Codebook, GmmModel, gmm_posteriors, kmeans_assign
from .errors import ConfigError, DataError
from .numeric import NORM_EPS, PcaModel, apply_pca, l2_normalize
from .tensor_store import FeatureTensor, read_framed, write_framed

DESCRIPTOR_MAGIC = b"RGD1"

PRE_L2_MODES = ("descriptor", "channel", "off")


class Method(str, Enum):
    MAX_POOL = "maxpool"
    MEAN_POOL = "meanpool"
    HYBRID_POOL = "hybrid"
    SPOC = "spoc"
    CROW = "crow"
    BOW = "bow"
    IFK = "ifk"
    VLAD = "vlad"


POOLING_METHODS = (Method.MAX_POOL, Method.MEAN_POOL, Method.HYBRID_POOL,
                   Method.SPOC, Method.CROW)
ENCODING_METHODS = (Method.BOW, Method.IFK, Method.VLAD)
PATCH_POOLS = (Method.MAX_POOL, Method.MEAN_POOL, Method.HYBRID_POOL)


@dataclass(eq=False)
class AggregationSpec:
    """Method choice plus the models and normalization switches it needs."""

    method: Method
    model: object = None          # Codebook for bow/vlad, GmmModel for ifk
    pre_l2: str = "descriptor"
    pca: PcaModel = None
    final_l2: bool = True

    def validate(self):
        method = Method(self.method)
        if self.pre_l2 not in PRE_L2_MODES:
            raise ConfigError(f"pre_l2 must be one of {PRE_L2_MODES}, got {self.pre_l2!r}")
        if method in (Method.BOW, Method.VLAD):
            if not isinstance(self.model, Codebook):
                raise ConfigError(f"{method.value} requires codebook model")
        elif method is Method.IFK:
            if not isinstance(self.model, GmmModel):
                raise ConfigError("IFK requires gmm model")
        elif self.model is not None:
            raise ConfigError(f"pooling method {method.value} takes no model")


@dataclass(eq=False)
class GlobalDescriptor:
    """One fixed-length vector per image with aggregation provenance."""

    image_id: str
    vector: np.ndarray
    method: str
    layer_id: str
    scale_tags: tuple
    raw_dim: int
    final_dim: int

    def validate(self):
        if not np.isfinite(self.vector).all():
            raise DataError(f"non-finite descriptor for image {self.image_id!r}")
        if self.final_dim != len(self.vector):
            raise DataError("final_dim does not match descriptor length")


def _as_array(t) -> np.ndarray:
    if isinstance(t, FeatureTensor):
        t.validate()
        return np.asarray(t.data, dtype=np.float64)
    a = np.asarray(t, dtype=np.float64)
    if a.ndim != 3:
        raise DataError(f"expected (L, H, W) activations, got shape {a.shape}")
    return a


def _preprocess(arr: np.ndarray, mode: str) -> np.ndarray:
    """Apply the pre-aggregation L2 normalization mode."""
    if mode == "off":
        return arr
    l = arr.shape[0]
    flat = arr.reshape(l, -1)
    if mode == "descriptor":
        # each spatial position's L-vector to unit norm
        norms = np.sqrt(np.sum(flat * flat, axis=0))
        safe = np.where(norms <= NORM_EPS, 1.0, norms)
        return (flat / safe).reshape(arr.shape)
    if mode == "channel":
        # each channel's HxW map to unit norm
        norms = np.sqrt(np.sum(flat * flat, axis=1))
        safe = np.where(norms <= NORM_EPS, 1.0, norms)
        return (flat / safe[:, None]).reshape(arr.shape)
    raise ConfigError(f"unknown pre_l2 mode {mode!r}")


def local_descriptors(t, pre_l2: str = "off") -> np.ndarray:
    """The W*H local L-vectors of a tensor as a (W*H, L) matrix."""
    arr = _preprocess(_as_array(t), pre_l2)
    return arr.reshape(arr.shape[0], -1).T


def pool_max(t) -> np.ndarray:
    """Per-channel max over the spatial grid (L-vector)."""
    arr = _as_array(t)
    return arr.reshape(arr.shape[0], -1).max(axis=1)


def pool_mean(t) -> np.ndarray:
    """Per-channel mean over the spatial grid (L-vector)."""
    arr = _as_array(t)
    return arr.reshape(arr.shape[0], -1).mean(axis=1)


def pool_hybrid(t) -> np.ndarray:
    """Concatenation [max || mean] (2L-vector)."""
    arr = _as_array(t)
    return np.concatenate([pool_max(arr), pool_mean(arr)])


def _spoc_weights(h: int, w: int) -> np.ndarray:
    # grids narrower than 3 cells get uniform weights (sum pooling);
    # otherwise the center-to-boundary distance is >= 1 and sigma >= 1/3
    if w <= 2 or h <= 2:
        return np.ones((h, w), dtype=np.float64)
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    sigma = min(cx, cy, w - 1 - cx, h - 1 - cy) / 3.0
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    return np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma * sigma))


def pool_spoc(t) -> np.ndarray:
    """Sum pooling under a center-prior Gaussian spatial weight (L-vector).

    The Gaussian's sigma is one third of the distance from the grid center
    to its closest boundary.
    """
    arr = _as_array(t)
    weights = _spoc_weights(arr.shape[1], arr.shape[2])
    return np.sum(arr * weights[None, :, :], axis=(1, 2))


def pool_crow(t) -> np.ndarray:
    """Cross-dimensional weighted sum pooling (L-vector).

    Spatial weights are the square root of the L2-normalized per-position
    activation mass; channel weights follow log inverse sparsity. Negative
    activations (unexpected after ReLU) are clamped to zero.
    """
    arr = _as_array(t)
    if np.any(arr < 0):
        warnings.warn("negative activations clamped to 0 for CroW pooling")
        arr = np.maximum(arr, 0.0)
    l, h, w = arr.shape
    mass = arr.sum(axis=0)
    total_sq = np.sum(mass * mass)
    if total_sq <= 0.0:
        return np.zeros(l, dtype=np.float64)
    alpha = np.sqrt(mass / np.sqrt(total_sq))
    sparsity = np.count_nonzero(arr.reshape(l, -1) > 0, axis=1) / float(h * w)
    ratio = np.divide(sparsity.sum(), sparsity,
                      out=np.ones_like(sparsity), where=sparsity > 0)
    beta = np.where(sparsity > 0, np.log(ratio), 0.0)
    return beta * np.sum(arr * alpha[None, :, :], axis=(1, 2))


def encode_bow(t, cb: Codebook) -> np.ndarray:
    """Histogram of nearest-centroid assignments (k-vector summing to W*H)."""
    locals_ = local_descriptors(t)
    if locals_.shape[1] != cb.dim:
        raise DataError(f"dimension mismatch: tensor L={locals_.shape[1]} vs codebook dim {cb.dim}")
    labels = kmeans_assign(cb, locals_)
    return np.bincount(labels, minlength=cb.k).astype(np.float64)


def encode_vlad(t, cb: Codebook) -> np.ndarray:
    """Per-centroid accumulated residuals, blocks concatenated (L*k vector)."""
    locals_ = local_descriptors(t)
    if locals_.shape[1] != cb.dim:
        raise DataError(f"dimension mismatch: tensor L={locals_.shape[1]} vs codebook dim {cb.dim}")
    labels = kmeans_assign(cb, locals_)
    blocks = np.zeros((cb.k, cb.dim), dtype=np.float64)
    np.add.at(blocks, labels, locals_ - cb.centroids[labels])
    return blocks.reshape(-1)


def encode_ifk(t, g: GmmModel) -> np.ndarray:
    """Improved Fisher kernel encoding (2*L*k vector).

    Mean- and variance-gradient blocks of the mixture log-likelihood,
    followed by the signed square root and an intrinsic L2 normalization
    (the post pipeline's own L2 comes later).
    """
    locals_ = local_descriptors(t)
    if locals_.shape[1] != g.dim:
        raise DataError(f"dimension mismatch: tensor L={locals_.shape[1]} vs GMM dim {g.dim}")
    n = locals_.shape[0]
    resp = gmm_posteriors(g, locals_)
    sigma = np.sqrt(g.variances)
    g_mean = np.empty((g.k, g.dim), dtype=np.float64)
    g_var = np.empty((g.k, g.dim), dtype=np.float64)
    for j in range(g.k):
        z = (locals_ - g.means[j]) / sigma[j]
        g_mean[j] = (resp[:, j] @ z) / (n * np.sqrt(g.weights[j]))
        g_var[j] = (resp[:, j] @ (z * z - 1.0)) / (n * np.sqrt(2.0 * g.weights[j]))
    vec = np.concatenate([g_mean.reshape(-1), g_var.reshape(-1)])
    vec = np.sign(vec) * np.sqrt(np.abs(vec))
    return l2_normalize(vec)


_DISPATCH = {
    Method.MAX_POOL: pool_max,
    Method.MEAN_POOL: pool_mean,
    Method.HYBRID_POOL: pool_hybrid,
    Method.SPOC: pool_spoc,
    Method.CROW: pool_crow,
}


def _run_method(arr: np.ndarray, spec: AggregationSpec) -> np.ndarray:
    method = Method(spec.method)
    if method in _DISPATCH:
        return _DISPATCH[method](arr)
    if method is Method.BOW:
        return encode_bow(arr, spec.model)
    if method is Method.VLAD:
        return encode_vlad(arr, spec.model)
    return encode_ifk(arr, spec.model)


def _finalize(vec: np.ndarray, spec: AggregationSpec) -> np.ndarray:
    if spec.pca is not None:
        vec = apply_pca(spec.pca, vec)
    if spec.final_l2:
        vec = l2_normalize(vec)
    return vec


def multipatch_pool(patch_vectors, pool: Method) -> np.ndarray:
    """Componentwise max / mean / [max || mean] across exactly 20 FC vectors.

    Spatial-weighting pools are meaningless for patch sets and are rejected.
    """
    pool = Method(pool)
    if pool in (Method.SPOC, Method.CROW):
        raise ConfigError("spatial weighting based pooling not applicable to patch sets")
    if pool not in PATCH_POOLS:
        raise ConfigError(f"multipatch pooling supports max, mean, hybrid; got {pool.value}")
    vectors = [np.asarray(v, dtype=np.float64) for v in patch_vectors]
    if len(vectors) != 20:
        raise DataError(f"expected exactly 20 patch vectors, got {len(vectors)}")
    dims = {v.shape for v in vectors}
    if len(dims) != 1 or vectors[0].ndim != 1:
        raise DataError(f"patch vectors must share one dimension, got shapes {sorted(dims)}")
    stack = np.stack(vectors)
    if pool is Method.MAX_POOL:
        return stack.max(axis=0)
    if pool is Method.MEAN_POOL:
        return stack.mean(axis=0)
    return np.concatenate([stack.max(axis=0), stack.mean(axis=0)])


def aggregate(t_or_set, spec: AggregationSpec) -> GlobalDescriptor:
    """Turn one tensor (or a 20-patch tensor set) into a GlobalDescriptor.

    Dispatches to the spec's method, then applies the post pipeline
    (optional PCA, then final L2 when enabled).
    """
    spec.validate()
    if isinstance(t_or_set, FeatureTensor):
        t_or_set.validate()
        arr = _preprocess(np.asarray(t_or_set.data, dtype=np.float64), spec.pre_l2)
        raw = _run_method(arr, spec)
        vec = _finalize(raw, spec)
        return GlobalDescriptor(
            image_id=t_or_set.image_id,
            vector=vec,
            method=Method(spec.method).value,
            layer_id=t_or_set.layer_id,
            scale_tags=(t_or_set.scale_tag,),
            raw_dim=len(raw),
            final_dim=len(vec),
        )

    tensors = list(t_or_set)
    if not tensors:
        raise DataError("empty tensor set")
    ids = {t.image_id for t in tensors}
    if len(ids) != 1:
        raise DataError(f"mixed image_ids in patch set: {sorted(ids)}")
    vectors = []
    for t in sorted(tensors, key=lambda t: t.scale_tag):
        t.validate()
        if t.height != 1 or t.width != 1:
            raise DataError(
                f"multipatch aggregation expects FC tensors (H=W=1), got "
                f"{t.height}x{t.width} for {t.image_id!r}/{t.scale_tag!r}"
            )
        arr = _preprocess(np.asarray(t.data, dtype=np.float64), spec.pre_l2)
        vectors.append(arr.reshape(-1))
    raw = multipatch_pool(vectors, spec.method)
    vec = _finalize(raw, spec)
    return GlobalDescriptor(
        image_id=tensors[0].image_id,
        vector=vec,
        method=Method(spec.method).value,
        layer_id=tensors[0].layer_id,
        scale_tags=tuple(sorted(t.scale_tag for t in tensors)),
        raw_dim=len(raw),
        final_dim=len(vec),
    )


def concat_multiscale(descriptors, pca: PcaModel) -> GlobalDescriptor:
    """Concatenate one image's per-scale descriptors, project, normalize.

    Blocks are ordered by scale tag (scale1, scale2, scale3). Inputs should
    be raw method outputs (no PCA, no final L2) so that the single-scale
    case reduces exactly to ``aggregate`` with the same PCA model.
    """
    descriptors = list(descriptors)
    if not descriptors:
        raise DataError("no descriptors to concatenate")
    ids = {d.image_id for d in descriptors}
    if len(ids) != 1:
        raise DataError(f"mixed image_ids: {sorted(ids)}")
    methods = {d.method for d in descriptors}
    if len(methods) != 1:
        raise DataError(f"mixed methods: {sorted(methods)}")
    ordered = sorted(descriptors, key=lambda d: d.scale_tags)
    combined = np.concatenate([d.vector for d in ordered])
    vec = combined
    if pca is not None:
        if pca.input_dim != len(combined):
            raise DataError(
                f"dimension mismatch: concatenated length {len(combined)} vs "
                f"PCA input dim {pca.input_dim}"
            )
        vec = apply_pca(pca, vec)
    vec = l2_normalize(vec)
    tags = tuple(tag for d in ordered for tag in d.scale_tags)
    return GlobalDescriptor(
        image_id=descriptors[0].image_id,
        vector=vec,
        method=descriptors[0].method,
        layer_id=descriptors[0].layer_id,
        scale_tags=tags,
        raw_dim=len(combined),
        final_dim=len(vec),
    )


def save_descriptor(d: GlobalDescriptor, path) -> None:
    d.validate()
    meta = {
        "image_id": d.image_id,
        "method": d.method,
        "layer_id": d.layer_id,
        "scale_tags": list(d.scale_tags),
        "raw_dim": d.raw_dim,
        "final_dim": d.final_dim,
    }
    write_framed(path, DESCRIPTOR_MAGIC, meta,
                 np.ascontiguousarray(d.vector, dtype="<f8").tobytes())


def load_descriptor(path) -> GlobalDescriptor:
    meta, payload = read_framed(path, DESCRIPTOR_MAGIC)
    vector = np.frombuffer(payload, dtype="<f8").copy()
    d = GlobalDescriptor(
        image_id=meta["image_id"],
        vector=vector,
        method=meta["method"],
        layer_id=meta["layer_id"],
        scale_tags=tuple(meta["scale_tags"]),
        raw_dim=int(meta["raw_dim"]),
        final_dim=int(meta["final_dim"]),
    )
    d.validate()
    return d
