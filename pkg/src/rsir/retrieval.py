"""Descriptor indices and exhaustive ranked retrieval.

The reference database is small enough (a few thousand images) that every
query is an exact scan; ranking ties break lexicographically on image_id so
runs reproduce across platforms.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .numeric import Metric, distances_to
from .tensor_store import DatasetManifest, json_bytes, read_framed, write_framed

INDEX_MAGIC = b"RIX1"


def spec_fingerprint(parts: dict) -> str:
    """Short stable digest of a run configuration."""
    return hashlib.sha256(json_bytes(parts)).hexdigest()[:16]


@dataclass(eq=False)
class DescriptorIndex:
    dataset_id: str
    fingerprint: str
    metric: Metric
    image_ids: list       # sorted
    vectors: np.ndarray   # (N, dim) float64

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.image_ids)


@dataclass(eq=False)
class RankedList:
    query_id: str
    metric: Metric
    items: list  # [(image_id, distance), ...] with non-decreasing distances


def build_index(manifest: DatasetManifest, descriptors, metric: Metric,
                fingerprint: str = "") -> DescriptorIndex:
    """Assemble a validated index from one descriptor per manifest image."""
    metric = Metric(metric)
    by_id = {}
    for d in descriptors:
        if d.image_id in by_id:
            raise DataError(f"duplicate descriptor for image {d.image_id!r}")
        by_id[d.image_id] = d
    manifest_ids = set(manifest.image_ids())
    missing = sorted(manifest_ids - set(by_id))
    if missing:
        raise DataError(f"missing descriptors for images: {missing}")
    extra = sorted(set(by_id) - manifest_ids)
    if extra:
        raise DataError(f"descriptors for unknown images: {extra}")

    ids = sorted(by_id)
    dims = {len(by_id[i].vector) for i in ids}
    if len(dims) != 1:
        raise DataError(f"descriptors have mixed dimensions: {sorted(dims)}")
    vectors = np.stack([np.asarray(by_id[i].vector, dtype=np.float64) for i in ids])
    if not np.isfinite(vectors).all():
        raise DataError("non-finite descriptor in index")
    if metric is Metric.CHI_SQUARE and np.any(vectors < 0):
        raise DataError(
            "chi-square ranking requires non-negative descriptor components "
            "(PCA-compressed descriptors are not eligible)"
        )
    return DescriptorIndex(manifest.dataset_id, fingerprint, metric, ids, vectors)


def query_rank(index: DescriptorIndex, q) -> RankedList:
    """Rank all references by distance to the query descriptor.

    The query's own image_id is excluded when it appears in the index; ties
    sort by image_id.
    """
    vec = np.asarray(q.vector, dtype=np.float64)
    if vec.shape != (index.dim,):
        raise DataError(f"dimension mismatch: query {vec.shape} vs index dim {index.dim}")
    dists = distances_to(index.metric, vec, index.vectors)
    ids = np.asarray(index.image_ids)
    keep = ids != q.image_id
    ids = ids[keep]
    dists = dists[keep]
    order = np.lexsort((ids, dists))
    return RankedList(
        query_id=q.image_id,
        metric=index.metric,
        items=[(str(ids[i]), float(dists[i])) for i in order],
    )


def save_index(index: DescriptorIndex, path) -> None:
    meta = {
        "dataset_id": index.dataset_id,
        "fingerprint": index.fingerprint,
        "metric": index.metric.value,
        "image_ids": list(index.image_ids),
        "dim": index.dim,
    }
    write_framed(path, INDEX_MAGIC, meta,
                 np.ascontiguousarray(index.vectors, dtype="<f8").tobytes())


def load_index(path) -> DescriptorIndex:
    meta, payload = read_framed(path, INDEX_MAGIC)
    n = len(meta["image_ids"])
    dim = int(meta["dim"])
    expected = n * dim * 8
    if len(payload) != expected:
        raise DataError(f"payload length mismatch in {path}")
    vectors = np.frombuffer(payload, dtype="<f8").reshape(n, dim).copy()
    return DescriptorIndex(meta["dataset_id"], meta["fingerprint"],
                           Metric(meta["metric"]), list(meta["image_ids"]), vectors)
