"""Binary file formats and dataset manifests.

Three single-file formats, all little-endian with a 4-byte magic prefix:

* feature tensors  (``RFT1``): u32 dims L, H, W; length-prefixed UTF-8 JSON
  metadata (image_id, layer_id, scale_tag); L*H*W float32 payload stored
  channel-major (all of channel 0's HxW grid, then channel 1, ...).
* model archives   (``RMA1``): kind byte (codebook=1, gmm=2, pca=3);
  length-prefixed JSON metadata; float64 payload.
* framed files     (generic): magic + length-prefixed JSON + raw payload,
  used by descriptor files and indices elsewhere in the package.

All JSON is serialized with sorted keys and no whitespace so that writing
the same object twice yields identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

TENSOR_MAGIC = b"RFT1"
MODEL_MAGIC = b"RMA1"

_U32 = struct.Struct("<I")
_DIMS = struct.Struct("<III")

MODEL_KIND_BYTES = {"codebook": 1, "gmm": 2, "pca": 3}
_KIND_FROM_BYTE = {v: k for k, v in MODEL_KIND_BYTES.items()}


def json_bytes(obj) -> bytes:
    """Canonical JSON encoding (sorted keys, compact separators)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


@dataclass(eq=False)
class FeatureTensor:
    """One conv-layer activation block (or an FC vector with H = W = 1).

    ``data`` has shape (L, H, W) in float32; each channel's HxW grid is
    contiguous so pooling reads one feature map at a time.
    """

    image_id: str
    layer_id: str
    scale_tag: str
    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def validate(self):
        if self.data.ndim != 3:
            raise DataError(f"tensor data must be 3-D (L, H, W), got shape {self.data.shape}")
        if min(self.data.shape) < 1:
            raise DataError(f"tensor dims must be positive, got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise DataError(f"non-finite value in tensor for image {self.image_id!r}")


def write_tensor(t: FeatureTensor, path) -> None:
    """Write a feature tensor in the RFT1 format. Rejects non-finite data."""
    t.validate()
    meta = json_bytes(
        {"image_id": t.image_id, "layer_id": t.layer_id, "scale_tag": t.scale_tag}
    )
    l, h, w = t.data.shape
    with open(path, "wb") as f:
        f.write(TENSOR_MAGIC)
        f.write(_DIMS.pack(l, h, w))
        f.write(_U32.pack(len(meta)))
        f.write(meta)
        f.write(t.data.astype("<f4", copy=False).tobytes())


def read_tensor(path) -> FeatureTensor:
    """Read and validate an RFT1 file (inverse of write_tensor)."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != TENSOR_MAGIC:
        raise DataError(f"bad magic in {path}: expected RFT1")
    if len(raw) < 4 + _DIMS.size + _U32.size:
        raise DataError(f"truncated header in {path}")
    l, h, w = _DIMS.unpack_from(raw, 4)
    off = 4 + _DIMS.size
    (meta_len,) = _U32.unpack_from(raw, off)
    off += _U32.size
    if len(raw) < off + meta_len:
        raise DataError(f"truncated metadata in {path}")
    try:
        meta = json.loads(raw[off : off + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"corrupt metadata in {path}: {e}") from e
    off += meta_len
    expected = l * h * w * 4
    payload = raw[off:]
    if len(payload) < expected:
        raise DataError(
            f"truncated payload in {path}: header says {l}x{h}x{w} "
            f"({expected} bytes), found {len(payload)}"
        )
    if len(payload) > expected:
        raise DataError(f"payload length mismatch in {path}")
    data = np.frombuffer(payload, dtype="<f4").reshape(l, h, w)
    for key in ("image_id", "layer_id", "scale_tag"):
        if not isinstance(meta.get(key), str):
            raise DataError(f"metadata missing {key!r} in {path}")
    t = FeatureTensor(meta["image_id"], meta["layer_id"], meta["scale_tag"], data)
    t.validate()
    return t


@dataclass(eq=False)
class ManifestEntry:
    image_id: str
    class_label: str
    tensor_paths: dict  # scale_tag -> absolute Path


@dataclass(eq=False)
class DatasetManifest:
    """A validated dataset listing with entries sorted by image_id."""

    dataset_id: str
    entries: list
    class_of: dict = field(default_factory=dict)
    class_sizes: dict = field(default_factory=dict)

    def image_ids(self) -> list:
        return [e.image_id for e in self.entries]

    def entry(self, image_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.image_id == image_id:
                return e
        raise DataError(f"image {image_id!r} not in manifest {self.dataset_id!r}")


def load_manifest(path) -> DatasetManifest:
    """Load and validate a manifest JSON file.

    Relative tensor paths are resolved against the manifest's directory.
    Rejects duplicate image ids, missing tensor files, and ground truth too
    degenerate to evaluate (fewer than 2 classes, or any class with fewer
    than 2 images).
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read manifest {path}: {e}") from e
    if not isinstance(doc, dict) or "dataset_id" not in doc or "entries" not in doc:
        raise DataError(f"manifest {path} must have dataset_id and entries")
    base = path.parent
    entries = []
    seen = set()
    for rec in doc["entries"]:
        image_id = rec.get("image_id")
        label = rec.get("class_label")
        tensors = rec.get("tensors", {})
        if not image_id or not isinstance(image_id, str):
            raise DataError(f"manifest entry without image_id in {path}")
        if image_id in seen:
            raise DataError(f"duplicate image_id {image_id!r} in {path}")
        seen.add(image_id)
        if not label or not isinstance(label, str):
            raise DataError(f"empty class_label for image {image_id!r}")
        paths = {}
        for tag, p in tensors.items():
            resolved = Path(p)
            if not resolved.is_absolute():
                resolved = base / resolved
            if not resolved.exists():
                raise DataError(f"missing tensor file for {image_id!r}: {resolved}")
            paths[tag] = resolved
        entries.append(ManifestEntry(image_id, label, paths))
    if not entries:
        raise DataError(f"manifest {path} has no entries")
    entries.sort(key=lambda e: e.image_id)

    class_sizes = {}
    class_of = {}
    for e in entries:
        class_of[e.image_id] = e.class_label
        class_sizes[e.class_label] = class_sizes.get(e.class_label, 0) + 1
    if len(class_sizes) < 2:
        raise DataError(
            f"degenerate ground truth in {path}: need at least 2 classes, "
            f"got {len(class_sizes)}"
        )
    small = sorted(c for c, n in class_sizes.items() if n < 2)
    if small:
        raise DataError(
            f"degenerate ground truth in {path}: classes with fewer than "
            f"2 images: {small}"
        )
    return DatasetManifest(doc["dataset_id"], entries, class_of, class_sizes)


def write_framed(path, magic: bytes, meta: dict, payload: bytes = b"") -> None:
    """Write magic + length-prefixed canonical JSON + payload."""
    meta_b = json_bytes(meta)
    with open(path, "wb") as f:
        f.write(magic)
        f.write(_U32.pack(len(meta_b)))
        f.write(meta_b)
        f.write(payload)


def read_framed(path, magic: bytes):
    """Read a framed file, validating its magic. Returns (meta, payload)."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[: len(magic)] != magic:
        raise DataError(f"bad magic in {path}: expected {magic.decode('ascii')}")
    off = len(magic)
    if len(raw) < off + _U32.size:
        raise DataError(f"truncated header in {path}")
    (meta_len,) = _U32.unpack_from(raw, off)
    off += _U32.size
    if len(raw) < off + meta_len:
        raise DataError(f"truncated metadata in {path}")
    meta = json.loads(raw[off : off + meta_len].decode("utf-8"))
    return meta, raw[off + meta_len :]


def _model_arrays(model):
    """(kind, named float64 arrays, scalar metadata) for a trainable model."""
    # local imports keep numeric/clustering independent of this module
    from .clustering import Codebook, GmmModel
    from .numeric import PcaModel

    if isinstance(model, Codebook):
        return (
            "codebook",
            [("centroids", model.centroids)],
            {"descriptor_dim": model.dim, "k": model.k},
        )
    if isinstance(model, GmmModel):
        return (
            "gmm",
            [("weights", model.weights), ("means", model.means), ("variances", model.variances)],
            {"descriptor_dim": model.dim, "k": model.k},
        )
    if isinstance(model, PcaModel):
        return (
            "pca",
            [("mean", model.mean), ("basis", model.basis), ("eigenvalues", model.eigenvalues)],
            {"descriptor_dim": model.input_dim, "target_dim": model.target_dim,
             "whiten": model.whiten},
        )
    raise DataError(f"cannot archive model of type {type(model).__name__}")


def save_model(model, path, fingerprint: dict) -> None:
    """Persist a Codebook / GmmModel / PcaModel as an RMA1 archive.

    ``fingerprint`` records training provenance (dataset_id, layer_id, seed)
    and is checked before a model is reused on another dataset.
    """
    kind, arrays, extra = _model_arrays(model)
    meta = {
        "kind": kind,
        "fingerprint": fingerprint,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    meta.update(extra)
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    meta_b = json_bytes(meta)
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(bytes([MODEL_KIND_BYTES[kind]]))
        f.write(_U32.pack(len(meta_b)))
        f.write(meta_b)
        f.write(payload)


@dataclass(eq=False)
class ModelArchive:
    kind: str
    model: object
    fingerprint: dict


def load_model(path) -> ModelArchive:
    """Load an RMA1 archive back into its model object (bit-exact)."""
    from .clustering import Codebook, GmmModel
    from .numeric import PcaModel

    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MODEL_MAGIC:
        raise DataError(f"bad magic in {path}: expected RMA1")
    kind_byte = raw[4]
    if kind_byte not in _KIND_FROM_BYTE:
        raise DataError(f"unknown model kind byte {kind_byte} in {path}")
    off = 5
    (meta_len,) = _U32.unpack_from(raw, off)
    off += _U32.size
    meta = json.loads(raw[off : off + meta_len].decode("utf-8"))
    off += meta_len
    kind = _KIND_FROM_BYTE[kind_byte]
    if meta.get("kind") != kind:
        raise DataError(f"kind byte/metadata mismatch in {path}")

    arrays = {}
    for spec in meta["arrays"]:
        shape = tuple(spec["shape"])
        n = int(np.prod(shape)) if shape else 1
        nbytes = n * 8
        if len(raw) < off + nbytes:
            raise DataError(f"truncated payload in {path}")
        arrays[spec["name"]] = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape)
        off += nbytes
    if off != len(raw):
        raise DataError(f"payload length mismatch in {path}")

    if kind == "codebook":
        model = Codebook(arrays["centroids"].copy())
    elif kind == "gmm":
        model = GmmModel(arrays["weights"].copy(), arrays["means"].copy(),
                         arrays["variances"].copy())
    else:
        model = PcaModel(arrays["mean"].copy(), arrays["basis"].copy(),
                         arrays["eigenvalues"].copy(), whiten=bool(meta.get("whiten", False)))
    return ModelArchive(kind, model, meta.get("fingerprint", {}))
