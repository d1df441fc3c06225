"""Writer for the engine's RFT1 tensor file format.

Layout: magic ``RFT1``; little-endian u32 L, H, W; u32-length-prefixed JSON
metadata (image_id, layer_id, scale_tag); L*H*W little-endian float32 values,
channel-major. Files are written atomically (temp file + rename) so a crashed
batch never leaves a truncated tensor behind.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"RFT1"
_U32 = struct.Struct("<I")
_DIMS = struct.Struct("<III")


def write_tensor_file(data, image_id: str, layer_id: str, scale_tag: str, path) -> None:
    """Write one activation block as an RFT1 file.

    ``data`` must be (L, H, W); non-finite activations are rejected here so
    a bad forward pass fails loudly instead of poisoning the dataset.
    """
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ValueError(f"expected (L, H, W) activations, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"non-finite activation for image {image_id!r}")
    meta = json.dumps(
        {"image_id": image_id, "layer_id": layer_id, "scale_tag": scale_tag},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    l, h, w = arr.shape
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(_DIMS.pack(l, h, w))
        f.write(_U32.pack(len(meta)))
        f.write(meta)
        f.write(arr.astype("<f4", copy=False).tobytes())
    os.replace(tmp, path)
