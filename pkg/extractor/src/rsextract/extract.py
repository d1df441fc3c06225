"""Run a CNN over an image tree and emit RFT1 tensors plus a manifest.

The image tree is one subdirectory per class label::

    images/forest/a.jpg  ->  image_id "forest_a", class_label "forest"

Three modes:

* ``scales``  - conv layers; the image is resized to each requested square
  size and the layer's (L, H, W) feature map is written per scale
  (tags ``scale1``, ``scale2``, ... in the order given).
* ``patches`` - FC layers; the 20 deterministic sub-patches are batched
  through the network (tags ``patch00`` .. ``patch19``).
* ``full``    - FC layers; the whole image warped to the input size
  (tag ``full``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import json
import numpy as np
import torch
from PIL import Image

from .patches import PATCH_TAGS, twenty_patches
from .tensor_io import write_tensor_file
from .zoo import load_model, resolve_layer

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff"}

# ImageNet statistics; harmless for randomly initialized weights
_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


@dataclass
class ExtractionJob:
    image_root: Path
    model: str                      # zoo name or model file path
    layer: str
    out_dir: Path
    dataset_id: str
    mode: str = "scales"            # scales | patches | full
    scales: list = field(default_factory=list)
    weights: str = "pretrained"

    def validate(self):
        if self.mode not in ("scales", "patches", "full"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "scales" and not self.scales:
            raise ValueError("scales mode needs at least one scale size")
        if self.mode != "scales" and self.scales:
            raise ValueError(f"{self.mode} mode takes no scale sizes")


def list_images(root) -> list:
    """(image_id, class_label, path) triples, sorted by image_id."""
    root = Path(root)
    out = []
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for img in sorted(class_dir.iterdir()):
            if img.suffix.lower() in IMAGE_SUFFIXES:
                out.append((f"{class_dir.name}_{img.stem}", class_dir.name, img))
    if not out:
        raise ValueError(f"no images under {root}")
    return sorted(out, key=lambda r: r[0])


def _to_batch(images) -> torch.Tensor:
    arrays = []
    for img in images:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
        arr = (arr - _MEAN) / _STD
        arrays.append(arr.transpose(2, 0, 1))
    return torch.from_numpy(np.stack(arrays))


class _Capture:
    """Forward hook holding the layer's most recent output."""

    def __init__(self, module):
        self.value = None
        self.handle = module.register_forward_hook(self._hook)

    def _hook(self, module, inputs, output):
        self.value = output.detach()

    def remove(self):
        self.handle.remove()


def _check_layer_kind(output: torch.Tensor, mode: str, layer: str):
    spatial = output.dim() == 4
    if mode == "scales" and not spatial:
        raise ValueError(f"scales mode requires a conv layer; {layer!r} is not spatial")
    if mode in ("patches", "full") and spatial and output.shape[-1] != 1:
        raise ValueError(f"{mode} mode requires an FC layer; {layer!r} is spatial")


def _as_lhw(one: torch.Tensor) -> np.ndarray:
    """One sample's activations as (L, H, W); FC vectors become (D, 1, 1)."""
    arr = one.cpu().numpy()
    if arr.ndim == 1:
        return arr[:, None, None]
    if arr.ndim == 3:
        return arr
    raise ValueError(f"unexpected activation shape {arr.shape}")


def extract(job: ExtractionJob) -> Path:
    """Run the job; returns the path of the manifest it wrote."""
    job.validate()
    model, input_size, aliases = load_model(str(job.model), job.weights)
    module = resolve_layer(model, job.layer, aliases)
    capture = _Capture(module)
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    checked = False
    with torch.no_grad():
        for image_id, label, path in list_images(job.image_root):
            try:
                img = Image.open(path)
                img.load()
            except OSError as e:
                raise ValueError(f"undecodable image {path}: {e}") from e

            tensors = {}
            if job.mode == "scales":
                for i, size in enumerate(job.scales, start=1):
                    tag = f"scale{i}"
                    batch = _to_batch([img.resize((size, size), Image.BILINEAR)])
                    model(batch)
                    if not checked:
                        _check_layer_kind(capture.value, job.mode, job.layer)
                        checked = True
                    tensors[tag] = _as_lhw(capture.value[0])
            elif job.mode == "patches":
                batch = _to_batch(twenty_patches(img, input_size))
                model(batch)
                if not checked:
                    _check_layer_kind(capture.value, job.mode, job.layer)
                    checked = True
                for tag, one in zip(PATCH_TAGS, capture.value):
                    tensors[tag] = _as_lhw(one)
            else:  # full
                batch = _to_batch([img.resize((input_size, input_size), Image.BILINEAR)])
                model(batch)
                if not checked:
                    _check_layer_kind(capture.value, job.mode, job.layer)
                    checked = True
                tensors["full"] = _as_lhw(capture.value[0])

            rel_paths = {}
            for tag, data in tensors.items():
                fname = f"{image_id}_{tag}.rft"
                write_tensor_file(data, image_id, job.layer, tag, out_dir / fname)
                rel_paths[tag] = fname
            entries.append({"image_id": image_id, "class_label": label,
                            "tensors": rel_paths})

    capture.remove()
    manifest = {"dataset_id": job.dataset_id, "entries": entries}
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True), "utf-8")
    return manifest_path
