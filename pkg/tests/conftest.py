import json

import numpy as np
import pytest

from rsir.tensor_store import FeatureTensor, write_tensor


def random_tensor(rng, l, h, w, image_id="img", layer_id="conv5", scale_tag="scale1"):
    data = rng.standard_normal((l, h, w)).astype(np.float32)
    return FeatureTensor(image_id, layer_id, scale_tag, data)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def write_dataset(root, tensors_by_image, dataset_id="toy", layer_id="conv5"):
    """Write tensors plus a manifest; tensors_by_image maps
    image_id -> (class_label, {scale_tag: (L,H,W) float array})."""
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for image_id, (label, tensors) in sorted(tensors_by_image.items()):
        tag_paths = {}
        for tag, data in tensors.items():
            t = FeatureTensor(image_id, layer_id, tag, np.asarray(data, np.float32))
            fname = f"{image_id}_{tag}.rft"
            write_tensor(t, root / fname)
            tag_paths[tag] = fname
        entries.append({"image_id": image_id, "class_label": label,
                        "tensors": tag_paths})
    manifest_path = root / "manifest.json"
    manifest_path.write_text(json.dumps(
        {"dataset_id": dataset_id, "entries": entries}, indent=2), "utf-8")
    return manifest_path
