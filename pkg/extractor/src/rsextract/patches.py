"""Deterministic 20-patch generation: 5 crops x 4 reflections.

Patch tags are ``patch00`` .. ``patch19`` with index = crop * 4 + flip:

* crop order: center, top-left, top-right, bottom-left, bottom-right
* flip order: none, horizontal, vertical, horizontal+vertical

Images smaller than the crop size are first upscaled so the crop fits.
"""

from __future__ import annotations

from PIL import Image

CROP_ORDER = ("center", "top-left", "top-right", "bottom-left", "bottom-right")
FLIP_ORDER = ("none", "horizontal", "vertical", "both")
PATCH_TAGS = tuple(f"patch{i:02d}" for i in range(20))


def _crop_boxes(width: int, height: int, size: int):
    cx = (width - size) // 2
    cy = (height - size) // 2
    return [
        (cx, cy),                          # center
        (0, 0),                            # top-left
        (width - size, 0),                 # top-right
        (0, height - size),                # bottom-left
        (width - size, height - size),     # bottom-right
    ]


def _flip(img: Image.Image, mode: str) -> Image.Image:
    if mode == "none":
        return img
    if mode == "horizontal":
        return img.transpose(Image.FLIP_LEFT_RIGHT)
    if mode == "vertical":
        return img.transpose(Image.FLIP_TOP_BOTTOM)
    return img.transpose(Image.FLIP_LEFT_RIGHT).transpose(Image.FLIP_TOP_BOTTOM)


def twenty_patches(img: Image.Image, size: int):
    """The 20 sub-patches of ``img`` at the model's input size, in tag order."""
    if img.width < size or img.height < size:
        scale = size / min(img.width, img.height)
        img = img.resize((max(size, round(img.width * scale)),
                          max(size, round(img.height * scale))),
                         Image.BILINEAR)
    patches = []
    for x, y in _crop_boxes(img.width, img.height, size):
        crop = img.crop((x, y, x + size, y + size))
        for mode in FLIP_ORDER:
            patches.append(_flip(crop, mode))
    return patches
