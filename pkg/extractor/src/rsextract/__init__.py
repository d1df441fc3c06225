"""Pretrained-CNN feature extraction to the retrieval engine's file formats."""

from .extract import ExtractionJob, extract
from .patches import PATCH_TAGS, twenty_patches
from .tensor_io import write_tensor_file
from .zoo import load_model, resolve_layer

__version__ = "0.1.0"
