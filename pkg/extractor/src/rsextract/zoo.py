"""Model zoo and layer resolution.

The zoo maps the five classic retrieval architectures to their publicly
downloadable torchvision equivalents. VGG-M has no torchvision counterpart;
vgg13 is the closest medium-depth stand-in. Exact weight parity with the
original Caffe-era models is not promised.

A user model file (an nn.Module saved with ``torch.save``, e.g. the output
of the fine-tune script) can be passed instead of a zoo name; layers are
then addressed by raw module name. TorchScript files are not supported:
loaded ScriptModules cannot register the forward hooks used to capture
intermediate activations.
"""

from __future__ import annotations

from pathlib import Path

import torch
from torchvision import models

# zoo name -> (torchvision builder, default weights enum name, input size, layer aliases)
ZOO = {
    "caffenet": ("alexnet", "AlexNet_Weights", 224, {
        "conv1": "features.0", "conv2": "features.3", "conv3": "features.6",
        "conv4": "features.8", "conv5": "features.10",
        "fc1": "classifier.1", "fc2": "classifier.4",
        "fc6": "classifier.1", "fc7": "classifier.4",
    }),
    "vgg_m": ("vgg13", "VGG13_Weights", 224, {
        "conv5": "features.22",
        "fc1": "classifier.0", "fc2": "classifier.3",
        "fc6": "classifier.0", "fc7": "classifier.3",
    }),
    "vgg_vd16": ("vgg16", "VGG16_Weights", 224, {
        "conv5_1": "features.24", "conv5_2": "features.26", "conv5_3": "features.28",
        "fc1": "classifier.0", "fc2": "classifier.3",
        "fc6": "classifier.0", "fc7": "classifier.3",
    }),
    "vgg_vd19": ("vgg19", "VGG19_Weights", 224, {
        "conv5_1": "features.28", "conv5_2": "features.30",
        "conv5_3": "features.32", "conv5_4": "features.34",
        "fc1": "classifier.0", "fc2": "classifier.3",
        "fc6": "classifier.0", "fc7": "classifier.3",
    }),
    "googlenet": ("googlenet", "GoogLeNet_Weights", 224, {
        "inception4d": "inception4d", "inception4e": "inception4e",
        "inception5a": "inception5a", "inception5b": "inception5b",
        "avg_layer": "avgpool", "fc1": "fc", "fc": "fc",
    }),
}


class UnknownLayerError(ValueError):
    pass


def load_model(identifier: str, weights: str = "pretrained"):
    """Load a zoo model or a user model file.

    Returns (model in eval mode, input_size, alias map). ``weights`` is
    "pretrained" or "none" (random init, useful offline and in tests).
    """
    if identifier in ZOO:
        builder_name, weights_enum, input_size, aliases = ZOO[identifier]
        builder = getattr(models, builder_name)
        if weights == "none":
            model = builder(weights=None)
        elif weights == "pretrained":
            model = builder(weights=getattr(models, weights_enum).DEFAULT)
        else:
            raise ValueError(f"weights must be 'pretrained' or 'none', got {weights!r}")
        model.eval()
        return model, input_size, aliases

    path = Path(identifier)
    if not path.exists():
        raise ValueError(
            f"unknown model {identifier!r}: not a zoo name "
            f"({', '.join(sorted(ZOO))}) or a file"
        )
    model = torch.load(str(path), map_location="cpu", weights_only=False)
    if not hasattr(model, "named_modules"):
        raise ValueError(f"{path} is not a saved nn.Module")
    model.eval()
    size = getattr(model, "input_size", 224)
    return model, int(size), {}


def resolve_layer(model, layer: str, aliases: dict):
    """Map a layer selector (alias or raw module name) to the module."""
    name = aliases.get(layer, layer)
    modules = dict(model.named_modules())
    if name not in modules:
        raise UnknownLayerError(
            f"unknown layer {layer!r}; aliases: {sorted(aliases)}; "
            f"module names: {sorted(m for m in modules if m)[:30]} ..."
        )
    return modules[name]
