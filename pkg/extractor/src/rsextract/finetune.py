"""Optional fine-tuning of a zoo model on a labeled image tree.

Separate from extraction on purpose: retrieval never requires it, and the
resulting weights file is simply passed back to ``extract`` as a user model.

Recipe: replace the classifier head with one output per class, then SGD with
momentum 0.9, mini-batch 50, 20 epochs, learning rate 0.1 stepping down to
0.05, 0.005 and 0.001 every 5 epochs. Dropout (where the architecture has
it) stays at p=0.5.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from torch import nn
from PIL import Image

from .extract import _to_batch, list_images
from .zoo import ZOO, load_model

EPOCHS = 20
BATCH_SIZE = 50
MOMENTUM = 0.9
LR_SCHEDULE = {0: 0.1, 5: 0.05, 10: 0.005, 15: 0.001}


def _replace_head(model, n_classes: int):
    if hasattr(model, "classifier"):  # alexnet / vgg family
        head = model.classifier[-1]
        model.classifier[-1] = nn.Linear(head.in_features, n_classes)
        nn.init.normal_(model.classifier[-1].weight, std=0.01)
        nn.init.zeros_(model.classifier[-1].bias)
        return
    if hasattr(model, "fc"):  # googlenet
        model.fc = nn.Linear(model.fc.in_features, n_classes)
        nn.init.normal_(model.fc.weight, std=0.01)
        nn.init.zeros_(model.fc.bias)
        return
    raise ValueError("model has no recognizable classifier head")


def finetune(image_root, model_name: str, out_path, weights: str = "pretrained",
             epochs: int = EPOCHS, seed: int = 0) -> Path:
    """Fine-tune ``model_name`` on the image tree and save the full model."""
    if model_name not in ZOO:
        raise ValueError(f"finetune expects a zoo model, got {model_name!r}")
    model, input_size, _ = load_model(model_name, weights)
    records = list_images(image_root)
    classes = sorted({label for _, label, _ in records})
    label_index = {c: i for i, c in enumerate(classes)}
    _replace_head(model, len(classes))
    model.train()

    rng = np.random.default_rng(seed)
    optimizer = torch.optim.SGD(model.parameters(), lr=LR_SCHEDULE[0],
                                momentum=MOMENTUM)
    loss_fn = nn.CrossEntropyLoss()
    torch.manual_seed(seed)

    for epoch in range(epochs):
        if epoch in LR_SCHEDULE:
            for group in optimizer.param_groups:
                group["lr"] = LR_SCHEDULE[epoch]
        order = rng.permutation(len(records))
        total = 0.0
        for start in range(0, len(order), BATCH_SIZE):
            batch_records = [records[i] for i in order[start : start + BATCH_SIZE]]
            images = []
            targets = []
            for _, label, path in batch_records:
                img = Image.open(path)
                images.append(img.resize((input_size, input_size), Image.BILINEAR))
                targets.append(label_index[label])
            batch = _to_batch(images)
            optimizer.zero_grad()
            logits = model(batch)
            if isinstance(logits, tuple):  # googlenet aux outputs in train mode
                logits = logits[0]
            loss = loss_fn(logits, torch.tensor(targets))
            loss.backward()
            optimizer.step()
            total += float(loss)
        print(f"epoch {epoch + 1}/{epochs}: mean loss "
              f"{total / max(1, len(order) // BATCH_SIZE + 1):.4f}")

    model.eval()
    out_path = Path(out_path)
    torch.save(model, out_path)
    print(f"wrote {out_path}")
    return out_path
