import numpy as np
import pytest
import torch
from PIL import Image
from torch import nn


class TinyNet(nn.Module):
    """Small CNN for fast extraction tests: conv block plus an FC head."""

    input_size = 32

    def __init__(self):
        super().__init__()
        self.conv = nn.Conv2d(3, 4, 3, stride=2)
        self.relu = nn.ReLU()
        self.pool = nn.AdaptiveAvgPool2d(2)
        self.flatten = nn.Flatten()
        self.fc = nn.Linear(16, 6)

    def forward(self, x):
        return self.fc(self.flatten(self.pool(self.relu(self.conv(x)))))


@pytest.fixture
def tiny_model_file(tmp_path):
    torch.manual_seed(0)
    model = TinyNet().eval()
    path = tmp_path / "tiny.pth"
    torch.save(model, path)
    return path


@pytest.fixture
def image_tree(tmp_path):
    """Two classes x two images of random RGB noise."""
    rng = np.random.default_rng(0)
    root = tmp_path / "images"
    for label in ("forest", "river"):
        (root / label).mkdir(parents=True)
        for i in range(2):
            arr = rng.integers(0, 256, size=(48, 48, 3), dtype=np.uint8)
            Image.fromarray(arr, "RGB").save(root / label / f"im{i}.png")
    return root
