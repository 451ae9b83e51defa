"""Shared fixtures: tiny seeded PNG datasets on disk."""

import numpy as np
import pytest
from PIL import Image


def make_images(class_dir, count, seed):
    """Write ``count`` small random PNGs into ``class_dir``."""
    class_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(count):
        pixels = rng.integers(0, 256, size=(6, 6, 3), dtype=np.uint8)
        Image.fromarray(pixels, "RGB").save(class_dir / f"img_{i}.png")


@pytest.fixture
def flat_dataset(tmp_path):
    root = tmp_path / "data"
    make_images(root / "cat", 3, seed=1)
    make_images(root / "dog", 3, seed=2)
    return root


@pytest.fixture
def split_dataset(tmp_path):
    root = tmp_path / "data"
    make_images(root / "train" / "cat", 4, seed=3)
    make_images(root / "train" / "dog", 4, seed=4)
    make_images(root / "test" / "cat", 2, seed=5)
    make_images(root / "test" / "dog", 2, seed=6)
    return root
