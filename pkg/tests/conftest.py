import numpy as np
import pytest
import torch

from pancolorgan.dataset import DatasetWriter, load_manifest, synthetic_scene
from pancolorgan.discriminator import DiscriminatorConfig
from pancolorgan.generator import GeneratorConfig
from pancolorgan.raster import Raster, blur_array, resize_array

TOY_DISC = DiscriminatorConfig(widths=(16, 32, 64, 128, 128))
TINY_GEN = GeneratorConfig(base_channels=8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


def random_ms(rng, size=256, bands=4):
    return Raster(rng.uniform(-1, 1, (size, size, bands)), band_names=("B", "G", "R", "NIR")[:bands])


def build_dataset(path, n, size=64, seed=0, with_pan=True, split="train"):
    rng = np.random.default_rng(seed)
    writer = DatasetWriter(path, split)
    for i in range(n):
        ms, pan = synthetic_scene(rng, size)
        writer.add(f"p{i:03d}", f"scene{i % 3}", {"y_ms": ms, "y_pan": pan if with_pan else None})
    return load_manifest(writer.close())


@pytest.fixture(scope="session")
def toy_manifest(tmp_path_factory):
    return build_dataset(tmp_path_factory.mktemp("toy"), 16, 64)


def sharp_blurred_pair(rng, size=64):
    """Sharp PAN-like scene (4x) and an MS whose gray image is a softened copy of it."""
    pan = blur_array(rng.uniform(-1, 1, (4 * size, 4 * size, 1)), 3, 0.7)
    pan = np.clip(pan * 2, -1, 1)
    gray = blur_array(resize_array(pan, size, size), 7, 2.5)
    ms = np.clip(gray + rng.normal(0, 0.01, (size, size, 4)), -1, 1)
    return pan, ms
