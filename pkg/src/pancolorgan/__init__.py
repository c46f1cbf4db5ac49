"""Self-supervised pansharpening by guided colorization (PanColorGAN)."""

from .raster import Raster, ValueRange, NormalizationSpec, ResampleSpec
from .pipeline import AugmentSpec, PatchBundle, make_bundle
from .generator import GeneratorConfig, build_generator
from .discriminator import DiscriminatorConfig, build_discriminator
from .losses import LossConfig
from .trainer import TrainConfig, train_loop

__version__ = "0.1.0"

__all__ = [
    "Raster", "ValueRange", "NormalizationSpec", "ResampleSpec", "AugmentSpec", "PatchBundle",
    "make_bundle", "GeneratorConfig", "build_generator", "DiscriminatorConfig",
    "build_discriminator", "LossConfig", "TrainConfig", "train_loop",
]
