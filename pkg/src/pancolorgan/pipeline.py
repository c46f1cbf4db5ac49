"""Training sample construction under Wald's protocol.

The reference multispectral patch ``y_ms`` is degraded (down then back up) to
give the low-resolution colour cue ``x_ms``, and averaged over bands to give the
grayscale guidance ``x_gms``. When a panchromatic tile is present it is reduced
by the sensor ratio to ``x_pan`` for reduced-resolution testing and for the
super-resolution style baseline.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, AssemblyError, BundleError, ConfigError, ValidationError
from .raster import Raster, ResampleSpec, ValueRange, resize_bicubic, to_grayscale

PAN_RATIO = 4
MS_TILE = 256
MS_BANDS = 4

# real/fake discriminator stacks: guidance (1) | x_ms (4) | target (4)
DISC_CHANNELS = ("guidance", "x_ms", "target")


class AugmentMode(str, enum.Enum):
    FIXED_RATIO = "fixed_ratio"
    RANDOM_DOWNSAMPLE = "random_downsample"


@dataclass(frozen=True)
class AugmentSpec:
    mode: AugmentMode = AugmentMode.FIXED_RATIO
    fixed_factor: int = 4
    rd_min: int = 20
    rd_max: int = 80
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", AugmentMode(self.mode))
        if self.fixed_factor < 2:
            raise ConfigError(f"fixed_factor must be >= 2, got {self.fixed_factor}")
        if not 1 <= self.rd_min <= self.rd_max:
            raise ConfigError(f"need 1 <= rd_min <= rd_max, got [{self.rd_min}, {self.rd_max}]")

    def to_dict(self):
        return {"mode": self.mode.value, "fixed_factor": self.fixed_factor,
                "rd_min": self.rd_min, "rd_max": self.rd_max, "rng_seed": self.rng_seed}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class PatchMeta:
    scene_id: str = ""
    tile_row: int = 0
    tile_col: int = 0
    downsample_size_used: int = MS_TILE // PAN_RATIO
    patch_id: str = ""


@dataclass
class PatchBundle:
    y_ms: Raster
    x_ms: Raster
    x_gms: Raster
    x_pan: Raster | None = None
    y_pan: Raster | None = None
    meta: PatchMeta = field(default_factory=PatchMeta)


def patch_rng(seed: int, patch_id: str = "", epoch: int = 0) -> np.random.Generator:
    """Independent random stream for one sample, stable across processes."""
    digest = hashlib.sha256(patch_id.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, key]))


def _down_up(y_ms: Raster, size_h: int, size_w: int, resample: ResampleSpec) -> Raster:
    small = resize_bicubic(y_ms, size_h, size_w, resample)
    return resize_bicubic(small, y_ms.height, y_ms.width, resample)


def degrade_fixed(y_ms: Raster, factor: int = PAN_RATIO,
                  resample: ResampleSpec = ResampleSpec()) -> Raster:
    """Bicubic reduction by ``factor`` followed by bicubic expansion to the input size."""
    if factor < 2:
        raise ValidationError(f"degradation factor must be >= 2, got {factor}")
    h = max(1, round(y_ms.height / factor))
    w = max(1, round(y_ms.width / factor))
    return _down_up(y_ms, h, w, resample)


def degrade_random(y_ms: Raster, spec: AugmentSpec, rng: np.random.Generator,
                   resample: ResampleSpec = ResampleSpec()):
    """Reduce to a random ``s x s`` size drawn from ``[rd_min, rd_max]``, then expand back.

    Training-time augmentation only. Returns ``(degraded, s)``.
    """
    if spec.mode is not AugmentMode.RANDOM_DOWNSAMPLE:
        raise ConfigError("degrade_random called with a fixed_ratio AugmentSpec")
    s = int(rng.integers(spec.rd_min, spec.rd_max, endpoint=True))
    return _down_up(y_ms, s, s, resample), s


def make_bundle(y_ms: Raster, y_pan: Raster | None = None, spec: AugmentSpec = AugmentSpec(),
                rng: np.random.Generator | None = None, meta: PatchMeta | None = None,
                resample: ResampleSpec = ResampleSpec()) -> PatchBundle:
    if y_ms.value_range is not ValueRange.UNIT_SIGNED:
        raise BundleError(f"y_ms must be unit_signed, got {y_ms.value_range.value}")
    if y_ms.bands != MS_BANDS or y_ms.height != y_ms.width:
        raise BundleError(f"y_ms must be square with {MS_BANDS} bands, got {y_ms.shape}")
    meta = PatchMeta() if meta is None else PatchMeta(**vars(meta))

    if spec.mode is AugmentMode.RANDOM_DOWNSAMPLE:
        if rng is None:
            raise BundleError("random downsampling needs an rng stream")
        x_ms, meta.downsample_size_used = degrade_random(y_ms, spec, rng, resample)
    else:
        x_ms = degrade_fixed(y_ms, spec.fixed_factor, resample)
        meta.downsample_size_used = max(1, round(y_ms.height / spec.fixed_factor))

    x_pan = None
    if y_pan is not None:
        expected = (PAN_RATIO * y_ms.height, PAN_RATIO * y_ms.width, 1)
        if y_pan.shape != expected:
            raise BundleError(f"y_pan must be {expected}, got {y_pan.shape}")
        if y_pan.value_range is not ValueRange.UNIT_SIGNED:
            raise BundleError(f"y_pan must be unit_signed, got {y_pan.value_range.value}")
        x_pan = resize_bicubic(y_pan, y_ms.height, y_ms.width, resample)

    return PatchBundle(y_ms=y_ms, x_ms=x_ms, x_gms=to_grayscale(y_ms),
                       x_pan=x_pan, y_pan=y_pan, meta=meta)


@dataclass
class SceneTile:
    row: int
    col: int
    y_ms: Raster
    y_pan: Raster

    @property
    def ms_origin(self):
        return self.row, self.col

    @property
    def pan_origin(self):
        return PAN_RATIO * self.row, PAN_RATIO * self.col

    def __iter__(self):
        return iter((self.y_ms, self.y_pan))


def check_scene_alignment(ms_shape, pan_shape, ratio: int = PAN_RATIO) -> None:
    for axis, (m, p) in enumerate(zip(ms_shape[:2], pan_shape[:2])):
        if not ratio * m <= p < ratio * (m + 1):
            raise AlignmentError(
                f"PAN/MS size ratio on axis {axis} is {p}/{m}, expected {ratio}")


def tile_scene(ms_scene: Raster, pan_scene: Raster, stride: int = MS_TILE,
               tile: int = MS_TILE) -> list[SceneTile]:
    """Cut aligned ``tile x tile`` MS / ``4 tile x 4 tile`` PAN pairs; partial border tiles are dropped."""
    if stride < 1:
        raise ValidationError(f"stride must be positive, got {stride}")
    check_scene_alignment(ms_scene.shape, pan_scene.shape)
    t, big = tile, PAN_RATIO * tile
    tiles = []
    for r in range(0, ms_scene.height - t + 1, stride):
        for c in range(0, ms_scene.width - t + 1, stride):
            pr, pc = PAN_RATIO * r, PAN_RATIO * c
            tiles.append(SceneTile(
                r, c,
                ms_scene.with_data(ms_scene.data[r:r + t, c:c + t].copy()),
                pan_scene.with_data(pan_scene.data[pr:pr + big, pc:pc + big].copy())))
    return tiles


def guidance_of(bundle: PatchBundle, guidance: str) -> Raster:
    if guidance == "gms":
        return bundle.x_gms
    if guidance == "pan":
        if bundle.x_pan is None:
            raise BundleError("bundle has no x_pan raster")
        return bundle.x_pan
    raise ValidationError(f"guidance must be 'gms' or 'pan', got {guidance!r}")


def assemble_discriminator_batch(bundles, fakes, guidance: str = "gms"):
    """Stack conditioned real and fake samples, channel order ``[guidance | x_ms | target]``.

    Returns two ``N x H x W x 9`` arrays. The conditioning guidance is
    ``x_gms`` for the colorization modes and ``x_pan`` for the
    super-resolution baseline.
    """
    if len(bundles) != len(fakes):
        raise AssemblyError(f"{len(bundles)} bundles but {len(fakes)} fakes")
    reals, fakes_out = [], []
    for i, (b, fake) in enumerate(zip(bundles, fakes)):
        fake = fake.data if isinstance(fake, Raster) else np.asarray(fake)
        if fake.shape != b.y_ms.shape:
            raise AssemblyError(f"fake {i} has shape {fake.shape}, expected {b.y_ms.shape}")
        cond = [guidance_of(b, guidance).data, b.x_ms.data]
        reals.append(np.concatenate(cond + [b.y_ms.data], axis=2))
        fakes_out.append(np.concatenate(cond + [fake], axis=2))
    return np.stack(reals), np.stack(fakes_out)
