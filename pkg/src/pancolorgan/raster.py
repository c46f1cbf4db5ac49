"""Image tensor primitives shared by every stage of the pipeline.

A :class:`Raster` is an ``H x W x C`` floating point array tagged with the
range its values live in. All functions here are pure: they never modify their
inputs and hold no state, so they are safe to call from parallel workers.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import ArityError, ConfigError, RangeViolationError, ValidationError


class ValueRange(str, enum.Enum):
    UNIT_SIGNED = "unit_signed"
    UNIT = "unit"
    RAW_DN = "raw_dn"


_BOUNDS = {
    ValueRange.UNIT_SIGNED: (-1.0, 1.0),
    ValueRange.UNIT: (0.0, 1.0),
}


@dataclass
class Raster:
    """An ``H x W x C`` image with a declared value range and band labels."""

    data: np.ndarray
    value_range: ValueRange = ValueRange.UNIT_SIGNED
    band_names: tuple = field(default=())

    def __post_init__(self):
        data = np.asarray(self.data)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValidationError(f"raster must be H x W x C with every size >= 1, got {data.shape}")
        if not np.isfinite(data).all():
            raise ValidationError("raster contains non-finite values")
        self.data = data
        self.value_range = ValueRange(self.value_range)
        if not self.band_names:
            self.band_names = tuple(f"B{i}" for i in range(data.shape[2]))
        self.band_names = tuple(self.band_names)
        if len(self.band_names) != data.shape[2]:
            raise ValidationError(
                f"{len(self.band_names)} band names for {data.shape[2]} bands")
        bounds = _BOUNDS.get(self.value_range)
        if bounds is not None:
            _check_bounds(data, bounds, self.band_names)

    @property
    def shape(self):
        return self.data.shape

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def bands(self):
        return self.data.shape[2]

    def with_data(self, data, **changes) -> "Raster":
        return replace(self, data=data, **changes)


def _check_bounds(data, bounds, band_names):
    lo, hi = bounds
    for b in range(data.shape[2]):
        band = data[:, :, b]
        if band.min() < lo or band.max() > hi:
            raise RangeViolationError(
                f"band {band_names[b]!r} has values in [{band.min():g}, {band.max():g}], "
                f"outside [{lo:g}, {hi:g}]")


class NormalizationMode(str, enum.Enum):
    FIXED_BIT_DEPTH = "fixed_bit_depth"
    PER_SCENE_MINMAX = "per_scene_minmax"


@dataclass(frozen=True)
class NormalizationSpec:
    """Affine map between raw digital numbers and ``[-1, 1]``.

    ``fixed_bit_depth`` maps ``[0, 2**bit_depth - 1]`` onto ``[-1, 1]``.
    ``per_scene_minmax`` maps ``[low, high]`` onto ``[-1, 1]``; use
    :func:`fit_minmax` to obtain a spec with the bounds filled in.
    """

    bit_depth: int = 12
    mode: NormalizationMode = NormalizationMode.FIXED_BIT_DEPTH
    low: float | None = None
    high: float | None = None

    def __post_init__(self):
        if self.bit_depth not in (8, 11, 12, 16):
            raise ConfigError(f"bit_depth must be one of 8, 11, 12, 16; got {self.bit_depth}")
        object.__setattr__(self, "mode", NormalizationMode(self.mode))
        if self.mode is NormalizationMode.PER_SCENE_MINMAX and self.low is not None:
            if self.high is None or not self.high > self.low:
                raise ConfigError("per_scene_minmax needs high > low")

    def bounds(self):
        if self.mode is NormalizationMode.FIXED_BIT_DEPTH:
            return 0.0, float(2 ** self.bit_depth - 1)
        if self.low is None:
            raise ConfigError("per_scene_minmax spec has no fitted bounds; call fit_minmax first")
        return float(self.low), float(self.high)

    def to_dict(self):
        return {"bit_depth": self.bit_depth, "mode": self.mode.value,
                "low": self.low, "high": self.high}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def fit_minmax(r: Raster, bit_depth: int = 12) -> NormalizationSpec:
    lo, hi = float(r.data.min()), float(r.data.max())
    if hi == lo:
        hi = lo + 1.0
    return NormalizationSpec(bit_depth, NormalizationMode.PER_SCENE_MINMAX, lo, hi)


def normalize(r: Raster, spec: NormalizationSpec) -> Raster:
    if r.value_range is not ValueRange.RAW_DN:
        raise ValidationError(f"normalize expects a raw_dn raster, got {r.value_range.value}")
    lo, hi = spec.bounds()
    _check_bounds(r.data, (lo, hi), r.band_names)
    out = 2.0 * (r.data.astype(np.float64) - lo) / (hi - lo) - 1.0
    # guards against 1-ulp excursions past the bounds
    np.clip(out, -1.0, 1.0, out=out)
    return r.with_data(out, value_range=ValueRange.UNIT_SIGNED)


def denormalize(r: Raster, spec: NormalizationSpec) -> Raster:
    if r.value_range is not ValueRange.UNIT_SIGNED:
        raise ValidationError(f"denormalize expects a unit_signed raster, got {r.value_range.value}")
    lo, hi = spec.bounds()
    out = (r.data.astype(np.float64) + 1.0) * ((hi - lo) / 2.0) + lo
    return r.with_data(out, value_range=ValueRange.RAW_DN)


def to_grayscale(ms: Raster) -> Raster:
    """Unweighted per-pixel mean over all bands (NIR included)."""
    if ms.bands < 2:
        raise ArityError(f"grayscale conversion needs at least 2 bands, got {ms.bands}")
    gray = ms.data.mean(axis=2, keepdims=True)
    return ms.with_data(gray, band_names=("GRAY",))


@dataclass(frozen=True)
class ResampleSpec:
    """Bicubic resampling settings.

    ``bicubic_a`` is the Keys kernel parameter (-0.5 gives Catmull-Rom). When
    ``antialias`` is set the kernel is stretched by the reduction factor on
    downsampling, as MATLAB's ``imresize`` does.
    """

    method: str = "bicubic"
    bicubic_a: float = -0.5
    antialias: bool = True

    def __post_init__(self):
        if self.method != "bicubic":
            raise ConfigError(f"unsupported resampling method {self.method!r}")


def cubic_kernel(x, a=-0.5):
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


def resample_matrix(n_in: int, n_out: int, spec: ResampleSpec = ResampleSpec()) -> np.ndarray:
    """Dense ``n_out x n_in`` interpolation matrix for one axis.

    Pixel centres are aligned (``src = (dst + 0.5) * n_in / n_out - 0.5``),
    out-of-range taps are clamped to the edge pixel and each row is normalized
    to sum to one so constants are reproduced.
    """
    scale = n_in / n_out
    stretch = max(scale, 1.0) if spec.antialias else 1.0
    centers = (np.arange(n_out) + 0.5) * scale - 0.5
    reach = int(math.ceil(2.0 * stretch)) + 1
    taps = np.floor(centers)[:, None] + np.arange(-reach, reach + 1)[None, :]
    weights = cubic_kernel((centers[:, None] - taps) / stretch, spec.bicubic_a)
    cols = np.clip(taps, 0, n_in - 1).astype(np.intp)
    rows = np.broadcast_to(np.arange(n_out)[:, None], cols.shape)
    m = np.zeros((n_out, n_in))
    np.add.at(m, (rows, cols), weights)
    m /= m.sum(axis=1, keepdims=True)
    return m


def resize_array(data: np.ndarray, out_h: int, out_w: int,
                 spec: ResampleSpec = ResampleSpec()) -> np.ndarray:
    if out_h < 1 or out_w < 1:
        raise ValidationError(f"output size must be positive, got {out_h}x{out_w}")
    h, w = data.shape[:2]
    out = data
    if out_h != h:
        out = np.tensordot(resample_matrix(h, out_h, spec), out, axes=(1, 0))
    if out_w != w:
        out = np.moveaxis(np.tensordot(resample_matrix(w, out_w, spec), out, axes=(1, 1)), 0, 1)
    return np.array(out, dtype=np.float64)


def resize_bicubic(r: Raster, out_h: int, out_w: int,
                   spec: ResampleSpec = ResampleSpec()) -> Raster:
    """Separable bicubic resize with edge clamping.

    Bicubic overshoot near strong edges is clipped to the raster's declared
    value range.
    """
    out = resize_array(r.data, out_h, out_w, spec)
    bounds = _BOUNDS.get(r.value_range)
    if bounds is not None:
        np.clip(out, *bounds, out=out)
    return r.with_data(out)


def gaussian_kernel1d(kernel_size: int, sigma: float) -> np.ndarray:
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ValidationError(f"kernel_size must be a positive odd integer, got {kernel_size}")
    if not sigma > 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    t = np.arange(kernel_size) - kernel_size // 2
    k = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return k / k.sum()


def blur_array(data: np.ndarray, kernel_size: int, sigma: float) -> np.ndarray:
    k = gaussian_kernel1d(kernel_size, sigma)
    # scipy "reflect" is half-sample symmetric, which keeps the image mean exact
    out = ndimage.correlate1d(np.asarray(data, dtype=np.float64), k, axis=0, mode="reflect")
    return ndimage.correlate1d(out, k, axis=1, mode="reflect")


def gaussian_blur(r: Raster, kernel_size: int = 5, sigma: float = 2.0) -> Raster:
    return r.with_data(blur_array(r.data, kernel_size, sigma))
