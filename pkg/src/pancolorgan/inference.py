"""Reduced- and full-resolution pansharpening with a trained generator."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import AlignmentError, ValidationError
from .generator import PanColorGenerator, generator_forward
from .pipeline import PAN_RATIO, PatchBundle, guidance_of
from .raster import Raster, ResampleSpec, resize_bicubic


def infer_reduced(model: PanColorGenerator, bundle: PatchBundle, guidance: str = "gms") -> Raster:
    """``G(x_gms, x_ms)`` or ``G(x_pan, x_ms)`` on a Wald-degraded bundle."""
    return generator_forward(model, guidance_of(bundle, guidance), bundle.x_ms, "eval")[0]


def infer_full(model: PanColorGenerator, y_pan: Raster, y_ms: Raster,
               resample: ResampleSpec = ResampleSpec()) -> Raster:
    """Pansharpen at the original scale: ``G(y_pan, bicubic_up(y_ms))``."""
    expected = (PAN_RATIO * y_ms.height, PAN_RATIO * y_ms.width)
    if y_pan.shape[:2] != expected or y_pan.bands != 1:
        raise AlignmentError(f"PAN {y_pan.shape} does not match {PAN_RATIO}x MS {y_ms.shape}")
    ms_up = resize_bicubic(y_ms, *expected, resample)
    return generator_forward(model, y_pan, ms_up, "eval")[0]


def feather_ramp(overlap: int) -> np.ndarray:
    """Rising blend weights across an overlap; a tile and its neighbour's falling ramp sum to 1."""
    return (np.arange(overlap) + 0.5) / overlap


def _starts(size, tile, step):
    starts = list(range(0, size - tile + 1, step))
    if starts[-1] != size - tile:
        starts.append(size - tile)
    return starts


def _axis_weights(starts, tile):
    weights = []
    for i, s in enumerate(starts):
        w = np.ones(tile)
        if i > 0:
            ov = starts[i - 1] + tile - s
            if ov > 0:
                w[:ov] *= feather_ramp(ov)
        if i + 1 < len(starts):
            ov = s + tile - starts[i + 1]
            if ov > 0:
                w[tile - ov:] *= feather_ramp(ov)[::-1]
        weights.append(w)
    return weights


def infer_scene_tiled(model: PanColorGenerator, pan_scene: Raster, ms_scene: Raster,
                      tile: int = 1024, overlap: int = 0, workers: int = 1,
                      resample: ResampleSpec = ResampleSpec()) -> Raster:
    """Scene-scale full-resolution inference on overlapping PAN tiles.

    ``tile`` and ``overlap`` are in PAN pixels; both must be multiples of the
    PAN/MS ratio so MS tiles stay aligned. Overlaps are blended with linear
    feathering; with ``overlap=0`` each output tile is exactly ``infer_full`` of
    that tile.
    """
    H, W = pan_scene.shape[:2]
    if (H, W) != (PAN_RATIO * ms_scene.height, PAN_RATIO * ms_scene.width):
        raise AlignmentError(f"PAN scene {pan_scene.shape} is not {PAN_RATIO}x MS {ms_scene.shape}")
    if overlap < 0 or overlap % 2 or overlap >= tile / 2:
        raise ValidationError(f"overlap must be even and < tile/2, got {overlap}")
    if tile % PAN_RATIO or overlap % PAN_RATIO:
        raise ValidationError(f"tile and overlap must be multiples of {PAN_RATIO}")
    if H < tile or W < tile:
        raise ValidationError(f"scene {H}x{W} is smaller than one {tile}x{tile} tile")

    rows, cols = _starts(H, tile, tile - overlap), _starts(W, tile, tile - overlap)
    wr, wc = _axis_weights(rows, tile), _axis_weights(cols, tile)
    m = tile // PAN_RATIO
    jobs = [(i, j) for i in range(len(rows)) for j in range(len(cols))]

    def run(job):
        r, c = rows[job[0]], cols[job[1]]
        pan = pan_scene.with_data(pan_scene.data[r:r + tile, c:c + tile])
        ms = ms_scene.with_data(ms_scene.data[r // PAN_RATIO:r // PAN_RATIO + m,
                                              c // PAN_RATIO:c // PAN_RATIO + m])
        return infer_full(model, pan, ms, resample).data

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            outputs = list(pool.map(run, jobs))
    else:
        outputs = [run(j) for j in jobs]

    bands = ms_scene.bands
    acc = np.zeros((H, W, bands))
    wsum = np.zeros((H, W, 1))
    for (i, j), out in zip(jobs, outputs):
        w = np.outer(wr[i], wc[j])[:, :, None]
        r, c = rows[i], cols[j]
        acc[r:r + tile, c:c + tile] += out * w
        wsum[r:r + tile, c:c + tile] += w
    return Raster(acc / wsum, band_names=ms_scene.band_names)


def percentile_stretch(data: np.ndarray, low: float = 2.0, high: float = 98.0) -> np.ndarray:
    """Per-band linear stretch of the [low, high] percentiles to 0..255."""
    out = np.empty(data.shape, dtype=np.uint8)
    for b in range(data.shape[2]):
        lo, hi = np.percentile(data[:, :, b], [low, high])
        scale = 255.0 / (hi - lo) if hi > lo else 0.0
        out[:, :, b] = np.clip((data[:, :, b] - lo) * scale, 0, 255).round().astype(np.uint8)
    return out


def write_png_preview(raster: Raster, path, rgb=(2, 1, 0)) -> None:
    """8-bit preview; ``rgb`` picks bands (B, G, R, NIR order gives (2, 1, 0))."""
    from PIL import Image

    bands = [min(b, raster.bands - 1) for b in rgb] if raster.bands > 1 else [0]
    img = percentile_stretch(raster.data[:, :, bands])
    Image.fromarray(img[:, :, 0] if img.shape[2] == 1 else img).save(path)
