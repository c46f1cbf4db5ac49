"""Fusion quality metrics.

With-reference: SAM, ERGAS, sCC, UIQI and its band average (QAVE), the
hypercomplex Q2^n index, PSNR and SSIM. No-reference: D_lambda, D_s and QNR.
Arrays are ``H x W x C`` (``H x W`` accepted for single-band metrics). Callers
holding ``[-1, 1]`` data should map it to ``[0, 1]`` first (:func:`to_unit`),
which :func:`evaluate_reference` and :func:`evaluate_no_reference` do.

Degenerate UIQI windows follow the usual factorized limits:

* both variances and both means zero: Q = 1;
* both variances zero: only the luminance factor ``2 mx my / (mx^2 + my^2)``;
* both means zero: only the correlation/contrast factor ``2 sxy / (sx^2 + sy^2)``.

"Zero" here means below ``1e-20`` relative to the other factor's scale, so
floating point residue from constant windows does not produce noise.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .errors import MetricError
from .raster import blur_array, gaussian_kernel1d, resize_array, ResampleSpec

ZERO = 1e-20
LAPLACIAN = np.array([[-1.0, -1.0, -1.0], [-1.0, 8.0, -1.0], [-1.0, -1.0, -1.0]])
PSNR_INF = float("inf")


def _as3d(x):
    x = np.asarray(x, dtype=np.float64)
    return x[:, :, None] if x.ndim == 2 else x


def _same_shape(pred, ref):
    pred, ref = _as3d(pred), _as3d(ref)
    if pred.shape != ref.shape:
        raise MetricError(f"shape mismatch {pred.shape} vs {ref.shape}")
    return pred, ref


def to_unit(x):
    """``[-1, 1]`` -> ``[0, 1]``."""
    return (np.asarray(x, dtype=np.float64) + 1.0) / 2.0


def sam_details(pred, ref):
    """Returns ``(mean angle in degrees, number of skipped zero-norm pixels)``."""
    pred, ref = _same_shape(pred, ref)
    if pred.shape[2] < 2:
        raise MetricError("SAM needs at least 2 bands")
    np_, nr = np.linalg.norm(pred, axis=2), np.linalg.norm(ref, axis=2)
    valid = (np_ > 0) & (nr > 0)
    if not valid.any():
        raise MetricError("every pixel has a zero-norm spectral vector")
    u = pred[valid] / np_[valid, None]
    v = ref[valid] / nr[valid, None]
    # half-angle form stays accurate near 0 and 180 degrees, unlike arccos
    angle = 2.0 * np.arctan2(np.linalg.norm(u - v, axis=1), np.linalg.norm(u + v, axis=1))
    return float(np.degrees(angle).mean()), int((~valid).sum())


def sam(pred, ref) -> float:
    return sam_details(pred, ref)[0]


def ergas(pred, ref, ratio: int = 4) -> float:
    pred, ref = _same_shape(pred, ref)
    means = ref.mean(axis=(0, 1))
    if np.any(means == 0):
        raise MetricError("ERGAS undefined: a reference band has zero mean")
    rmse = np.sqrt(((pred - ref) ** 2).mean(axis=(0, 1)))
    return float(100.0 / ratio * np.sqrt(np.mean((rmse / means) ** 2)))


def high_pass(band):
    return ndimage.correlate(np.asarray(band, dtype=np.float64), LAPLACIAN, mode="reflect")


def scc_per_band(pred, ref) -> np.ndarray:
    """Per-band correlation of Laplacian high-passes; NaN where a high-pass is flat."""
    pred, ref = _same_shape(pred, ref)
    out = np.full(pred.shape[2], np.nan)
    for b in range(pred.shape[2]):
        hp = high_pass(pred[:, :, b]).ravel()
        hr = high_pass(ref[:, :, b]).ravel()
        hp = hp - hp.mean()
        hr = hr - hr.mean()
        den = math.sqrt(float(hp @ hp) * float(hr @ hr))
        if den > 0:
            out[b] = float(hp @ hr) / den
    return out


def scc(pred, ref) -> float:
    per_band = scc_per_band(pred, ref)
    if np.isnan(per_band).all():
        raise MetricError("sCC undefined: zero-variance high-pass in every band")
    return float(np.nanmean(per_band))


def _windows(x, window, step):
    """``H x W [x C]`` -> ``n_windows x window*window [x C]``."""
    h, w = x.shape[:2]
    if window > min(h, w):
        raise MetricError(f"window {window} larger than image {h}x{w}")
    v = sliding_window_view(x, (window, window), axis=(0, 1))[::step, ::step]
    # v: nh x nw [x C] x window x window
    v = np.moveaxis(v, (-2, -1), (2, 3)) if x.ndim == 3 else v
    return v.reshape(v.shape[0] * v.shape[1], window * window, *x.shape[2:])


def _combine(cov, var_x, var_y, mean_xy, mean_sq_x, mean_sq_y):
    den_var = var_x + var_y
    den_mean = mean_sq_x + mean_sq_y
    zero_var = den_var <= ZERO * np.maximum(den_mean, 1.0)
    zero_mean = den_mean <= ZERO * np.maximum(den_var, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        full = 4.0 * cov * mean_xy / (den_var * den_mean)
        lum = 2.0 * mean_xy / den_mean
        con = 2.0 * cov / den_var
    q = np.where(zero_var, np.where(zero_mean, 1.0, lum), np.where(zero_mean, con, full))
    return q


def uiqi_map(pred_band, ref_band, window: int = 32, step: int | None = None) -> np.ndarray:
    """Per-window universal image quality index."""
    x = np.asarray(pred_band, dtype=np.float64)
    y = np.asarray(ref_band, dtype=np.float64)
    x, y = (a[:, :, 0] if a.ndim == 3 else a for a in (x, y))
    if x.shape != y.shape:
        raise MetricError(f"shape mismatch {x.shape} vs {y.shape}")
    wx, wy = _windows(x, window, step or window), _windows(y, window, step or window)
    mx, my = wx.mean(axis=1), wy.mean(axis=1)
    dx, dy = wx - mx[:, None], wy - my[:, None]
    return _combine((dx * dy).mean(axis=1), (dx * dx).mean(axis=1), (dy * dy).mean(axis=1),
                    mx * my, mx * mx, my * my)


def uiqi(pred_band, ref_band, window: int = 32, step: int | None = None) -> float:
    return float(uiqi_map(pred_band, ref_band, window, step).mean())


def qave(pred, ref, window: int = 32, step: int | None = None) -> float:
    pred, ref = _same_shape(pred, ref)
    return float(np.mean([uiqi(pred[:, :, b], ref[:, :, b], window, step)
                          for b in range(pred.shape[2])]))


def hc_conj(x):
    out = -x
    out[..., 0] = x[..., 0]
    return out


def hc_mul(x, y):
    """Cayley-Dickson product over the last axis (complex, quaternion, octonion, ...)."""
    n = x.shape[-1]
    if n == 1:
        return x * y
    h = n // 2
    a, b = x[..., :h], x[..., h:]
    c, d = y[..., :h], y[..., h:]
    return np.concatenate([hc_mul(a, c) - hc_mul(hc_conj(d), b),
                           hc_mul(d, a) + hc_mul(b, hc_conj(c))], axis=-1)


def q2n_map(pred, ref, window: int = 32, step: int | None = None) -> np.ndarray:
    """Per-window hypercomplex quality index (quaternion Q4 for four bands)."""
    pred, ref = _same_shape(pred, ref)
    if pred.shape[2] not in (2, 4, 8):
        raise MetricError(f"Q2n needs 2, 4 or 8 bands, got {pred.shape[2]}")
    wp, wr = _windows(pred, window, step or window), _windows(ref, window, step or window)
    mp, mr = wp.mean(axis=1), wr.mean(axis=1)
    dp, dr = wp - mp[:, None], wr - mr[:, None]
    cov = np.linalg.norm(hc_mul(dp, hc_conj(dr)).mean(axis=1), axis=-1)
    var_p = (dp * dp).sum(axis=-1).mean(axis=1)
    var_r = (dr * dr).sum(axis=-1).mean(axis=1)
    np_, nr = np.linalg.norm(mp, axis=-1), np.linalg.norm(mr, axis=-1)
    return _combine(cov, var_p, var_r, np_ * nr, np_ * np_, nr * nr)


def q2n(pred, ref, window: int = 32, step: int | None = None) -> float:
    return float(q2n_map(pred, ref, window, step).mean())


def psnr(pred, ref, peak: float = 1.0) -> float:
    pred, ref = _same_shape(pred, ref)
    mse = float(((pred - ref) ** 2).mean())
    if mse == 0:
        return PSNR_INF
    return 10.0 * math.log10(peak * peak / mse)


SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def ssim_map(pred_band, ref_band, peak: float = 1.0) -> np.ndarray:
    """SSIM over every valid 11x11 Gaussian-weighted window (no padding)."""
    x = np.asarray(pred_band, dtype=np.float64)
    y = np.asarray(ref_band, dtype=np.float64)
    if x.shape != y.shape:
        raise MetricError(f"shape mismatch {x.shape} vs {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise MetricError(f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    g = gaussian_kernel1d(SSIM_WINDOW, SSIM_SIGMA)
    w = np.outer(g, g)

    def filt(a):
        return np.einsum("ijkl,kl->ij", sliding_window_view(a, w.shape), w)

    mx, my = filt(x), filt(y)
    vx = filt(x * x) - mx * mx
    vy = filt(y * y) - my * my
    cxy = filt(x * y) - mx * my
    c1, c2 = (SSIM_K1 * peak) ** 2, (SSIM_K2 * peak) ** 2
    return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))


def ssim(pred, ref, peak: float = 1.0) -> float:
    """Mean SSIM; multiband inputs average the per-band values."""
    pred, ref = _same_shape(pred, ref)
    return float(np.mean([ssim_map(pred[:, :, b], ref[:, :, b], peak).mean()
                          for b in range(pred.shape[2])]))


def qnr(d_lambda: float, d_s: float) -> float:
    return (1.0 - d_lambda) * (1.0 - d_s)


def d_lambda(fused, ms, ratio: int = 4, window: int = 32) -> float:
    fused, ms = _as3d(fused), _as3d(ms)
    pairs = list(itertools.combinations(range(fused.shape[2]), 2))
    if not pairs:
        raise MetricError("D_lambda needs at least 2 bands")
    small = max(1, window // ratio)
    return float(np.mean([
        abs(uiqi(fused[:, :, i], fused[:, :, j], window) - uiqi(ms[:, :, i], ms[:, :, j], small))
        for i, j in pairs]))


def d_s(fused, ms, pan, ratio: int = 4, window: int = 32,
        resample: ResampleSpec = ResampleSpec()) -> float:
    fused, ms, pan = _as3d(fused), _as3d(ms), _as3d(pan)
    pan_low = resize_array(pan, ms.shape[0], ms.shape[1], resample)[:, :, 0]
    small = max(1, window // ratio)
    return float(np.mean([
        abs(uiqi(fused[:, :, b], pan[:, :, 0], window) - uiqi(ms[:, :, b], pan_low, small))
        for b in range(fused.shape[2])]))


def no_reference_suite(fused, ms, pan, ratio: int = 4, window: int = 32) -> dict:
    """D_lambda, D_s and QNR with exponents p = q = 1.

    Windows are ``window`` pixels at PAN scale and ``window // ratio`` at MS
    scale so both cover the same ground area; PAN is degraded to MS scale with
    the pipeline's bicubic resampler.
    """
    fused, ms, pan = _as3d(fused), _as3d(ms), _as3d(pan)
    if pan.shape[2] != 1 or fused.shape[:2] != pan.shape[:2]:
        raise MetricError(f"fused {fused.shape} and PAN {pan.shape} are not aligned")
    if fused.shape[2] != ms.shape[2] or fused.shape[:2] != (ratio * ms.shape[0], ratio * ms.shape[1]):
        raise MetricError(f"fused {fused.shape} is not {ratio}x MS {ms.shape}")
    dl = d_lambda(fused, ms, ratio, window)
    ds = d_s(fused, ms, pan, ratio, window)
    return {"d_lambda": dl, "d_s": ds, "qnr": qnr(dl, ds)}


REFERENCE_METRICS = ("qave", "q2n", "scc", "sam", "ergas", "psnr", "ssim")
NO_REFERENCE_METRICS = ("d_lambda", "d_s", "qnr")


def reference_suite(pred, ref, ratio: int = 4, window: int = 32) -> dict:
    pred, ref = _same_shape(pred, ref)
    return {
        "qave": qave(pred, ref, window),
        "q2n": q2n(pred, ref, window),
        "scc": scc(pred, ref),
        "sam": sam(pred, ref),
        "ergas": ergas(pred, ref, ratio),
        "psnr": psnr(pred, ref, 1.0),
        "ssim": ssim(pred, ref, 1.0),
    }


def _json_value(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if isinstance(v, float) and math.isnan(v):
        return None
    return v


@dataclass
class MetricReport:
    """Per-patch values and their arithmetic means."""

    names: tuple
    patch_ids: list = field(default_factory=list)
    per_patch: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def add(self, patch_id: str, values: dict) -> None:
        self.patch_ids.append(patch_id)
        for name in self.names:
            self.per_patch.setdefault(name, []).append(float(values[name]))

    @property
    def count(self) -> int:
        return len(self.patch_ids)

    @property
    def aggregate(self) -> dict:
        return {name: float(np.mean(self.per_patch.get(name, [np.nan]))) for name in self.names}

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "config": self.config,
            "aggregate": {k: _json_value(v) for k, v in self.aggregate.items()},
            "per_patch": [
                {"patch_id": pid, **{n: _json_value(self.per_patch[n][i]) for n in self.names}}
                for i, pid in enumerate(self.patch_ids)],
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["patch_id", *self.names])
            for i, pid in enumerate(self.patch_ids):
                w.writerow([pid, *(self.per_patch[n][i] for n in self.names)])
            w.writerow(["mean", *(self.aggregate[n] for n in self.names)])


def evaluate_reference(pairs, ratio: int = 4, window: int = 32, remap: bool = True) -> MetricReport:
    """``pairs``: iterable of ``(patch_id, pred, ref)`` arrays in ``[-1, 1]`` (or ``[0, 1]`` with ``remap=False``)."""
    report = MetricReport(REFERENCE_METRICS, config={
        "ratio": ratio, "window": window, "scc_highpass": "laplacian3x3",
        "ssim": {"window": SSIM_WINDOW, "sigma": SSIM_SIGMA, "k1": SSIM_K1, "k2": SSIM_K2},
        "value_space": "unit", "q_label": "q2n is the hypercomplex index, qave the band mean"})
    for pid, pred, ref in pairs:
        if remap:
            pred, ref = to_unit(pred), to_unit(ref)
        report.add(pid, reference_suite(pred, ref, ratio, window))
    return report


def evaluate_no_reference(triples, ratio: int = 4, window: int = 32, remap: bool = True) -> MetricReport:
    """``triples``: iterable of ``(patch_id, fused, ms, pan)``."""
    report = MetricReport(NO_REFERENCE_METRICS, config={
        "ratio": ratio, "window": window, "window_ms": max(1, window // ratio),
        "pan_degradation": "bicubic", "p": 1, "q": 1, "value_space": "unit"})
    for pid, fused, ms, pan in triples:
        if remap:
            fused, ms, pan = to_unit(fused), to_unit(ms), to_unit(pan)
        report.add(pid, no_reference_suite(fused, ms, pan, ratio, window))
    return report


SHARPNESS_ROWS = ("Reduced PAN - Grayscale MS", "Reduced PAN(Blurred) - Grayscale MS")


def sharpness_report(pan, ms, ratio: int = 4, blur_size: int = 5, blur_sigma: float = 2.0,
                     remap: bool = True) -> list:
    """PSNR/sCC/SSIM of the reduced PAN and of its blurred version against grayscale MS.

    Accepts arrays or rasters; sCC is NaN when a high-pass is flat.
    """
    pan = _as3d(getattr(pan, "data", pan))
    ms = _as3d(getattr(ms, "data", ms))
    if remap:
        pan, ms = to_unit(pan), to_unit(ms)
    h, w = ms.shape[:2]
    if pan.shape[:2] != (ratio * h, ratio * w):
        raise MetricError(f"PAN {pan.shape} is not {ratio}x MS {ms.shape}")
    gray = ms.mean(axis=2, keepdims=True)
    reduced = resize_array(pan, h, w)
    blurred = blur_array(reduced, blur_size, blur_sigma)
    rows = []
    for label, candidate in zip(SHARPNESS_ROWS, (reduced, blurred)):
        per_band = scc_per_band(candidate, gray)
        rows.append({"row": label, "psnr": psnr(candidate, gray, 1.0),
                     "scc": float(per_band[0]), "ssim": ssim(candidate, gray, 1.0)})
    return rows


def write_sharpness_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["", "PSNR", "sCC", "SSIM"])
        for r in rows:
            w.writerow([r["row"], r["psnr"], r["scc"], r["ssim"]])
