"""Dataset manifest, canonical on-disk layout and scene ingestion."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensorio
from .errors import ValidationError
from .pipeline import (PAN_RATIO, AugmentSpec, PatchBundle, PatchMeta, make_bundle, patch_rng,
                       tile_scene)
from .raster import NormalizationSpec, Raster, ResampleSpec, ValueRange, fit_minmax, normalize

log = logging.getLogger(__name__)

MANIFEST_FORMAT = "pancolorgan-manifest"
SCENE_SUFFIXES = (".tensor", ".npy", ".tif", ".tiff")


@dataclass
class ManifestEntry:
    patch_id: str
    scene_id: str
    files: dict
    tile_row: int = 0
    tile_col: int = 0
    # per-scene normalization override (per_scene_minmax mode)
    normalization: dict | None = None


@dataclass
class DatasetManifest:
    entries: list
    split: str = "train"
    normalization: NormalizationSpec = field(default_factory=NormalizationSpec)
    root: Path = field(default=Path("."))

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValidationError(f"split must be 'train' or 'test', got {self.split!r}")
        ids = [e.patch_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValidationError("manifest patch_ids are not unique")

    def __len__(self):
        return len(self.entries)

    def path(self, entry: ManifestEntry, role: str) -> Path:
        return self.root / entry.files[role]

    def normalization_of(self, entry: ManifestEntry) -> NormalizationSpec:
        if entry.normalization is not None:
            return NormalizationSpec.from_dict(entry.normalization)
        return self.normalization

    def has_role(self, role: str) -> bool:
        return bool(self.entries) and all(role in e.files for e in self.entries)

    def to_dict(self):
        return {
            "format": MANIFEST_FORMAT,
            "version": 1,
            "split": self.split,
            "normalization": self.normalization.to_dict(),
            "entries": [vars(e) for e in self.entries],
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1))
        return path

    def subset(self, indices) -> "DatasetManifest":
        return DatasetManifest([self.entries[i] for i in indices], self.split,
                               self.normalization, self.root)


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    raw = json.loads(path.read_text())
    if raw.get("format") != MANIFEST_FORMAT:
        raise ValidationError(f"{path} is not a dataset manifest")
    manifest = DatasetManifest(
        entries=[ManifestEntry(**e) for e in raw["entries"]],
        split=raw["split"],
        normalization=NormalizationSpec.from_dict(raw["normalization"]),
        root=path.parent,
    )
    if check_files:
        for e in manifest.entries:
            for role in e.files:
                if not manifest.path(e, role).is_file():
                    raise ValidationError(f"{e.patch_id}: missing {role} file {manifest.path(e, role)}")
    return manifest


class DatasetWriter:
    """Single-writer accumulation of patches into one split directory."""

    def __init__(self, out_dir, split="train", normalization=NormalizationSpec()):
        self.out_dir = Path(out_dir)
        self.manifest = DatasetManifest([], split, normalization, self.out_dir)

    def add(self, patch_id: str, scene_id: str, rasters: dict, tile_row=0, tile_col=0,
            normalization: NormalizationSpec | None = None):
        files = {}
        for role, raster in rasters.items():
            if raster is None:
                continue
            rel = f"{role}/{patch_id}.tensor"
            tensorio.save_tensor(self.out_dir / rel, raster.data.astype(np.float32))
            files[role] = rel
        norm = None if normalization is None else normalization.to_dict()
        self.manifest.entries.append(
            ManifestEntry(patch_id, scene_id, files, tile_row, tile_col, norm))

    def close(self) -> Path:
        self.manifest.__post_init__()
        return self.manifest.save(self.out_dir / "manifest.json")


def read_array(path) -> np.ndarray:
    """Load an ``H x W [x C]`` array from a canonical tensor, ``.npy`` or TIFF file."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".tensor":
        arr = tensorio.load_tensor(path)
    elif suffix == ".npy":
        arr = np.load(path)
    elif suffix in (".tif", ".tiff"):
        from PIL import Image, ImageSequence

        with Image.open(path) as im:
            frames = [np.array(f, dtype=np.float64) for f in ImageSequence.Iterator(im)]
        arr = frames[0] if len(frames) == 1 else np.stack(frames, axis=2)
    else:
        raise ValidationError(f"unsupported raster file type {path.suffix!r}")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def load_raster(path, value_range=ValueRange.UNIT_SIGNED, band_names=()) -> Raster:
    return Raster(read_array(path).astype(np.float64), value_range, band_names)


def _scene_files(directory):
    return {p.stem: p for p in sorted(Path(directory).iterdir())
            if p.suffix.lower() in SCENE_SUFFIXES}


def prepare_scenes(ms_dir, pan_dir, out_dir, stride: int = 256, bit_depth: int = 12,
                   mode: str = "fixed_bit_depth", split: str = "train") -> Path:
    """Pair scenes by file stem, normalize, tile and write the canonical dataset."""
    ms_files, pan_files = _scene_files(ms_dir), _scene_files(pan_dir)
    stems = sorted(set(ms_files) & set(pan_files))
    if not stems:
        raise ValidationError(f"no scene pairs with matching names in {ms_dir} and {pan_dir}")
    for stem in sorted(set(ms_files) ^ set(pan_files)):
        log.warning("scene %s has no counterpart, skipped", stem)

    fixed = NormalizationSpec(bit_depth, mode) if mode == "fixed_bit_depth" else None
    writer = DatasetWriter(out_dir, split, fixed or NormalizationSpec(bit_depth, mode))
    for stem in stems:
        ms = load_raster(ms_files[stem], ValueRange.RAW_DN, ("B", "G", "R", "NIR"))
        pan = load_raster(pan_files[stem], ValueRange.RAW_DN, ("PAN",))
        if fixed is None:
            # per-scene bounds shared by both sensors of the pair
            both = Raster(np.concatenate([ms.data.ravel(), pan.data.ravel()])[:, None, None],
                          ValueRange.RAW_DN)
            spec = fit_minmax(both, bit_depth)
        else:
            spec = fixed
        ms_n, pan_n = normalize(ms, spec), normalize(pan, spec)
        tiles = tile_scene(ms_n, pan_n, stride)
        log.info("scene %s: %d tiles", stem, len(tiles))
        for t in tiles:
            writer.add(f"{stem}_r{t.row:05d}_c{t.col:05d}", stem,
                       {"y_ms": t.y_ms, "y_pan": t.y_pan}, t.row, t.col,
                       None if fixed is not None else spec)
    return writer.close()


class PatchSource:
    """Loads manifest entries and turns them into :class:`PatchBundle` objects.

    Bundles depend only on ``(seed, epoch, patch_id)``, so any worker can
    build any sample and the result is reproducible.
    """

    def __init__(self, manifest: DatasetManifest, load_pan: bool = False, cache: bool = True,
                 resample: ResampleSpec = ResampleSpec()):
        self.manifest = manifest
        self.load_pan = load_pan
        self.resample = resample
        self._cache = {} if cache else None
        if load_pan and not manifest.has_role("y_pan"):
            raise ValidationError("manifest entries lack y_pan files")

    def __len__(self):
        return len(self.manifest)

    def rasters(self, i):
        if self._cache is not None and i in self._cache:
            return self._cache[i]
        e = self.manifest.entries[i]
        y_ms = load_raster(self.manifest.path(e, "y_ms"), band_names=("B", "G", "R", "NIR"))
        y_pan = load_raster(self.manifest.path(e, "y_pan"), band_names=("PAN",)) if self.load_pan else None
        if self._cache is not None:
            self._cache[i] = (y_ms, y_pan)
        return y_ms, y_pan

    def bundle(self, i: int, spec: AugmentSpec = AugmentSpec(), epoch: int = 0) -> PatchBundle:
        e = self.manifest.entries[i]
        y_ms, y_pan = self.rasters(i)
        meta = PatchMeta(e.scene_id, e.tile_row, e.tile_col, patch_id=e.patch_id)
        return make_bundle(y_ms, y_pan, spec, patch_rng(spec.rng_seed, e.patch_id, epoch),
                           meta, self.resample)


def synthetic_scene(rng: np.random.Generator, ms_size: int = 64, n_blobs: int = 12,
                    blur_sigma: float = 2.0):
    """Smooth random 4-band scene and a matching sharper 4x PAN, both in ``[-1, 1]``.

    Used for smoke tests and demos; not a physical sensor model.
    """
    from .raster import blur_array, resize_array

    big = PAN_RATIO * ms_size
    yy, xx = np.mgrid[0:big, 0:big] / big
    base = np.zeros((big, big))
    colors = np.zeros((big, big, 4))
    for _ in range(n_blobs):
        cy, cx, r = rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.08, 0.3)
        mask = ((yy - cy) ** 2 + (xx - cx) ** 2 < r * r).astype(float)
        base += mask * rng.uniform(-0.4, 0.4)
        colors += mask[:, :, None] * rng.uniform(-0.3, 0.3, size=4)
    spectral = np.array([0.9, 1.0, 1.05, 1.2])
    scene = 0.5 * np.tanh(base[:, :, None] * spectral + colors)
    pan = scene.mean(axis=2, keepdims=True)
    ms = resize_array(blur_array(scene, 9, blur_sigma), ms_size, ms_size)
    return (Raster(np.clip(ms, -1, 1), band_names=("B", "G", "R", "NIR")),
            Raster(np.clip(pan, -1, 1), band_names=("PAN",)))

