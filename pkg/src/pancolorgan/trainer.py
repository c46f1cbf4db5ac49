"""Alternating discriminator/generator optimization.

Modes:

``pancolorgan``
    guidance = grayscale MS, fixed 4x degradation.
``pancolorgan_rd``
    as above with per-image random downsampling of the MS cue.
``pansrgan``
    super-resolution style baseline: guidance = 4x reduced PAN.

Each batch runs one generator forward, ``d_steps`` discriminator updates on
``[guidance | x_ms | y]`` stacks (generator output detached), then one
generator update with fresh discriminator scores.
"""

from __future__ import annotations

import collections
import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import tensorio
from .dataset import DatasetManifest, PatchSource
from .discriminator import DiscriminatorConfig, PatchDiscriminator, build_discriminator, condition_stack
from .errors import BundleError, ConfigError, TrainingDivergenceError, ValidationError
from .generator import GeneratorConfig, PanColorGenerator, build_generator
from .inference import infer_reduced
from .losses import (LossConfig, discriminator_objective, generator_adversarial, generator_objective,
                     l1_reconstruction)
from .metrics import qave, to_unit
from .pipeline import AugmentMode, AugmentSpec, PatchBundle

log = logging.getLogger(__name__)

HISTORY_LEN = 1000


class Mode(str, enum.Enum):
    PANCOLORGAN = "pancolorgan"
    PANCOLORGAN_RD = "pancolorgan_rd"
    PANSRGAN = "pansrgan"


@dataclass
class TrainConfig:
    mode: Mode = Mode.PANCOLORGAN
    batch_size: int = 16
    lr: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    weight_decay: float = 0.0
    epochs: int = 100
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentSpec | None = None  # derived from mode when None
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    d_steps: int = 1
    max_steps: int | None = None
    eval_count: int = 0

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if self.augment is None:
            rd = self.mode is Mode.PANCOLORGAN_RD
            self.augment = AugmentSpec(AugmentMode.RANDOM_DOWNSAMPLE if rd else AugmentMode.FIXED_RATIO,
                                       rng_seed=self.seed)
        if (self.mode is Mode.PANCOLORGAN_RD) != (self.augment.mode is AugmentMode.RANDOM_DOWNSAMPLE):
            raise ConfigError("random downsampling is used exactly when mode is pancolorgan_rd")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 for batch normalization")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1 or self.d_steps < 1:
            raise ConfigError("epochs and d_steps must be >= 1")

    @property
    def guidance(self) -> str:
        return "pan" if self.mode is Mode.PANSRGAN else "gms"

    def to_dict(self):
        return {
            "mode": self.mode.value, "batch_size": self.batch_size, "lr": self.lr,
            "beta1": self.beta1, "beta2": self.beta2, "weight_decay": self.weight_decay,
            "epochs": self.epochs, "seed": self.seed, "loss": self.loss.to_dict(),
            "augment": self.augment.to_dict(), "generator": self.generator.to_dict(),
            "discriminator": self.discriminator.to_dict(), "d_steps": self.d_steps,
            "max_steps": self.max_steps, "eval_count": self.eval_count,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["loss"] = LossConfig.from_dict(d.get("loss", {}))
        if d.get("augment") is not None:
            d["augment"] = AugmentSpec.from_dict(d["augment"])
        d["generator"] = GeneratorConfig.from_dict(d.get("generator", {}))
        d["discriminator"] = DiscriminatorConfig.from_dict(d.get("discriminator", {}))
        return cls(**d)


@dataclass
class TrainState:
    generator: PanColorGenerator
    discriminator: PatchDiscriminator
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    epoch: int = 0          # completed epochs
    next_batch: int = 0     # position inside the current epoch
    step: int = 0
    history: collections.deque = field(default_factory=lambda: collections.deque(maxlen=HISTORY_LEN))
    evals: list = field(default_factory=list)
    # instrumentation: raster roles handed to the networks
    role_reads: collections.Counter = field(default_factory=collections.Counter)


def _adam(params, cfg: TrainConfig):
    return torch.optim.Adam(params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2),
                            weight_decay=cfg.weight_decay)


def init_state(cfg: TrainConfig) -> TrainState:
    g = build_generator(cfg.generator, cfg.seed)
    d = build_discriminator(cfg.discriminator, cfg.seed + 1)
    return TrainState(g, d, _adam(g.parameters(), cfg), _adam(d.parameters(), cfg))


def collate(bundles, role: str, counter=None) -> torch.Tensor:
    if counter is not None:
        counter[role] += len(bundles)
    arrays = []
    for b in bundles:
        r = getattr(b, role)
        if r is None:
            raise BundleError(f"bundle {b.meta.patch_id or '?'} has no {role}")
        arrays.append(r.data.transpose(2, 0, 1))
    return torch.from_numpy(np.ascontiguousarray(np.stack(arrays), dtype=np.float32))


def _check_finite(value: torch.Tensor, step: int, what: str):
    if not torch.isfinite(value).all():
        raise TrainingDivergenceError(step, what)


def train_step(state: TrainState, bundles: list[PatchBundle], cfg: TrainConfig) -> dict:
    """One D update followed by one G update; mutates ``state`` and returns loss scalars."""
    if len(bundles) < 2:
        raise ValidationError("a training batch needs at least 2 samples")
    role = "x_pan" if cfg.mode is Mode.PANSRGAN else "x_gms"
    guide = collate(bundles, role, state.role_reads)
    x_ms = collate(bundles, "x_ms", state.role_reads)
    y_ms = collate(bundles, "y_ms", state.role_reads)
    G, D = state.generator, state.discriminator
    G.train()
    D.train()

    fake = G(guide, x_ms)

    for _ in range(cfg.d_steps):
        real_scores = D(condition_stack(guide, x_ms, y_ms))
        fake_scores = D(condition_stack(guide, x_ms, fake.detach()))
        d_loss = discriminator_objective(real_scores, fake_scores, cfg.loss)
        _check_finite(d_loss, state.step, "discriminator loss")
        state.opt_d.zero_grad(set_to_none=True)
        d_loss.backward()
        state.opt_d.step()

    fake_scores = D(condition_stack(guide, x_ms, fake))
    real_scores = D(condition_stack(guide, x_ms, y_ms)).detach()
    l_rec = l1_reconstruction(fake, y_ms)
    l_adv = generator_adversarial(real_scores, fake_scores, cfg.loss)
    g_loss = generator_objective(l_rec, l_adv, cfg.loss)
    _check_finite(g_loss, state.step, "generator loss")
    state.opt_g.zero_grad(set_to_none=True)
    g_loss.backward(inputs=list(G.parameters()))
    state.opt_g.step()

    state.step += 1
    record = {"step": state.step, "d_loss": d_loss.item(), "g_loss": g_loss.item(),
              "l_rec": l_rec.item(), "l_adv": l_adv.item()}
    state.history.append(record)
    return record


def epoch_order(seed: int, epoch: int, indices) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(np.asarray(indices))


def split_holdout(n: int, eval_count: int, seed: int):
    """Deterministic (train, held-out) index split."""
    if eval_count >= n:
        raise ValidationError(f"eval_count {eval_count} leaves no training samples out of {n}")
    perm = np.random.default_rng([seed, 0x5EED]).permutation(n)
    return sorted(perm[eval_count:].tolist()), sorted(perm[:eval_count].tolist())


def evaluate_holdout(model: PanColorGenerator, bundles) -> float:
    """Mean QAVE of GMS-guided reduced-resolution outputs against ``y_ms``."""
    scores = []
    for b in bundles:
        pred = infer_reduced(model, b, "gms")
        window = min(32, b.y_ms.height)
        scores.append(qave(to_unit(pred.data), to_unit(b.y_ms.data), window))
    return float(np.mean(scores))


def select_checkpoint(history) -> int:
    """Best held-out QAVE among the last quarter of epochs; ties go to the later epoch.

    ``history`` holds ``{"epoch": int, "qave": float}`` records.
    """
    if not history:
        raise ValidationError("no evaluated checkpoints")
    last = max(h["epoch"] for h in history)
    recent = [h for h in history if h["epoch"] > 0.75 * last]
    best = max(recent, key=lambda h: (h["qave"], h["epoch"]))
    return best["epoch"]


# -- checkpoints ---------------------------------------------------------------

def _optimizer_tensors(opt, prefix):
    sd = opt.state_dict()
    tensors = {}
    for idx, st in sd["state"].items():
        for k, v in st.items():
            tensors[f"{prefix}.{idx}.{k}"] = v.detach().cpu().numpy()
    groups = [{k: (list(v) if isinstance(v, tuple) else v) for k, v in g.items()}
              for g in sd["param_groups"]]
    return tensors, groups


def _restore_optimizer(opt, tensors, groups, prefix):
    state = collections.defaultdict(dict)
    for name, arr in tensors.items():
        p, idx, k = name.split(".", 2)
        if p == prefix:
            state[int(idx)][k] = torch.from_numpy(arr.copy())
    for g in groups:
        if "betas" in g:
            g["betas"] = tuple(g["betas"])
    opt.load_state_dict({"state": dict(state), "param_groups": groups})


def _module_tensors(module):
    return {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def _restore_module(module, tensors):
    module.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in tensors.items()})


def save_checkpoint(state: TrainState, cfg: TrainConfig, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    common = {"epoch": state.epoch, "step": state.step, "seed": cfg.seed}
    tensorio.save_container(directory / "generator.ckpt",
                            {**common, "kind": "generator", "config": cfg.generator.to_dict()},
                            _module_tensors(state.generator))
    tensorio.save_container(directory / "discriminator.ckpt",
                            {**common, "kind": "discriminator", "config": cfg.discriminator.to_dict()},
                            _module_tensors(state.discriminator))
    g_t, g_groups = _optimizer_tensors(state.opt_g, "g")
    d_t, d_groups = _optimizer_tensors(state.opt_d, "d")
    tensorio.save_container(directory / "optimizer.ckpt",
                            {**common, "kind": "optimizer", "g_groups": g_groups, "d_groups": d_groups},
                            {**g_t, **d_t})
    meta = {**common, "next_batch": state.next_batch, "train_config": cfg.to_dict(),
            "evals": state.evals, "history": list(state.history)}
    (directory / "meta.json").write_text(json.dumps(meta, indent=1))
    return directory


def load_checkpoint(directory, cfg: TrainConfig | None = None):
    """Rebuild ``(state, cfg)`` from a checkpoint directory."""
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    if cfg is None:
        cfg = TrainConfig.from_dict(meta["train_config"])
    state = init_state(cfg)
    _, g_tensors = tensorio.load_container(directory / "generator.ckpt")
    _, d_tensors = tensorio.load_container(directory / "discriminator.ckpt")
    opt_meta, opt_tensors = tensorio.load_container(directory / "optimizer.ckpt")
    _restore_module(state.generator, g_tensors)
    _restore_module(state.discriminator, d_tensors)
    _restore_optimizer(state.opt_g, opt_tensors, opt_meta["g_groups"], "g")
    _restore_optimizer(state.opt_d, opt_tensors, opt_meta["d_groups"], "d")
    state.epoch, state.step, state.next_batch = meta["epoch"], meta["step"], meta["next_batch"]
    state.evals = meta["evals"]
    state.history.extend(meta["history"])
    return state, cfg


def load_generator(path) -> PanColorGenerator:
    """Generator from a checkpoint directory or a ``generator.ckpt`` container."""
    path = Path(path)
    if path.is_dir():
        path = path / "generator.ckpt"
    meta, tensors = tensorio.load_container(path)
    model = PanColorGenerator(GeneratorConfig.from_dict(meta["config"]))
    _restore_module(model, tensors)
    model.eval()
    return model


def checkpoint_name(epoch: int) -> str:
    return f"ckpt_{epoch:04d}"


# -- loop ----------------------------------------------------------------------

class _JsonlSink:
    def __init__(self, path, extra=None):
        self.fh = open(path, "a")
        self.extra = extra

    def __call__(self, record):
        self.fh.write(json.dumps(record) + "\n")
        self.fh.flush()
        if self.extra is not None:
            self.extra(record)

    def close(self):
        self.fh.close()


def _check_patch_size(source: PatchSource, cfg: TrainConfig) -> None:
    size = source.rasters(0)[0].height
    if size % cfg.generator.min_divisor:
        raise ValidationError(f"patch size {size} is not divisible by {cfg.generator.min_divisor}")
    if cfg.discriminator.output_size(size) < 1:
        raise ValidationError(f"patch size {size} is too small for the discriminator")


def train_loop(cfg: TrainConfig, manifest: DatasetManifest, out_dir, sink=None,
               resume_from=None, state: TrainState | None = None) -> TrainState:
    """Train for ``cfg.epochs`` epochs (or ``cfg.max_steps`` steps).

    Writes ``ckpt_{epoch:04d}/`` after every epoch and appends one JSON line per
    step to ``train_log.jsonl``; ``sink`` additionally receives every record.
    """
    if manifest.split != "train":
        raise ValidationError(f"training needs a train split manifest, got {manifest.split!r}")
    if len(manifest) == 0:
        raise ValidationError("training manifest is empty")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ValidationError(f"checkpoint directory {out_dir} is not writable: {exc}") from exc

    if resume_from is not None:
        state, _ = load_checkpoint(resume_from, cfg)
    elif state is None:
        state = init_state(cfg)

    source = PatchSource(manifest, load_pan=cfg.mode is Mode.PANSRGAN)
    train_idx, eval_idx = split_holdout(len(manifest), cfg.eval_count, cfg.seed)
    steps_per_epoch = len(train_idx) // cfg.batch_size
    if steps_per_epoch == 0:
        raise ValidationError(
            f"{len(train_idx)} training samples do not fill one batch of {cfg.batch_size}")
    _check_patch_size(source, cfg)
    fixed = AugmentSpec(AugmentMode.FIXED_RATIO, cfg.augment.fixed_factor, rng_seed=cfg.seed)
    eval_bundles = [source.bundle(i, fixed) for i in eval_idx]

    log_sink = _JsonlSink(out_dir / "train_log.jsonl", sink)
    try:
        while state.epoch < cfg.epochs:
            order = epoch_order(cfg.seed, state.epoch, train_idx)
            for b in range(state.next_batch, steps_per_epoch):
                if cfg.max_steps is not None and state.step >= cfg.max_steps:
                    save_checkpoint(state, cfg, out_dir / f"ckpt_step{state.step:07d}")
                    return state
                batch = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                bundles = [source.bundle(int(i), cfg.augment, state.epoch) for i in batch]
                record = train_step(state, bundles, cfg)
                state.next_batch = b + 1
                log_sink({"epoch": state.epoch, **record})
            state.epoch += 1
            state.next_batch = 0
            if eval_bundles:
                score = evaluate_holdout(state.generator, eval_bundles)
                state.evals.append({"epoch": state.epoch, "qave": score,
                                    "checkpoint": checkpoint_name(state.epoch)})
                log.info("epoch %d held-out QAVE %.4f", state.epoch, score)
            save_checkpoint(state, cfg, out_dir / checkpoint_name(state.epoch))
    finally:
        log_sink.close()
    return state


def is_finite_history(state: TrainState) -> bool:
    return all(math.isfinite(v) for r in state.history for k, v in r.items() if k != "step")
