"""Conditional patch discriminator.

Five 4x4 stride-2 convolutions followed by a 4x4 stride-1 projection to one
channel. The network returns raw scores; the sigmoid belongs to the loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigError, ValidationError
from .layers import as_batch, conv_bn_act, init_weights


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 9
    widths: tuple = (64, 128, 256, 512, 512)
    kernel: int = 4
    stride: int = 2
    padding: int = 1
    final_kernel: int = 4
    final_padding: int = 1
    norm_first: bool = False

    def __post_init__(self):
        widths = tuple(self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) != 5:
            raise ConfigError(f"discriminator needs exactly 5 stage widths, got {len(widths)}")
        if any(b < a for a, b in zip(widths, widths[1:])):
            raise ConfigError(f"discriminator widths must be non-decreasing, got {widths}")

    def output_size(self, n: int) -> int:
        for _ in self.widths:
            n = (n + 2 * self.padding - self.kernel) // self.stride + 1
        return n + 2 * self.final_padding - self.final_kernel + 1

    def to_dict(self):
        d = dict(vars(self))
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class PatchDiscriminator(nn.Module):
    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig()):
        super().__init__()
        self.cfg = cfg
        stages = []
        cin = cfg.in_channels
        for i, w in enumerate(cfg.widths):
            norm = cfg.norm_first or i > 0
            stages.append(conv_bn_act(cin, w, cfg.kernel, cfg.stride, cfg.padding, norm=norm))
            cin = w
        self.features = nn.Sequential(*stages)
        self.project = nn.Conv2d(cin, 1, cfg.final_kernel, 1, cfg.final_padding)

    def forward(self, stack: torch.Tensor) -> torch.Tensor:
        return self.project(self.features(stack))


def build_discriminator(cfg: DiscriminatorConfig = DiscriminatorConfig(), init_seed: int = 0):
    model = PatchDiscriminator(cfg)
    init_weights(model, init_seed)
    return model


def condition_stack(guidance: torch.Tensor, ms_up: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Channel order ``[guidance | x_ms | target]``, matching the pipeline's stacks."""
    return torch.cat([guidance, ms_up, target], dim=1)


def discriminator_forward(model: PatchDiscriminator, stack, mode: str = "eval") -> torch.Tensor:
    """Score map ``N x 1 x h' x w'`` for tensors or ``H x W x 9`` arrays."""
    if mode not in ("train", "eval"):
        raise ValidationError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = as_batch(stack, next(model.parameters()).dtype)
    if x.ndim != 4 or x.shape[1] != model.cfg.in_channels:
        raise ValidationError(
            f"discriminator expects {model.cfg.in_channels} channels, got shape {tuple(x.shape)}")
    if model.cfg.output_size(min(x.shape[2:])) < 1:
        raise ValidationError(f"input {tuple(x.shape[2:])} too small for the discriminator")
    training = mode == "train"
    if training and x.shape[0] < 2:
        raise ValidationError("batch normalization in train mode needs a batch of at least 2")
    model.train(training)
    with torch.set_grad_enabled(training):
        return model(x)


@dataclass(frozen=True)
class ScoreStats:
    mean: float
    min: float
    max: float


def score_statistics(scores) -> ScoreStats:
    """Exact mean/min/max over every position of a score map (or batch of them)."""
    arr = scores.detach().cpu().numpy() if isinstance(scores, torch.Tensor) else np.asarray(scores)
    flat = arr.astype(np.float64).ravel()
    if flat.size == 0:
        raise ValidationError("empty score map")
    return ScoreStats(math.fsum(flat) / flat.size, float(flat.min()), float(flat.max()))
