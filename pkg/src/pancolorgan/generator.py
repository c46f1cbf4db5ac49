"""Colorization generator.

Four parts:

* guidance branch: 3x3 convolutions over the grayscale (or PAN) image; the first
  stage keeps full resolution, later stages downsample with stride 2;
* colour branch: the same stage layout over the upsampled MS image, whose
  features are concatenated onto the guidance features after every guidance
  stage except the first;
* residual bottleneck;
* decoder: nearest x2 upsampling + 3x3 convolution per stage, concatenating the
  matching guidance-branch features, then a 3x3 projection and ``tanh``.

Every convolution except the output projection is followed by batch
normalization and LeakyReLU(0.2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ValidationError
from .layers import as_batch, conv_bn_act, init_weights, receptive_field, to_rasters


@dataclass(frozen=True)
class GeneratorConfig:
    base_channels: int = 32
    encoder_depth: int = 4
    injection_points: tuple | None = None  # None means stages 2..encoder_depth
    residual_blocks: int = 1
    in_ms_bands: int = 4
    guidance_bands: int = 1
    norm: str = "batch"
    activation: str = "leaky_relu"

    def __post_init__(self):
        if self.base_channels < 1 or self.encoder_depth < 1 or self.residual_blocks < 1:
            raise ConfigError("base_channels, encoder_depth and residual_blocks must be >= 1")
        if self.injection_points is None:
            object.__setattr__(self, "injection_points", tuple(range(2, self.encoder_depth + 1)))
        pts = tuple(sorted(self.injection_points))
        if any(p < 2 or p > self.encoder_depth for p in pts) or len(set(pts)) != len(pts):
            raise ConfigError(f"injection_points must be distinct stages in 2..{self.encoder_depth}")
        object.__setattr__(self, "injection_points", pts)
        if self.norm != "batch" or self.activation != "leaky_relu":
            raise ConfigError("only batch normalization with LeakyReLU(0.2) is supported")

    def width(self, stage: int) -> int:
        return self.base_channels * 2 ** (stage - 1)

    def stage_channels(self, stage: int) -> int:
        """Channels after a guidance stage, including injected colour features."""
        w = self.width(stage)
        return 2 * w if stage in self.injection_points else w

    @property
    def min_divisor(self) -> int:
        return 2 ** (self.encoder_depth - 1)

    def to_dict(self):
        d = dict(vars(self))
        d["injection_points"] = list(self.injection_points)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("injection_points") is not None:
            d["injection_points"] = tuple(d["injection_points"])
        return cls(**d)


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.body = nn.Sequential(conv_bn_act(channels, channels), conv_bn_act(channels, channels))

    def forward(self, x):
        return x + self.body(x)


class PanColorGenerator(nn.Module):
    def __init__(self, cfg: GeneratorConfig = GeneratorConfig()):
        super().__init__()
        self.cfg = cfg
        d = cfg.encoder_depth
        self.guide = nn.ModuleList()
        self.color = nn.ModuleList()
        cin_g, cin_c = cfg.guidance_bands, cfg.in_ms_bands
        for stage in range(1, d + 1):
            stride = 1 if stage == 1 else 2
            self.guide.append(conv_bn_act(cin_g, cfg.width(stage), stride=stride))
            self.color.append(conv_bn_act(cin_c, cfg.width(stage), stride=stride))
            cin_g, cin_c = cfg.stage_channels(stage), cfg.width(stage)
        bottleneck = cfg.stage_channels(d)
        self.bottleneck = nn.Sequential(*[ResidualBlock(bottleneck) for _ in range(cfg.residual_blocks)])
        self.decode = nn.ModuleList()
        cin = bottleneck
        for stage in range(d - 1, 0, -1):
            self.decode.append(conv_bn_act(cin, cfg.width(stage)))
            cin = cfg.width(stage) + cfg.stage_channels(stage)
        self.out = nn.Conv2d(cin, cfg.in_ms_bands, 3, 1, 1)

    def forward(self, guidance: torch.Tensor, ms_up: torch.Tensor) -> torch.Tensor:
        skips = []
        g, c = guidance, ms_up
        for stage, (gconv, cconv) in enumerate(zip(self.guide, self.color), start=1):
            g = gconv(g)
            c = cconv(c)
            if stage in self.cfg.injection_points:
                g = torch.cat([g, c], dim=1)
            skips.append(g)
        h = self.bottleneck(skips.pop())
        for conv in self.decode:
            h = conv(F.interpolate(h, scale_factor=2, mode="nearest"))
            h = torch.cat([h, skips.pop()], dim=1)
        return torch.tanh(self.out(h))


def build_generator(cfg: GeneratorConfig = GeneratorConfig(), init_seed: int = 0) -> PanColorGenerator:
    model = PanColorGenerator(cfg)
    init_weights(model, init_seed)
    return model


def check_generator_inputs(model: PanColorGenerator, guidance: torch.Tensor, ms_up: torch.Tensor,
                           training: bool) -> None:
    cfg = model.cfg
    if guidance.ndim != 4 or ms_up.ndim != 4:
        raise ValidationError("generator inputs must be N x C x H x W")
    if guidance.shape[1] != cfg.guidance_bands or ms_up.shape[1] != cfg.in_ms_bands:
        raise ValidationError(
            f"expected {cfg.guidance_bands}-band guidance and {cfg.in_ms_bands}-band MS, "
            f"got {guidance.shape[1]} and {ms_up.shape[1]}")
    if guidance.shape[0] != ms_up.shape[0] or guidance.shape[2:] != ms_up.shape[2:]:
        raise ValidationError(f"guidance {tuple(guidance.shape)} and MS {tuple(ms_up.shape)} disagree")
    h, w = guidance.shape[2:]
    if h % cfg.min_divisor or w % cfg.min_divisor:
        raise ValidationError(f"spatial size {h}x{w} not divisible by {cfg.min_divisor}")
    if not (torch.isfinite(guidance).all() and torch.isfinite(ms_up).all()):
        raise ValidationError("generator inputs contain non-finite values")
    if training and guidance.shape[0] < 2:
        raise ValidationError("batch normalization in train mode needs a batch of at least 2")


def generator_forward(model: PanColorGenerator, guidance, ms_up, mode: str = "eval"):
    """Run the generator on tensors, rasters or lists of rasters.

    Tensor inputs return a tensor; raster inputs return a list of rasters.
    ``mode="eval"`` uses running normalization statistics and no autograd.
    """
    if mode not in ("train", "eval"):
        raise ValidationError(f"mode must be 'train' or 'eval', got {mode!r}")
    raster_io = not isinstance(guidance, torch.Tensor)
    dtype = next(model.parameters()).dtype
    g, m = as_batch(guidance, dtype), as_batch(ms_up, dtype)
    training = mode == "train"
    check_generator_inputs(model, g, m, training)
    model.train(training)
    with torch.set_grad_enabled(training):
        out = model(g, m)
    if raster_io:
        return to_rasters(out, ("B", "G", "R", "NIR"))
    return out


def count_receptive_field(cfg: GeneratorConfig) -> int:
    """Receptive field of one encoder-output pixel with respect to the guidance input.

    Covers the guidance branch up to the bottleneck input; the residual blocks
    are not included.
    """
    layers = [(3, 1)] + [(3, 2)] * (cfg.encoder_depth - 1)
    return receptive_field(layers)
