"""Reconstruction and adversarial objectives.

All adversarial terms take raw discriminator scores and go through
``logsigmoid`` so they stay finite for arbitrarily large scores. Expectations
run over the batch and over every position of the patch score map.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigError, ValidationError


class Adversarial(str, enum.Enum):
    RAGAN = "ragan"
    VANILLA = "vanilla"


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.005
    adversarial: Adversarial = Adversarial.RAGAN

    def __post_init__(self):
        object.__setattr__(self, "adversarial", Adversarial(self.adversarial))
        if not self.alpha >= 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")

    def to_dict(self):
        return {"alpha": self.alpha, "adversarial": self.adversarial.value}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _t(x):
    if isinstance(x, torch.Tensor):
        return x
    t = torch.as_tensor(x)
    return t if t.is_floating_point() else t.to(torch.float64)


def _nonempty(*tensors):
    for t in tensors:
        if t.numel() == 0:
            raise ValidationError("empty score batch")


def l1_reconstruction(pred, target) -> torch.Tensor:
    """Mean absolute error, normalized by element count."""
    pred, target = _t(pred), _t(target)
    if pred.shape != target.shape:
        raise ValidationError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    return (pred - target).abs().mean()


def ragan_pair_loss(scores_1, scores_2) -> torch.Tensor:
    """``-E log sig(C1 - E C2) - E log(1 - sig(C2 - E C1))``.

    Discriminator loss: ``ragan_pair_loss(real, fake)``; generator loss:
    ``ragan_pair_loss(fake, real)``.
    """
    s1, s2 = _t(scores_1), _t(scores_2)
    _nonempty(s1, s2)
    rel_1 = s1 - s2.mean()
    rel_2 = s2 - s1.mean()
    # log(1 - sig(x)) == logsigmoid(-x)
    return -F.logsigmoid(rel_1).mean() - F.logsigmoid(-rel_2).mean()


def vanilla_gan_losses(real_scores, fake_scores) -> dict:
    real, fake = _t(real_scores), _t(fake_scores)
    _nonempty(real, fake)
    return {
        "d_loss": -F.logsigmoid(real).mean() - F.logsigmoid(-fake).mean(),
        "g_loss": -F.logsigmoid(fake).mean(),
    }


def generator_adversarial(real_scores, fake_scores, cfg: LossConfig) -> torch.Tensor:
    if cfg.adversarial is Adversarial.RAGAN:
        return ragan_pair_loss(fake_scores, real_scores)
    return vanilla_gan_losses(real_scores, fake_scores)["g_loss"]


def generator_objective(l_rec, l_adv_g, cfg: LossConfig):
    return l_rec + cfg.alpha * l_adv_g


def discriminator_objective(real_scores, fake_scores, cfg: LossConfig) -> torch.Tensor:
    if cfg.adversarial is Adversarial.RAGAN:
        return ragan_pair_loss(real_scores, fake_scores)
    return vanilla_gan_losses(real_scores, fake_scores)["d_loss"]
