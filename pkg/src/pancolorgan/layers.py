"""Building blocks shared by the generator and discriminator."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .raster import Raster, ValueRange

LEAK = 0.2
INIT_STD = 0.02


def conv_bn_act(cin, cout, kernel=3, stride=1, padding=1, norm=True):
    layers = [nn.Conv2d(cin, cout, kernel, stride, padding, bias=not norm)]
    if norm:
        layers.append(nn.BatchNorm2d(cout, momentum=0.1))
    layers.append(nn.LeakyReLU(LEAK))
    return nn.Sequential(*layers)


def init_weights(module: nn.Module, seed: int) -> None:
    """DCGAN-style init: conv weights ~ N(0, 0.02), norm scale 1 and offset 0, biases 0."""
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * INIT_STD)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def receptive_field(layers) -> int:
    """Receptive field of a chain of ``(kernel, stride)`` layers."""
    rf, jump = 1, 1
    for kernel, stride in layers:
        rf += (kernel - 1) * jump
        jump *= stride
    return rf


def as_batch(x, dtype=torch.float32) -> torch.Tensor:
    """Raster, ``H x W x C`` array or list of them -> ``N x C x H x W`` tensor."""
    if isinstance(x, torch.Tensor):
        return x if x.ndim == 4 else x.unsqueeze(0)
    if isinstance(x, (list, tuple)):
        return torch.cat([as_batch(item, dtype) for item in x])
    arr = x.data if isinstance(x, Raster) else np.asarray(x)
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))).to(dtype).unsqueeze(0)


def to_rasters(t: torch.Tensor, band_names=()) -> list[Raster]:
    arr = t.detach().cpu().numpy().transpose(0, 2, 3, 1)
    return [Raster(a, ValueRange.UNIT_SIGNED, band_names) for a in arr]


def state_hash(module: nn.Module) -> str:
    import hashlib

    h = hashlib.sha256()
    for name, t in module.state_dict().items():
        h.update(name.encode())
        h.update(t.detach().cpu().numpy().tobytes())
    return h.hexdigest()
