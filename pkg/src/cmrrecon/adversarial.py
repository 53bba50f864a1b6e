"""Patch discriminator and the BCE wiring with the inverted labels (real = 0, fake = 1)."""
from __future__ import annotations

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, model_validator
from torch import nn

from .errors import ValidationError

LABEL_REAL = 0.0
LABEL_FAKE = 1.0


class DiscriminatorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    layers: int = 4
    base_channels: int = 64
    kernel: int = 4
    stride: int = 2
    max_channels: int = 512
    negative_slope: float = 0.2
    in_channels: int = 2

    @model_validator(mode="after")
    def _check(self):
        if self.layers < 1 or self.base_channels < 1:
            raise ValueError("layers and base_channels must be >= 1")
        if self.kernel < 1 or self.stride < 1:
            raise ValueError("kernel and stride must be >= 1")
        return self

    @classmethod
    def tiny(cls, **kw) -> "DiscriminatorConfig":
        return cls(**{"layers": 3, "base_channels": 8, **kw})


class PatchDiscriminator(nn.Module):
    """Strided conv stack ending in a 1-channel logit map (one logit per patch).

    The first block has no normalisation; the rest use instance norm. The head
    is a stride-1 conv, so the output keeps a spatial extent.
    """

    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig()):
        super().__init__()
        self.cfg = cfg
        pad = (cfg.kernel - 1) // 2
        layers = []
        cin = cfg.in_channels
        for i in range(cfg.layers):
            cout = min(cfg.base_channels * 2 ** i, cfg.max_channels)
            layers.append(nn.Conv2d(cin, cout, cfg.kernel, stride=cfg.stride, padding=pad, bias=i == 0))
            if i > 0:
                layers.append(nn.InstanceNorm2d(cout, affine=True))
            layers.append(nn.LeakyReLU(cfg.negative_slope))
            cin = cout
        self.body = nn.Sequential(*layers)
        self.head = nn.Conv2d(cin, 1, cfg.kernel, stride=1, padding=pad)

    def output_size(self, size: int) -> int:
        pad = (self.cfg.kernel - 1) // 2
        for _ in range(self.cfg.layers):
            size = (size + 2 * pad - self.cfg.kernel) // self.cfg.stride + 1
        return size + 2 * pad - self.cfg.kernel + 1

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 3:
            x = x.unsqueeze(0)
        if x.shape[1] != self.cfg.in_channels:
            raise ValidationError(f"discriminator expects {self.cfg.in_channels} channels, got {x.shape[1]}")
        h, w = x.shape[-2:]
        if self.output_size(h) < 1 or self.output_size(w) < 1:
            raise ValidationError(f"input {h}x{w} is smaller than the discriminator receptive field")
        return self.head(self.body(x))


def make_conditioned_input(candidate: torch.Tensor, zero_filled: torch.Tensor) -> torch.Tensor:
    """Stack ``[candidate, zero_filled]`` into a ``[2, H, W]`` input."""
    if candidate.shape != zero_filled.shape:
        raise ValidationError(f"shape mismatch {tuple(candidate.shape)} vs {tuple(zero_filled.shape)}")
    return torch.stack([candidate, zero_filled], dim=-3)


def bce_with_label(pred: torch.Tensor, label: float) -> torch.Tensor:
    return F.binary_cross_entropy_with_logits(pred, torch.full_like(pred, label))


def discriminator_loss(pred_real: torch.Tensor, pred_fake: torch.Tensor) -> torch.Tensor:
    return 0.5 * (bce_with_label(pred_real, LABEL_REAL) + bce_with_label(pred_fake, LABEL_FAKE))


def generator_adversarial_loss(pred_fake: torch.Tensor) -> torch.Tensor:
    """BCE of fake predictions against the real label."""
    return bce_with_label(pred_fake, LABEL_REAL)
