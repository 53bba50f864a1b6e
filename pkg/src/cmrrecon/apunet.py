"""Attention-based prompt UNet: channel-attention UNet with a prompt block per level."""
from __future__ import annotations

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, model_validator
from torch import nn

from .errors import ValidationError


class PromptConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    components: int = 5
    size: int = 8
    in_encoder: bool = False
    seed: int = 0


class APUNetConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    levels: int = 4
    base_channels: int = 32
    channel_mult: tuple[int, ...] = (1, 2, 4, 8)
    in_channels: int = 10
    out_channels: int = 10
    attention_reduction: int = 8
    use_attention: bool = True
    residual: bool = True
    pad_input: bool = True
    out_init_scale: float = 1.0
    prompt: PromptConfig = PromptConfig()

    @model_validator(mode="after")
    def _check(self):
        if self.levels < 2:
            raise ValueError("levels must be >= 2")
        if len(self.channel_mult) != self.levels:
            raise ValueError(f"channel_mult needs {self.levels} entries, got {len(self.channel_mult)}")
        for ch in self.channels:
            if ch % self.attention_reduction:
                raise ValueError(f"channels {ch} not divisible by attention_reduction {self.attention_reduction}")
        if self.residual and self.in_channels != self.out_channels:
            raise ValueError("residual output requires in_channels == out_channels")
        return self

    @property
    def channels(self) -> list[int]:
        return [self.base_channels * m for m in self.channel_mult]

    @classmethod
    def tiny(cls, in_channels: int = 2, out_channels: int | None = None, **kw) -> "APUNetConfig":
        defaults = dict(levels=2, base_channels=8, channel_mult=(1, 2), attention_reduction=4,
                        prompt=PromptConfig(components=3, size=4))
        defaults.update(kw)
        return cls(in_channels=in_channels,
                   out_channels=in_channels if out_channels is None else out_channels, **defaults)


def conv3x3(cin: int, cout: int, bias: bool = False, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=bias)


class ChannelAttention(nn.Module):
    """Squeeze-excitation gate. Only the expanding layer has a bias, so a zero input gives
    gates of exactly ``sigmoid(bias)``."""

    def __init__(self, channels: int, reduction: int):
        super().__init__()
        self.squeeze = nn.Conv2d(channels, channels // reduction, 1, bias=False)
        self.excite = nn.Conv2d(channels // reduction, channels, 1, bias=True)

    def gates(self, x: torch.Tensor) -> torch.Tensor:
        y = x.mean(dim=(-2, -1), keepdim=True)
        return torch.sigmoid(self.excite(F.gelu(self.squeeze(y))))

    def forward(self, x):
        return x * self.gates(x)


class ChannelAttentionBlock(nn.Module):
    """conv-GELU-conv, channel attention, then a residual add."""

    def __init__(self, channels: int, reduction: int, use_attention: bool = True):
        super().__init__()
        self.body = nn.Sequential(conv3x3(channels, channels), nn.GELU(), conv3x3(channels, channels))
        self.attn = ChannelAttention(channels, reduction) if use_attention else nn.Identity()

    def forward(self, x):
        return x + self.attn(self.body(x))


class PromptBlock(nn.Module):
    """Discriminative prompt block.

    Pools the features, turns them into softmax weights over a bank of spatial
    prompt components, resizes the weighted prompt to the feature size,
    concatenates it to the features and fuses back with a 3x3 convolution.
    """

    def __init__(self, channels: int, components: int, size: int, generator: torch.Generator | None = None):
        super().__init__()
        self.bank = nn.Parameter(torch.rand(components, channels, size, size, generator=generator))
        self.linear = nn.Linear(channels, components)
        self.fuse = conv3x3(2 * channels, channels)

    def weights(self, x: torch.Tensor) -> torch.Tensor:
        return F.softmax(self.linear(x.mean(dim=(-2, -1))), dim=-1)

    def forward(self, x):
        h, w = x.shape[-2:]
        if h < 2 or w < 2:
            raise ValidationError(f"prompt block needs at least 2x2 features, got {h}x{w}")
        wts = self.weights(x)  # [B, N]
        prompt = torch.einsum("bn,nchw->bchw", wts, self.bank)
        prompt = F.interpolate(prompt, size=(h, w), mode="bilinear", align_corners=False)
        return self.fuse(torch.cat([x, prompt], dim=1))


class Upsample(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.proj = nn.Conv2d(cin, cout, 1, bias=False)

    def forward(self, x):
        return self.proj(F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False))


class Level(nn.Module):
    def __init__(self, i: int, cfg: APUNetConfig, generator: torch.Generator | None):
        super().__init__()
        ch = cfg.channels
        last = i == cfg.levels - 1
        p = cfg.prompt
        self.enc = ChannelAttentionBlock(ch[i], cfg.attention_reduction, cfg.use_attention)
        if p.in_encoder:
            self.enc_prompt = PromptBlock(ch[i], p.components, p.size, generator)
        if not last:
            self.down = conv3x3(ch[i], ch[i + 1], bias=True, stride=2)
            self.dec = ChannelAttentionBlock(ch[i], cfg.attention_reduction, cfg.use_attention)
        if i > 0:
            self.up = Upsample(ch[i], ch[i - 1])
        self.prompt = PromptBlock(ch[i], p.components, p.size, generator)


class APUNet(nn.Module):
    """Encoder-decoder with skip connections and a prompt block at each decoder level.

    Input and output are real ``[B, C, H, W]``. Spatial sizes that are not a
    multiple of ``2**(levels-1)`` are reflect-padded and cropped back when
    ``pad_input`` is set; otherwise they raise.
    """

    def __init__(self, cfg: APUNetConfig):
        super().__init__()
        self.cfg = cfg
        gen = torch.Generator().manual_seed(cfg.prompt.seed)
        ch = cfg.channels
        self.embed = conv3x3(cfg.in_channels, ch[0], bias=True)
        for i in range(cfg.levels):
            setattr(self, f"level{i}", Level(i, cfg, gen))
        self.head = conv3x3(ch[0], cfg.out_channels, bias=True)
        if cfg.out_init_scale != 1.0:
            with torch.no_grad():
                self.head.weight.mul_(cfg.out_init_scale)
                self.head.bias.mul_(cfg.out_init_scale)

    def level(self, i: int) -> Level:
        return getattr(self, f"level{i}")

    def _pad(self, x):
        f = 2 ** (self.cfg.levels - 1)
        h, w = x.shape[-2:]
        ph, pw = (-h) % f, (-w) % f
        if ph == 0 and pw == 0:
            return x, (h, w)
        if not self.cfg.pad_input:
            raise ValidationError(
                f"spatial size {h}x{w} must be divisible by {f}; pad the input or enable pad_input"
            )
        x = F.pad(x, (pw // 2, pw - pw // 2, ph // 2, ph - ph // 2), mode="reflect")
        return x, (h, w)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4:
            raise ValidationError(f"APUNet expects [B, C, H, W], got {tuple(x.shape)}")
        if x.shape[-3] != self.cfg.in_channels:
            raise ValidationError(f"expected {self.cfg.in_channels} input channels, got {x.shape[-3]}")
        inp = x
        x, (h, w) = self._pad(x)
        L = self.cfg.levels
        hcur = self.embed(x)
        skips = []
        for i in range(L):
            lvl = self.level(i)
            hcur = lvl.enc(hcur)
            if self.cfg.prompt.in_encoder:
                hcur = lvl.enc_prompt(hcur)
            if i < L - 1:
                skips.append(hcur)
                hcur = lvl.down(hcur)
        hcur = self.level(L - 1).prompt(hcur)
        for i in reversed(range(L - 1)):
            lvl = self.level(i)
            hcur = self.level(i + 1).up(hcur) + skips[i]
            hcur = lvl.dec(hcur)
            hcur = lvl.prompt(hcur)
        out = self.head(hcur)
        H, W = out.shape[-2:]
        if (H, W) != (h, w):
            top, left = (H - h) // 2, (W - w) // 2
            out = out[..., top:top + h, left:left + w]
        return inp + out if self.cfg.residual else out


def prompt_parameters(model: nn.Module):
    return [p for n, p in model.named_parameters() if n.endswith(".bank")]
