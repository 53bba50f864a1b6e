"""Unrolled generator: sensitivity estimation followed by reconstructor steps with data consistency."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from pydantic import BaseModel, ConfigDict, model_validator
from torch import nn

from .apunet import APUNet, APUNetConfig
from .errors import NumericalError, ValidationError
from .kspace import (
    central_index,
    channels_to_complex,
    coil_combine_rss,
    coil_expand,
    coil_reduce,
    complex_to_channels,
    conjugate_symmetry,
    extract_acs,
    fft2c,
    ifft2c,
    rss_normalize,
)
from .sampling import SamplingMask


class GeneratorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    num_reconstructors: int = 12
    adjacent: int = 5
    acs_lines: int = 16
    eta_init: float = 1.0
    share_weights: bool = False
    apunet: APUNetConfig | None = None
    sme: APUNetConfig | None = None

    @model_validator(mode="after")
    def _check(self):
        if self.num_reconstructors < 0:
            raise ValueError("num_reconstructors must be >= 0")
        if self.adjacent < 1 or self.adjacent % 2 == 0:
            raise ValueError("adjacent must be odd and >= 1")
        if self.acs_lines < 1:
            raise ValueError("acs_lines must be >= 1")
        rf = self.refiner_config
        if rf.in_channels != 2 * self.adjacent or rf.out_channels != 2 * self.adjacent:
            raise ValueError(f"apunet channels must be 2*adjacent = {2 * self.adjacent}")
        if rf.residual:
            raise ValueError("the reconstructor APUNet must not use a global residual (its output is G_k)")
        if self.sme_config.in_channels != 2 or self.sme_config.out_channels != 2:
            raise ValueError("sme APUNet takes and returns 2 channels (one coil image)")
        return self

    @property
    def refiner_config(self) -> APUNetConfig:
        if self.apunet is not None:
            return self.apunet
        return APUNetConfig(in_channels=2 * self.adjacent, out_channels=2 * self.adjacent,
                            residual=False, out_init_scale=0.1)

    @property
    def sme_config(self) -> APUNetConfig:
        if self.sme is not None:
            return self.sme
        return APUNetConfig(in_channels=2, out_channels=2, residual=True, out_init_scale=0.1)

    @classmethod
    def tiny(cls, num_reconstructors: int = 2, adjacent: int = 3, **kw) -> "GeneratorConfig":
        return cls(
            num_reconstructors=num_reconstructors, adjacent=adjacent,
            apunet=APUNetConfig.tiny(2 * adjacent, residual=False, out_init_scale=0.1),
            sme=APUNetConfig.tiny(2, residual=True, out_init_scale=0.1), **kw,
        )


def _mask_tensor(mask, like: torch.Tensor) -> torch.Tensor:
    m = mask.tensor() if isinstance(mask, SamplingMask) else torch.as_tensor(mask)
    m = m.to(device=like.device, dtype=like.real.dtype)
    if m.dim() == 3:  # per-adjacent masks [T, H, W] -> [T, 1, H, W]
        m = m.unsqueeze(-3)
    return m


def dc_update(k_t: torch.Tensor, k_0: torch.Tensor, mask, eta, G_k: torch.Tensor) -> torch.Tensor:
    """``k_t - eta * M * (k_t - k_0) + G_k`` with the mask broadcast over adjacents and coils.

    Evaluated as ``(1 - eta*M) * k_t + eta*M * k_0 + G_k`` so the eta in {0, 1}
    cases are exact in floating point.
    """
    if k_t.shape != k_0.shape or k_t.shape != G_k.shape:
        raise ValidationError(
            f"dc_update shape mismatch: k_t {tuple(k_t.shape)}, k_0 {tuple(k_0.shape)}, G_k {tuple(G_k.shape)}"
        )
    m = _mask_tensor(mask, k_t)
    if m.shape[-2:] != k_t.shape[-2:]:
        raise ValidationError(f"mask {tuple(m.shape)} does not match k-space {tuple(k_t.shape)}")
    w = eta * m
    return (1 - w) * k_t + w * k_0 + G_k


class SensitivityEstimator(nn.Module):
    """Estimates coil maps from the ACS region with a coil-agnostic APUNet.

    Each coil image is pushed through the same network as a 2-channel (re, im)
    sample, so any coil count works.
    """

    def __init__(self, cfg: APUNetConfig, acs_lines: int):
        super().__init__()
        self.acs_lines = acs_lines
        self.net = APUNet(cfg)

    def forward(self, k0: torch.Tensor) -> torch.Tensor:
        acs = extract_acs(k0, self.acs_lines)  # [C, H, W]
        if not (acs != 0).any():
            raise ValidationError("ACS region of k0 is empty; cannot estimate sensitivity maps")
        img = ifft2c(acs)
        scale = coil_combine_rss(img).max()
        x = complex_to_channels(img.unsqueeze(1) / scale)  # [C, 2, H, W]
        maps = channels_to_complex(self.net(x)).squeeze(1)  # [C, H, W]
        if not torch.isfinite(maps).all():
            raise NumericalError("non-finite value in sme output")
        return rss_normalize(maps)


class Reconstructor(nn.Module):
    """One unrolled step: reduce, refine, expand, FFT, data consistency."""

    def __init__(self, refiner: APUNet, eta_init: float, name: str = "step"):
        super().__init__()
        self.name = name
        self.refiner = refiner
        self.eta = nn.Parameter(torch.tensor(float(eta_init)))

    def refine(self, k_t, maps, maps_conj):
        img_sc = coil_reduce(ifft2c(k_t), maps_conj)  # [T, H, W]
        x = complex_to_channels(img_sc).unsqueeze(0)  # [1, 2T, H, W]
        # scale-only normalisation keeps a zero network output mapped to zero
        scale = x.square().mean().sqrt().clamp_min(1e-12)
        img_rf = channels_to_complex(self.refiner(x / scale) * scale).squeeze(0)
        if not torch.isfinite(img_rf).all():
            raise NumericalError(f"non-finite value in {self.name}.refiner output")
        return fft2c(coil_expand(img_rf, maps))

    def forward(self, k_t, k_0, maps, maps_conj, mask, refiner_off: bool = False):
        G_k = torch.zeros_like(k_t) if refiner_off else self.refine(k_t, maps, maps_conj)
        return dc_update(k_t, k_0, mask, self.eta, G_k)


@dataclass
class GeneratorOutput:
    k_final: torch.Tensor  # [T, C, H, W]
    intermediates: list  # per-step central k-space, [C, H, W] each
    maps: torch.Tensor | None  # [C, H, W]


class Generator(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        self.sme = SensitivityEstimator(cfg.sme_config, cfg.acs_lines)
        if cfg.share_weights and cfg.num_reconstructors > 0:
            shared = APUNet(cfg.refiner_config)
            refiners = [shared] * cfg.num_reconstructors
        else:
            refiners = [APUNet(cfg.refiner_config.model_copy(
                update={"prompt": cfg.refiner_config.prompt.model_copy(
                    update={"seed": cfg.refiner_config.prompt.seed + t})}))
                for t in range(cfg.num_reconstructors)]
        self.steps = nn.ModuleList(Reconstructor(r, cfg.eta_init, f"step{t}") for t, r in enumerate(refiners))

    def forward(self, k0: torch.Tensor, mask, maps: torch.Tensor | None = None, step_callback=None) -> GeneratorOutput:
        """Run every reconstructor on ``k0`` (``[T, C, H, W]``).

        ``step_callback(t, k_central)`` fires after each step; the trainer uses it to
        interleave discriminator updates.
        """
        if k0.dim() != 4 or k0.shape[0] != self.cfg.adjacent:
            raise ValidationError(f"k0 must be [{self.cfg.adjacent}, C, H, W], got {tuple(k0.shape)}")
        c = central_index(k0.shape[0])
        if len(self.steps) == 0:
            return GeneratorOutput(k0, [], maps)
        if maps is None:
            maps = self.sme(k0)
        maps_conj = conjugate_symmetry(maps)
        k = k0
        inter = []
        for t, step in enumerate(self.steps):
            k = step(k, k0, maps, maps_conj, mask)
            inter.append(k[c])
            if step_callback is not None:
                step_callback(t, k[c])
        return GeneratorOutput(k, inter, maps)

    def etas(self) -> list[float]:
        return [float(s.eta.detach()) for s in self.steps]


def generator_forward(generator: Generator, k0: torch.Tensor, mask):
    out = generator(k0, mask)
    return out.k_final, out.intermediates


def reconstruct_image(k: torch.Tensor) -> torch.Tensor:
    """RSS image ``[H, W]`` of the central slice of ``[T, C, H, W]`` (or of ``[C, H, W]``)."""
    if k.dim() == 4:
        k = k[central_index(k.shape[0])]
    return coil_combine_rss(ifft2c(k))
