"""Losses (k-space physical, SSIM, stepwise, generator total) and image-quality metrics."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ValidationError
from .kspace import coil_combine_rss, ifft2c

SSIM_WIN = 7
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
RANGE_FLOOR = 1e-12


def _split(z: torch.Tensor):
    if z.is_complex():
        return z.real, z.imag
    return z, torch.zeros_like(z)


def safe_abs(z: torch.Tensor) -> torch.Tensor:
    """``|z|`` with a zero (not NaN) gradient at ``z = 0``."""
    re, im = _split(z)
    power = re.square() + im.square()
    nonzero = power > 0
    return torch.where(nonzero, torch.sqrt(torch.where(nonzero, power, torch.ones_like(power))),
                       torch.zeros_like(power))


def safe_angle(z: torch.Tensor) -> torch.Tensor:
    """Principal phase via atan2; 0 at ``z = 0`` with a zero gradient there."""
    re, im = _split(z)
    zero = (re == 0) & (im == 0)
    return torch.where(zero, torch.zeros_like(re),
                       torch.atan2(torch.where(zero, torch.zeros_like(im), im),
                                   torch.where(zero, torch.ones_like(re), re)))


def physical_loss(k_pred: torch.Tensor, k_gt: torch.Tensor, wrap_phase: bool = False) -> torch.Tensor:
    """MSE of k-space magnitudes plus MSE of principal phases.

    With ``wrap_phase`` the phase difference is wrapped to (-pi, pi] before squaring.
    """
    if k_pred.shape != k_gt.shape:
        raise ValidationError(f"shape mismatch {tuple(k_pred.shape)} vs {tuple(k_gt.shape)}")
    mag = F.mse_loss(safe_abs(k_pred), safe_abs(k_gt))
    d = safe_angle(k_pred) - safe_angle(k_gt)
    if wrap_phase:
        d = torch.atan2(torch.sin(d), torch.cos(d))
    return mag + d.square().mean()


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA, dtype=torch.float64) -> torch.Tensor:
    x = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(x ** 2) / (2 * sigma ** 2))
    w = torch.outer(g, g)
    return (w / w.sum()).to(dtype)


def ssim_map(img: torch.Tensor, ref: torch.Tensor, data_range, win: int = SSIM_WIN,
             sigma: float = SSIM_SIGMA) -> torch.Tensor:
    """Per-window SSIM over valid 7x7 Gaussian windows of ``[..., H, W]`` images."""
    if img.shape != ref.shape:
        raise ValidationError(f"shape mismatch {tuple(img.shape)} vs {tuple(ref.shape)}")
    if img.shape[-1] < win or img.shape[-2] < win:
        raise ValidationError(f"images must be at least {win}x{win} for SSIM")
    lead = img.shape[:-2]
    x = img.reshape(-1, 1, *img.shape[-2:])
    y = ref.reshape(-1, 1, *ref.shape[-2:])
    w = gaussian_window(win, sigma, x.dtype).to(x.device)[None, None]
    mx, my = F.conv2d(x, w), F.conv2d(y, w)
    sxx = F.conv2d(x * x, w) - mx * mx
    syy = F.conv2d(y * y, w) - my * my
    sxy = F.conv2d(x * y, w) - mx * my
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return s.reshape(*lead, *s.shape[-2:])


def ssim_loss(img_pred: torch.Tensor, img_gt: torch.Tensor) -> torch.Tensor:
    """``1 - SSIM`` with the dynamic range taken from the ground truth (floored at 1e-12)."""
    data_range = torch.clamp(img_gt.detach().max(), min=RANGE_FLOOR)
    return 1.0 - ssim_map(img_pred, img_gt, data_range).mean()


def kspace_to_image(k: torch.Tensor) -> torch.Tensor:
    """Coil-combined magnitude image of a single ``[C, H, W]`` k-space slice."""
    return coil_combine_rss(ifft2c(k))


def step_loss(k_pred_central: torch.Tensor, k_gt: torch.Tensor, wrap_phase: bool = False,
              use_physical: bool = True, use_ssim: bool = True) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Returns ``(total, physical, ssim)`` for one reconstructor output.

    The flags drop a term for ablations; a dropped term reports as 0.
    """
    zero = k_pred_central.real.new_zeros(())
    phys = physical_loss(k_pred_central, k_gt, wrap_phase) if use_physical else zero
    ssim = ssim_loss(kspace_to_image(k_pred_central), kspace_to_image(k_gt)) if use_ssim else zero
    return phys + ssim, phys, ssim


def generator_loss(step_losses, adv, lam: float = 1.0):
    if len(step_losses) == 0:
        raise ValidationError("generator_loss needs at least one step loss")
    total = step_losses[0]
    for s in step_losses[1:]:
        total = total + s
    return lam * total + adv


@dataclass
class LossReport:
    physical: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)
    step: list[float] = field(default_factory=list)
    disc: list[float] = field(default_factory=list)
    stepwise_sum: float = 0.0
    adversarial: float = 0.0
    generator: float = 0.0
    lam: float = 1.0
    skipped: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


# metrics: numpy float64, not differentiable

def _as_np(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def metric_nmse(pred, gt) -> float:
    pred, gt = _as_np(pred), _as_np(gt)
    denom = float(np.sum(gt ** 2))
    if denom == 0:
        raise ValidationError("NMSE undefined for an all-zero ground truth")
    return float(np.sum((pred - gt) ** 2) / denom)


def metric_psnr(pred, gt) -> float:
    """PSNR in dB against ``max(gt)``; ``inf`` when the images are identical."""
    pred, gt = _as_np(pred), _as_np(gt)
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(float(gt.max()) ** 2 / mse)


def metric_ssim(pred, gt) -> float:
    """SSIM of images after scaling both by ``max(gt)`` (so the data range is 1)."""
    pred, gt = _as_np(pred), _as_np(gt)
    scale = max(float(gt.max()), RANGE_FLOOR)
    p = torch.from_numpy(pred / scale)
    g = torch.from_numpy(gt / scale)
    return float(ssim_map(p, g, 1.0).mean())


def image_metrics(pred, gt) -> dict:
    return {"nmse": metric_nmse(pred, gt), "psnr": metric_psnr(pred, gt), "ssim": metric_ssim(pred, gt)}
