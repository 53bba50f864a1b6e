"""Complex k-space / image utilities.

Conventions:
    * Arrays are complex torch tensors whose last two dims are (H, W).
    * Multi-coil stacks are ``[..., C, H, W]``; adjacent-slice stacks are ``[T, C, H, W]``
      with the reconstructed slice at index ``(T - 1) // 2``.
    * Undersampling runs along W (phase-encode lines are columns).
    * Fourier transforms are centered and orthonormal.
"""
import math

import torch

from .errors import ValidationError

# Added under the RSS square root so its gradient stays finite at exact zeros.


def _check_finite(x: torch.Tensor, name: str) -> None:
    if not torch.isfinite(x).all():
        raise ValidationError(f"{name} contains non-finite values")


def fft2c(img: torch.Tensor) -> torch.Tensor:
    """Centered orthonormal 2D FFT over the last two dimensions."""
    if img.dim() < 2:
        raise ValidationError("fft2c expects at least 2 dimensions")
    _check_finite(img, "fft2c input")
    x = torch.fft.ifftshift(img, dim=(-2, -1))
    x = torch.fft.fft2(x, dim=(-2, -1), norm="ortho")
    return torch.fft.fftshift(x, dim=(-2, -1))


def ifft2c(ksp: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`fft2c`."""
    if ksp.dim() < 2:
        raise ValidationError("ifft2c expects at least 2 dimensions")
    _check_finite(ksp, "ifft2c input")
    x = torch.fft.ifftshift(ksp, dim=(-2, -1))
    x = torch.fft.ifft2(x, dim=(-2, -1), norm="ortho")
    return torch.fft.fftshift(x, dim=(-2, -1))


def central_index(num_adjacent: int) -> int:
    return (num_adjacent - 1) // 2


def acs_window(width: int, acs_lines: int) -> tuple[int, int]:
    """Half-open column range ``[start, stop)`` of a centered ACS block.

    Odd widths put the extra column on the left of ``width // 2``.
    """
    if acs_lines < 0 or acs_lines > width:
        raise ValidationError(f"acs_lines={acs_lines} must lie in [0, {width}]")
    start = width // 2 - math.ceil(acs_lines / 2)
    return start, start + acs_lines


def extract_acs(ksp: torch.Tensor, acs_lines: int) -> torch.Tensor:
    """Zero everything except the centered ACS columns of the central slice.

    ``ksp`` is ``[T, C, H, W]`` (the central adjacent is taken) or an already
    single-slice ``[C, H, W]``. Returns ``[C, H, W]``.
    """
    if ksp.dim() == 4:
        ksp = ksp[central_index(ksp.shape[0])]
    elif ksp.dim() != 3:
        raise ValidationError(f"extract_acs expects [T,C,H,W] or [C,H,W], got {tuple(ksp.shape)}")
    start, stop = acs_window(ksp.shape[-1], acs_lines)
    out = torch.zeros_like(ksp)
    out[..., start:stop] = ksp[..., start:stop]
    return out


def conjugate_symmetry(maps: torch.Tensor) -> torch.Tensor:
    """Elementwise complex conjugate of sensitivity maps."""
    return torch.conj(maps).resolve_conj()


def coil_reduce(img_mc: torch.Tensor, maps_conj: torch.Tensor) -> torch.Tensor:
    """SENSE reduce: ``sum_c conj(S_c) * I_c``.

    Args:
        img_mc: coil images ``[..., C, H, W]``.
        maps_conj: already-conjugated maps ``[C, H, W]``.
    """
    if img_mc.shape[-3] != maps_conj.shape[-3]:
        raise ValidationError(
            f"coil count mismatch: images have {img_mc.shape[-3]}, maps have {maps_conj.shape[-3]}"
        )
    return (img_mc * maps_conj).sum(dim=-3)


def coil_expand(img: torch.Tensor, maps: torch.Tensor) -> torch.Tensor:
    """SENSE expand: repeat ``[..., H, W]`` across coils and weight by ``S_c``."""
    return img.unsqueeze(-3) * maps


def coil_combine_rss(img_mc: torch.Tensor) -> torch.Tensor:
    """Root-sum-of-squares over the coil axis (``-3``); returns a real tensor."""
    if img_mc.dim() < 3:
        raise ValidationError("coil_combine_rss expects [..., C, H, W]")
    power = img_mc.real.square() + img_mc.imag.square() if img_mc.is_complex() else img_mc.square()
    total = power.sum(dim=-3)
    # zero stays exactly zero, with a zero (not inf) gradient there
    nonzero = total > 0
    return torch.where(nonzero, torch.sqrt(torch.where(nonzero, total, torch.ones_like(total))),
                       torch.zeros_like(total))


def rss_normalize(maps: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    """Scale maps so that ``sum_c |S_c|^2 = 1`` at every pixel with signal."""
    norm = torch.sqrt((maps.real.square() + maps.imag.square()).sum(dim=-3, keepdim=True) + eps)
    return maps / norm


def complex_to_channels(x: torch.Tensor) -> torch.Tensor:
    """``[..., K, H, W]`` complex -> ``[..., 2K, H, W]`` real with interleaved re/im pairs."""
    r = torch.view_as_real(x)  # [..., K, H, W, 2]
    r = r.movedim(-1, -3)  # [..., K, 2, H, W]
    return r.reshape(*x.shape[:-3], 2 * x.shape[-3], *x.shape[-2:])


def channels_to_complex(x: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`complex_to_channels`."""
    if x.shape[-3] % 2:
        raise ValidationError("channel count must be even to form complex pairs")
    k = x.shape[-3] // 2
    r = x.reshape(*x.shape[:-3], k, 2, *x.shape[-2:]).movedim(-3, -1).contiguous()
    return torch.view_as_complex(r)


def zero_filled_image(k0: torch.Tensor) -> torch.Tensor:
    """RSS image of the central slice of an adjacent stack (or of a ``[C,H,W]`` slice)."""
    if k0.dim() == 4:
        k0 = k0[central_index(k0.shape[0])]
    return coil_combine_rss(ifft2c(k0))
