"""Undersampling masks: uniform, Gaussian and pseudo-radial trajectories."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ValidationError
from .kspace import acs_window

TRAJECTORIES = ("uniform", "gaussian", "pseudo_radial")
CHALLENGE_ACCELERATIONS = (4, 8, 10, 12, 16, 20, 24)

GOLDEN_ANGLE = math.pi * (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SamplingMask:
    data: np.ndarray = field(repr=False)  # float32 {0, 1}, [H, W] or [T, H, W]
    trajectory: str
    acceleration: float
    acs_lines: int
    seed: int = 0

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def achieved_acceleration(self) -> float:
        ones = float(self.data.sum())
        return math.inf if ones == 0 else self.data.size / ones

    def tensor(self, dtype=torch.float32, device=None) -> torch.Tensor:
        return torch.as_tensor(self.data, dtype=dtype, device=device)

    def metadata(self) -> dict:
        return {
            "trajectory": self.trajectory,
            "acceleration": self.acceleration,
            "acs_lines": self.acs_lines,
            "seed": self.seed,
            "shape": list(self.data.shape),
            "achieved_acceleration": self.achieved_acceleration,
        }


def _check_args(H: int, W: int, acceleration: float, acs_lines: int) -> None:
    if H < 1 or W < 1:
        raise ValidationError(f"mask size must be positive, got {H}x{W}")
    if not acceleration >= 1:
        raise ValidationError(f"acceleration must be >= 1, got {acceleration}")
    if acs_lines < 0 or acs_lines >= W:
        raise ValidationError(f"acs_lines={acs_lines} must satisfy 0 <= acs_lines < W={W}")


def _columns_to_mask(H: int, W: int, cols: np.ndarray) -> np.ndarray:
    mask = np.zeros((H, W), dtype=np.float32)
    mask[:, cols] = 1.0
    return mask


def _acs_columns(W: int, acs_lines: int) -> np.ndarray:
    start, stop = acs_window(W, acs_lines)
    return np.arange(start, stop)


def make_uniform_mask(H: int, W: int, acceleration: float, acs_lines: int = 16,
                      offset: int = 0) -> SamplingMask:
    """Every ``ceil(acceleration)``-th column from ``offset`` plus the centered ACS block."""
    _check_args(H, W, acceleration, acs_lines)
    step = math.ceil(acceleration)
    cols = np.union1d(np.arange(offset % step, W, step), _acs_columns(W, acs_lines))
    return SamplingMask(_columns_to_mask(H, W, cols), "uniform", float(acceleration), acs_lines, offset)


def make_uniform_mask_stack(H: int, W: int, acceleration: float, frames: int,
                            acs_lines: int = 16) -> SamplingMask:
    """Uniform masks whose line offset advances by one per frame, ``[frames, H, W]``."""
    masks = [make_uniform_mask(H, W, acceleration, acs_lines, offset=t).data for t in range(frames)]
    return SamplingMask(np.stack(masks), "uniform", float(acceleration), acs_lines, 0)


def gaussian_column_density(W: int, sigma: float | None = None) -> np.ndarray:
    sigma = W / 6.0 if sigma is None else sigma
    x = np.arange(W) - W // 2
    return np.exp(-0.5 * (x / sigma) ** 2)


def make_gaussian_mask(H: int, W: int, acceleration: float, acs_lines: int = 16, seed: int = 0,
                       sigma: float | None = None) -> SamplingMask:
    """ACS block plus columns drawn without replacement from a centered Gaussian density.

    The total column budget is ``round(W / acceleration)``; the ACS block counts
    toward it and is never dropped.
    """
    _check_args(H, W, acceleration, acs_lines)
    if acceleration == 1:
        return SamplingMask(np.ones((H, W), np.float32), "gaussian", 1.0, acs_lines, seed)
    acs = _acs_columns(W, acs_lines)
    candidates = np.setdiff1d(np.arange(W), acs)
    n_extra = max(0, round(W / acceleration) - acs_lines)
    if n_extra > candidates.size:
        raise ValidationError(
            f"gaussian mask needs {n_extra} extra columns but only {candidates.size} are outside the ACS block"
        )
    rng = np.random.default_rng(seed)
    p = gaussian_column_density(W, sigma)[candidates]
    extra = rng.choice(candidates, size=n_extra, replace=False, p=p / p.sum())
    cols = np.union1d(acs, extra)
    return SamplingMask(_columns_to_mask(H, W, cols), "gaussian", float(acceleration), acs_lines, seed)


def rasterize_spokes(H: int, W: int, angles) -> np.ndarray:
    """Rasterize full-diameter lines through ``(H // 2, W // 2)``.

    Each spoke steps one pixel at a time along its dominant axis and rounds the
    other coordinate, so a spoke and its 180 degree rotation land on the same pixels.
    """
    mask = np.zeros((H, W), dtype=np.float32)
    cy, cx = H // 2, W // 2
    for theta in np.atleast_1d(np.asarray(angles, dtype=np.float64)):
        c, s = math.cos(theta), math.sin(theta)
        if abs(c) >= abs(s):
            dx = np.arange(-cx, W - cx)
            dy = np.round(dx * (s / c)).astype(int)
        else:
            dy = np.arange(-cy, H - cy)
            dx = np.round(dy * (c / s)).astype(int)
        y, x = cy + dy, cx + dx
        keep = (y >= 0) & (y < H) & (x >= 0) & (x < W)
        mask[y[keep], x[keep]] = 1.0
    return mask


def make_pseudo_radial_mask(H: int, W: int, acceleration: float, acs_lines: int = 16, seed: int = 0,
                            max_spokes: int | None = None) -> SamplingMask:
    """Golden-angle spokes rasterized on the Cartesian grid, plus ACS columns.

    Spokes are added one at a time; the count whose sampled fraction is closest
    to ``1 / acceleration`` is kept.
    """
    _check_args(H, W, acceleration, acs_lines)
    if acceleration == 1:
        return SamplingMask(np.ones((H, W), np.float32), "pseudo_radial", 1.0, acs_lines, seed)
    rng = np.random.default_rng(seed)
    start = rng.uniform(0.0, math.pi)
    base = _columns_to_mask(H, W, _acs_columns(W, acs_lines))
    target = 1.0 / acceleration
    max_spokes = max_spokes or 4 * max(H, W)

    best, best_err = base.copy(), abs(base.mean() - target)
    current = base.copy()
    for k in range(max_spokes):
        current = np.maximum(current, rasterize_spokes(H, W, [start + k * GOLDEN_ANGLE]))
        err = abs(current.mean() - target)
        if err < best_err:
            best, best_err = current.copy(), err
        if current.mean() > target:
            break
    return SamplingMask(best, "pseudo_radial", float(acceleration), acs_lines, seed)


def make_mask(trajectory: str, H: int, W: int, acceleration: float, acs_lines: int = 16,
              seed: int = 0) -> SamplingMask:
    if trajectory == "uniform":
        return make_uniform_mask(H, W, acceleration, acs_lines, offset=seed)
    if trajectory == "gaussian":
        return make_gaussian_mask(H, W, acceleration, acs_lines, seed)
    if trajectory == "pseudo_radial":
        return make_pseudo_radial_mask(H, W, acceleration, acs_lines, seed)
    raise ValidationError(f"unknown trajectory {trajectory!r}; expected one of {TRAJECTORIES}")


def apply_mask(ksp: torch.Tensor, mask) -> torch.Tensor:
    """Zero unsampled k-space. ``mask`` broadcasts over the coil (and adjacent) axes.

    An ``[H, W]`` mask applies to every slice; a ``[T, H, W]`` mask applies per
    adjacent slice of a ``[T, C, H, W]`` stack.
    """
    m = mask.tensor(device=ksp.device) if isinstance(mask, SamplingMask) else torch.as_tensor(mask)
    if m.shape[-2:] != ksp.shape[-2:]:
        raise ValidationError(f"mask shape {tuple(m.shape)} does not match k-space {tuple(ksp.shape)}")
    if m.dim() == 3:
        if ksp.dim() != 4 or ksp.shape[0] != m.shape[0]:
            raise ValidationError("a [T,H,W] mask requires [T,C,H,W] k-space with the same T")
        m = m.unsqueeze(1)
    elif m.dim() != 2:
        raise ValidationError(f"mask must be [H,W] or [T,H,W], got {tuple(m.shape)}")
    return ksp * m.to(ksp.real.dtype if ksp.is_complex() else ksp.dtype)
