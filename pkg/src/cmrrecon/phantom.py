"""Synthetic dynamic multi-coil cardiac phantoms and the per-subject file format."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import h5py
import numpy as np
import torch

from .errors import DataError, ValidationError
from .kspace import coil_combine_rss, fft2c, ifft2c, rss_normalize
from .sampling import SamplingMask, apply_mask

FORMAT_VERSION = 1
CONTRAST_TAGS = ("cine", "t1w", "t2w", "aorta", "tagging")


@dataclass(frozen=True)
class Ellipse:
    """Ellipse in normalized field-of-view coordinates ([-1, 1] on both axes)."""

    center: tuple[float, float]  # (y, x)
    axes: tuple[float, float]  # (semi-axis y, semi-axis x)
    intensity: float
    pulsatility: float = 0.0
    angle: float = 0.0  # radians


@dataclass(frozen=True)
class PhantomSpec:
    H: int = 64
    W: int = 64
    frames: int = 8
    coils: int = 4
    heart_rate_phase: float = 0.0
    ellipses: tuple[Ellipse, ...] = ()
    noise_std: float = 0.0
    seed: int = 0
    contrast_tag: str = "cine"

    def validate(self) -> None:
        if self.coils < 1 or self.frames < 1:
            raise ValidationError("coils and frames must be >= 1")
        if self.H < 8 or self.W < 8:
            raise ValidationError(f"phantom size must be at least 8x8, got {self.H}x{self.W}")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be >= 0")
        if self.contrast_tag not in CONTRAST_TAGS:
            raise ValidationError(f"unknown contrast tag {self.contrast_tag!r}")
        for i, e in enumerate(self.ellipses):
            if not 0.0 <= e.intensity <= 1.0:
                raise ValidationError(f"ellipse {i}: intensity {e.intensity} outside [0, 1]")
            if not 0.0 <= e.pulsatility < 0.5:
                raise ValidationError(f"ellipse {i}: pulsatility {e.pulsatility} outside [0, 0.5)")
            if min(e.axes) <= 0:
                raise ValidationError(f"ellipse {i}: axes must be positive")
            # bounding box at peak expansion must stay inside the FOV
            scale = 1.0 + e.pulsatility
            ay, ax = e.axes[0] * scale, e.axes[1] * scale
            c, s = math.cos(e.angle), math.sin(e.angle)
            half_y = math.hypot(ay * c, ax * s)
            half_x = math.hypot(ay * s, ax * c)
            cy, cx = e.center
            if abs(cy) + half_y > 1.0 + 1e-9 or abs(cx) + half_x > 1.0 + 1e-9:
                raise ValidationError(f"ellipse {i} extends outside the field of view")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        d = dict(d)
        d["ellipses"] = tuple(
            Ellipse(tuple(e["center"]), tuple(e["axes"]), e["intensity"], e["pulsatility"], e["angle"])
            for e in d.get("ellipses", ())
        )
        return cls(**d)


@dataclass
class SubjectRecord:
    kspace_full: np.ndarray  # complex64 [frames, coils, H, W]
    image_rss: np.ndarray  # float32 [frames, H, W]
    spec: PhantomSpec
    contrast_tag: str = "cine"
    extra: dict = field(default_factory=dict)

    @property
    def frames(self) -> int:
        return self.kspace_full.shape[0]

    def check_consistency(self, atol: float = 1e-5) -> None:
        rss = coil_combine_rss(ifft2c(torch.from_numpy(self.kspace_full))).numpy()
        scale = max(float(np.abs(self.image_rss).max()), 1.0)
        err = float(np.abs(rss - self.image_rss).max())
        if err > atol * scale:
            raise DataError(f"image_rss disagrees with kspace_full (max abs error {err:.3e})")


# intensities for (body, myocardium, blood pool, right ventricle, vessel)
_PALETTES = {
    "cine": (0.35, 0.30, 0.95, 0.85, 0.70),
    "t1w": (0.55, 0.75, 0.30, 0.30, 0.45),
    "t2w": (0.40, 0.35, 0.80, 0.75, 0.90),
    "aorta": (0.30, 0.25, 0.60, 0.50, 1.00),
    "tagging": (0.45, 0.50, 0.70, 0.65, 0.60),
}


def cardiac_ellipses(contrast_tag: str = "cine", rng: np.random.Generator | None = None,
                     pulsatility: float = 0.12) -> tuple[Ellipse, ...]:
    """A thorax-like layout: body, myocardium, LV/RV blood pools and a vessel.

    ``rng`` jitters positions, sizes and intensities slightly so subjects differ.
    """
    if contrast_tag not in _PALETTES:
        raise ValidationError(f"unknown contrast tag {contrast_tag!r}")
    body, myo, lv, rv, vessel = _PALETTES[contrast_tag]
    j = (lambda s: float(rng.uniform(-s, s))) if rng is not None else (lambda s: 0.0)
    clip = lambda v: float(min(max(v, 0.0), 1.0))  # noqa: E731
    return (
        Ellipse((0.0 + j(0.02), 0.0 + j(0.02)), (0.72 + j(0.05), 0.85 + j(0.05)), clip(body + j(0.05)), 0.0, j(0.1)),
        Ellipse((0.05 + j(0.05), -0.15 + j(0.05)), (0.32 + j(0.03), 0.30 + j(0.03)), clip(myo + j(0.05)),
                pulsatility * 0.5, j(0.3)),
        Ellipse((0.05 + j(0.05), -0.15 + j(0.05)), (0.20 + j(0.02), 0.18 + j(0.02)), clip(lv + j(0.05)),
                pulsatility, j(0.3)),
        Ellipse((0.02 + j(0.05), 0.22 + j(0.05)), (0.18 + j(0.02), 0.13 + j(0.02)), clip(rv + j(0.05)),
                pulsatility * 0.8, j(0.3)),
        Ellipse((-0.40 + j(0.05), 0.05 + j(0.05)), (0.08 + j(0.01), 0.08 + j(0.01)), clip(vessel + j(0.05)),
                pulsatility * 0.3, 0.0),
    )


def random_phantom_spec(seed: int, H: int = 64, W: int = 64, frames: int = 8, coils: int = 4,
                        contrast_tag: str = "cine", noise_std: float = 0.0,
                        pulsatility: float = 0.12) -> PhantomSpec:
    rng = np.random.default_rng(seed)
    return PhantomSpec(
        H=H, W=W, frames=frames, coils=coils,
        heart_rate_phase=float(rng.uniform(0, 2 * math.pi)),
        ellipses=cardiac_ellipses(contrast_tag, rng, pulsatility),
        noise_std=noise_std, seed=seed, contrast_tag=contrast_tag,
    )


def simulate_coil_maps(H: int, W: int, coils: int, seed: int = 0) -> np.ndarray:
    """Smooth complex Gaussian-lobe coil maps around the FOV, RSS-normalized.

    Returns complex64 ``[coils, H, W]``. A single coil gets an all-ones map.
    """
    if coils < 1:
        raise ValidationError("coils must be >= 1")
    if coils == 1:
        return np.ones((1, H, W), dtype=np.complex64)
    rng = np.random.default_rng(seed)
    y = (np.arange(H) - H // 2) / (H / 2)
    x = (np.arange(W) - W // 2) / (W / 2)
    yy, xx = np.meshgrid(y, x, indexing="ij")
    rot = rng.uniform(0, 2 * math.pi)
    maps = []
    for c in range(coils):
        theta = rot + 2 * math.pi * c / coils
        y0, x0 = 1.2 * math.sin(theta), 1.2 * math.cos(theta)
        width = 0.9 + 0.2 * rng.uniform()
        mag = np.exp(-((yy - y0) ** 2 + (xx - x0) ** 2) / (2 * width ** 2))
        # slowly varying phase: a random offset plus a gentle linear ramp
        phase = rng.uniform(-math.pi, math.pi) + 0.4 * (rng.uniform(-1, 1) * yy + rng.uniform(-1, 1) * xx)
        maps.append(mag * np.exp(1j * phase))
    maps = torch.from_numpy(np.stack(maps))
    return rss_normalize(maps, eps=0.0).numpy().astype(np.complex64)


def _ellipse_field(H: int, W: int, ellipses, frame: int, frames: int, phase: float) -> np.ndarray:
    y = (np.arange(H) - H // 2) / (H / 2)
    x = (np.arange(W) - W // 2) / (W / 2)
    yy, xx = np.meshgrid(y, x, indexing="ij")
    img = np.zeros((H, W), dtype=np.float64)
    for e in ellipses:
        scale = 1.0 + e.pulsatility * math.sin(2 * math.pi * frame / frames + phase)
        ay, ax = e.axes[0] * scale, e.axes[1] * scale
        dy, dx = yy - e.center[0], xx - e.center[1]
        c, s = math.cos(e.angle), math.sin(e.angle)
        u = c * dy - s * dx
        v = s * dy + c * dx
        inside = (u / ay) ** 2 + (v / ax) ** 2 <= 1.0
        img[inside] = e.intensity  # later ellipses paint over earlier ones
    return img


def simulate_subject(spec: PhantomSpec) -> SubjectRecord:
    spec.validate()
    maps = simulate_coil_maps(spec.H, spec.W, spec.coils, spec.seed)
    frames = np.stack([
        _ellipse_field(spec.H, spec.W, spec.ellipses, t, spec.frames, spec.heart_rate_phase)
        for t in range(spec.frames)
    ])
    coil_imgs = torch.from_numpy(frames[:, None].astype(np.complex128) * maps[None].astype(np.complex128))
    ksp = fft2c(coil_imgs)
    if spec.noise_std > 0:
        rng = np.random.default_rng(spec.seed + 1_000_003)
        noise = rng.standard_normal((2,) + tuple(ksp.shape)) * spec.noise_std
        ksp = ksp + torch.from_numpy(noise[0] + 1j * noise[1])
    ksp = ksp.to(torch.complex64)
    image_rss = coil_combine_rss(ifft2c(ksp)).numpy().astype(np.float32)
    return SubjectRecord(ksp.numpy(), image_rss, spec, spec.contrast_tag)


def write_subject(rec: SubjectRecord, path) -> None:
    path = Path(path)
    with h5py.File(path, "w", track_order=False) as f:
        f.create_dataset("kspace_full", data=rec.kspace_full.astype(np.complex64), track_times=False)
        f.create_dataset("image_rss", data=rec.image_rss.astype(np.float32), track_times=False)
        f.attrs["format_version"] = FORMAT_VERSION
        f.attrs["contrast_tag"] = rec.contrast_tag
        f.attrs["seed"] = rec.spec.seed
        f.attrs["spec"] = json.dumps(rec.spec.to_dict(), sort_keys=True)
        if rec.extra:
            f.attrs["extra"] = json.dumps(rec.extra, sort_keys=True)


def read_subject(path, check: bool = True) -> SubjectRecord:
    path = Path(path)
    try:
        f = h5py.File(path, "r")
    except OSError as exc:
        raise DataError(f"{path}: cannot open subject file ({exc})") from exc
    with f:
        version = f.attrs.get("format_version")
        if version is None:
            raise DataError(f"{path}: missing attribute 'format_version'")
        if int(version) != FORMAT_VERSION:
            raise DataError(f"{path}: format_version {int(version)} is not supported (expected {FORMAT_VERSION})")
        for name in ("kspace_full", "image_rss"):
            if name not in f:
                raise DataError(f"{path}: missing array '{name}'")
        try:
            ksp = f["kspace_full"][()]
            img = f["image_rss"][()]
        except OSError as exc:
            raise DataError(f"{path}: array data unreadable ({exc})") from exc
        tag = f.attrs.get("contrast_tag", "cine")
        spec = PhantomSpec.from_dict(json.loads(f.attrs["spec"])) if "spec" in f.attrs else None
        extra = json.loads(f.attrs["extra"]) if "extra" in f.attrs else {}
    tag = tag.decode() if isinstance(tag, bytes) else str(tag)
    if ksp.dtype != np.complex64 or ksp.ndim != 4:
        raise DataError(f"{path}: kspace_full must be complex64 [frames, coils, H, W], got {ksp.dtype} {ksp.shape}")
    if img.dtype != np.float32 or img.shape != (ksp.shape[0],) + ksp.shape[2:]:
        raise DataError(f"{path}: image_rss must be float32 {(ksp.shape[0],) + ksp.shape[2:]}, got {img.dtype} {img.shape}")
    if spec is None:
        spec = PhantomSpec(H=ksp.shape[2], W=ksp.shape[3], frames=ksp.shape[0], coils=ksp.shape[1],
                           contrast_tag=tag if tag in CONTRAST_TAGS else "cine")
    rec = SubjectRecord(ksp, img, spec, tag, extra)
    if check:
        rec.check_consistency()
    return rec


def read_challenge_subject(path, slice_index: int = 0, contrast_tag: str = "cine",
                           key: str = "kspace_full") -> SubjectRecord:
    """Adapter for challenge-style MATLAB v7.3 files.

    These hold ``kspace_full`` as a compound (real, imag) array that h5py reads
    as ``[frames, slices, coils, H, W]``; one slice is kept.
    """
    try:
        f = h5py.File(path, "r")
    except OSError as exc:
        raise DataError(f"{path}: cannot open challenge file ({exc})") from exc
    with f:
        if key not in f:
            raise DataError(f"{path}: missing array '{key}'")
        raw = f[key][()]
    if raw.dtype.names and {"real", "imag"} <= set(raw.dtype.names):
        ksp = raw["real"] + 1j * raw["imag"]
    elif np.iscomplexobj(raw):
        ksp = raw
    else:
        raise DataError(f"{path}: '{key}' is neither complex nor a (real, imag) compound")
    if ksp.ndim == 5:
        if not 0 <= slice_index < ksp.shape[1]:
            raise DataError(f"{path}: slice {slice_index} out of range for {ksp.shape[1]} slices")
        ksp = ksp[:, slice_index]
    elif ksp.ndim != 4:
        raise DataError(f"{path}: expected 4 or 5 dims in '{key}', got {ksp.shape}")
    ksp = np.ascontiguousarray(ksp.astype(np.complex64))
    img = coil_combine_rss(ifft2c(torch.from_numpy(ksp))).numpy().astype(np.float32)
    spec = PhantomSpec(H=ksp.shape[2], W=ksp.shape[3], frames=ksp.shape[0], coils=ksp.shape[1],
                       contrast_tag=contrast_tag)
    return SubjectRecord(ksp, img, spec, contrast_tag, {"source": str(path), "slice": slice_index})


def gather_adjacent(num_frames: int, frame: int, adjacent: int) -> list[int]:
    """Frame indices centered on ``frame`` with edge replication."""
    if adjacent < 1 or adjacent % 2 == 0:
        raise ValidationError(f"adjacent length must be odd and >= 1, got {adjacent}")
    if not 0 <= frame < num_frames:
        raise ValidationError(f"frame {frame} out of range [0, {num_frames})")
    half = (adjacent - 1) // 2
    return [min(max(i, 0), num_frames - 1) for i in range(frame - half, frame + half + 1)]


def make_training_example(rec: SubjectRecord, frame: int, mask: SamplingMask | np.ndarray,
                          adjacent: int = 5) -> tuple[torch.Tensor, torch.Tensor]:
    """Returns ``(k0, kG)``, both complex64 ``[adjacent, coils, H, W]``."""
    idx = gather_adjacent(rec.frames, frame, adjacent)
    kG = torch.from_numpy(rec.kspace_full[idx])
    return apply_mask(kG, mask), kG
