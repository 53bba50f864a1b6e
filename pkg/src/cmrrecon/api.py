"""Whole-workflow operations shared by the command line and the HTTP service."""
from __future__ import annotations

import hashlib
import json
import logging
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ExperimentConfig, PhantomDefaults
from .errors import DataError, ValidationError
from .objectives import image_metrics, metric_ssim
from .phantom import SubjectRecord, random_phantom_spec, read_subject, simulate_subject, write_subject
from .sampling import SamplingMask, make_mask
from .trainer import (
    MetricsReport,
    evaluate,
    load_subjects,
    models_from_checkpoint,
    prepare_example,
    reconstruct_example,
    run_curriculum,
)

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
IMAGE_MAX = 65535  # 16-bit PGM
TRIPTYCH = ("gt", "zf", "recon")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ValidationError(f"size must look like HxW (e.g. 64x64), got {text!r}") from None
    if h < 1 or w < 1:
        raise ValidationError(f"size must be positive, got {text!r}")
    return h, w


def prepare_output_dir(path, force: bool = False) -> Path:
    path = Path(path)
    if path.exists() and not path.is_dir():
        raise ValidationError(f"output path {path} exists and is not a directory")
    if path.exists() and any(path.iterdir()):
        if not force:
            raise ValidationError(f"output directory {path} is not empty (use --force to overwrite)")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


# dataset simulation

def simulate_dataset(out_dir, subjects: int, phantom: PhantomDefaults, force: bool = False) -> dict:
    """Write ``subjects`` phantom files plus a checksummed manifest.

    Subject ``i`` uses seed ``phantom.seed + i`` and contrast
    ``phantom.contrasts[i % len(contrasts)]``.
    """
    if subjects < 1:
        raise ValidationError(f"--subjects must be >= 1, got {subjects}")
    out = prepare_output_dir(out_dir, force)
    entries = []
    for i in range(subjects):
        tag = phantom.contrasts[i % len(phantom.contrasts)]
        spec = random_phantom_spec(phantom.seed + i, phantom.height, phantom.width, phantom.frames, phantom.coils,
                                   tag, phantom.noise_std, phantom.pulsatility)
        rec = simulate_subject(spec)
        name = f"subject_{i:03d}.h5"
        write_subject(rec, out / name)
        entries.append({"file": name, "sha256": sha256_file(out / name), "seed": spec.seed, "contrast": tag,
                        "shape": list(rec.kspace_full.shape)})
    manifest = {"subjects": entries, "phantom": phantom.model_dump(mode="json")}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def verify_manifest(data_dir) -> list[str]:
    """Files whose checksum no longer matches the manifest."""
    data_dir = Path(data_dir)
    manifest = json.loads((data_dir / MANIFEST).read_text())
    return [e["file"] for e in manifest["subjects"] if sha256_file(data_dir / e["file"]) != e["sha256"]]


# masks and images

def write_pgm(path, img: np.ndarray) -> None:
    """Binary greyscale PGM; 8-bit for uint8 input, 16-bit big-endian for uint16."""
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype not in (np.uint8, np.uint16):
        raise ValidationError(f"PGM needs a 2D uint8/uint16 array, got {img.dtype} {img.shape}")
    maxval = 255 if img.dtype == np.uint8 else IMAGE_MAX
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii"))
        fh.write(img.astype(">u2" if maxval > 255 else np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM")
    w, h, maxval = (int(v) for v in fields[1:])
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    body = raw[pos + 1:]
    if len(body) != w * h * dtype.itemsize:
        raise DataError(f"{path}: expected {w * h * dtype.itemsize} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=dtype).reshape(h, w).astype(np.uint16 if maxval > 255 else np.uint8)


def write_mask_files(mask: SamplingMask, prefix) -> dict[str, Path]:
    """``prefix.npy`` (float32 0/1), ``prefix.pgm`` (0/255) and ``prefix.json`` metadata."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    paths = {k: prefix.with_name(prefix.name + "." + k) for k in ("npy", "pgm", "json")}
    np.save(paths["npy"], mask.data.astype(np.float32))
    view = mask.data if mask.data.ndim == 2 else mask.data.reshape(-1, mask.data.shape[-1])
    write_pgm(paths["pgm"], (view > 0).astype(np.uint8) * 255)
    paths["json"].write_text(json.dumps(mask.metadata(), indent=2, sort_keys=True) + "\n")
    return paths


def quantize(img: np.ndarray) -> tuple[np.ndarray, float]:
    """Map ``[0, 1]`` to ``0..65535``; returns the image and the clipped fraction."""
    img = np.asarray(img, dtype=np.float64)
    clipped = float(np.mean((img < 0) | (img > 1)))
    return np.round(np.clip(img, 0.0, 1.0) * IMAGE_MAX).astype(np.uint16), clipped


@dataclass
class Reconstruction:
    images: dict[str, np.ndarray]  # float64 [H, W], divided by the ground-truth peak
    metrics: dict[str, dict]  # "recon" / "zf" -> nmse, psnr, ssim
    ssim: float
    meta: dict

    def quantized(self) -> tuple[dict[str, np.ndarray], dict]:
        out, clip = {}, {}
        for k in TRIPTYCH:
            out[k], clip[k] = quantize(self.images[k])
        sidecar = {
            **self.meta,
            "files": {k: f"{k}.pgm" for k in TRIPTYCH},
            "dtype": "uint16", "format": "PGM P5, big-endian", "maxval": IMAGE_MAX,
            "normalization": "magnitude / max(ground truth), clipped to [0, 1], times 65535, rounded",
            "clipped_fraction": clip, "metrics": self.metrics, "ssim": self.ssim,
        }
        return out, sidecar


def reconstruct_frame(generator, rec: SubjectRecord, frame: int, mask: SamplingMask) -> Reconstruction:
    if not 0 <= frame < rec.frames:
        raise ValidationError(f"frame {frame} out of range for a subject with {rec.frames} frames")
    if mask.shape[-2:] != rec.kspace_full.shape[-2:]:
        raise ValidationError(f"mask {mask.shape} does not match subject k-space {rec.kspace_full.shape[-2:]}")
    ex = prepare_example(rec, frame, mask, generator.cfg.adjacent)
    recon = reconstruct_example(generator, ex).double().numpy()
    gt = ex.target.double().numpy()
    zf = ex.zero_filled.double().numpy()
    peak = float(gt.max())
    images = {"gt": gt / peak, "zf": zf / peak, "recon": recon / peak}
    metrics = {"recon": image_metrics(images["recon"], images["gt"]),
               "zf": image_metrics(images["zf"], images["gt"])}
    meta = {"frame": frame, "contrast": rec.contrast_tag, **{f"mask_{k}": v for k, v in mask.metadata().items()}}
    return Reconstruction(images, metrics, metric_ssim(images["recon"], images["gt"]), meta)


def write_reconstruction(out_dir, images: dict[str, np.ndarray], sidecar: dict) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k in TRIPTYCH:
        write_pgm(out / f"{k}.pgm", images[k])
    path = out / "reconstruction.json"
    path.write_text(json.dumps(finite_or_none(sidecar), indent=2, sort_keys=True, default=str) + "\n")
    return path


def load_generator(checkpoint):
    gen, _, payload = models_from_checkpoint(checkpoint)
    gen.eval()
    return gen, payload


def reconstruct_subject_file(checkpoint, subject_path, frame: int, trajectory: str, acceleration: float,
                             seed: int = 0, acs_lines: int | None = None) -> Reconstruction:
    gen, _ = load_generator(checkpoint)
    rec = read_subject(subject_path)
    H, W = rec.kspace_full.shape[-2:]
    mask = make_mask(trajectory, H, W, acceleration, gen.cfg.acs_lines if acs_lines is None else acs_lines, seed)
    result = reconstruct_frame(gen, rec, frame, mask)
    result.meta["subject"] = str(subject_path)
    return result


# training and evaluation

def train(cfg: ExperimentConfig, data_dir, out_dir, task: int | None = None, force: bool = False):
    subjects = load_subjects(data_dir)  # data errors surface before anything is written
    schedule = cfg.schedule(task)
    _check_sizes(subjects, cfg.generator.acs_lines)
    out = prepare_output_dir(out_dir, force)
    (out / "config.json").write_text(json.dumps(cfg.echo(), indent=2, sort_keys=True) + "\n")
    return run_curriculum(schedule, subjects, cfg.generator, cfg.discriminator, cfg.train, out,
                          config_echo=cfg.echo())


def _check_sizes(subjects: Sequence[SubjectRecord], acs_lines: int) -> None:
    shapes = {tuple(r.kspace_full.shape[-2:]) for r in subjects}
    for H, W in shapes:
        if acs_lines >= W:
            raise ValidationError(f"generator.acs_lines={acs_lines} must be smaller than the k-space width {W}")


def evaluate_dir(checkpoint, data_dir, trajectories: Sequence[str], accelerations: Sequence[float],
                 seed: int = 0, acs_lines: int | None = None, frames: Sequence[int] | None = None) -> MetricsReport:
    """Evaluate a checkpoint (``None`` = ground truth against itself) over a mask grid."""
    gen = None
    if checkpoint is not None:
        gen, _ = load_generator(checkpoint)
    acs = acs_lines if acs_lines is not None else (gen.cfg.acs_lines if gen is not None else 16)
    subjects = load_subjects(data_dir)
    shapes = {tuple(r.kspace_full.shape[-2:]) for r in subjects}
    if len(shapes) != 1:
        raise DataError(f"subjects in {data_dir} have differing k-space sizes {sorted(shapes)}")
    H, W = shapes.pop()
    masks = [make_mask(t, H, W, float(a), acs, seed) for t in trajectories for a in accelerations]
    return evaluate(gen, subjects, masks, frames=frames)


def write_metrics(report: MetricsReport, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"records": out / "metrics.jsonl", "summary": out / "summary.txt"}
    paths["records"].write_text(report.to_jsonl())
    paths["summary"].write_text(report.summary_table())
    return paths


def finite_or_none(x):
    """Recursively turn non-finite floats into ``None`` (strict JSON has no inf)."""
    if isinstance(x, float):
        return x if np.isfinite(x) else None
    if isinstance(x, dict):
        return {k: finite_or_none(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [finite_or_none(v) for v in x]
    return x

