"""Adversarial training loop, curriculum over acceleration factors, checkpoints and evaluation."""
from __future__ import annotations

import json
import logging
import pickle
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .adversarial import (
    DiscriminatorConfig,
    PatchDiscriminator,
    discriminator_loss,
    generator_adversarial_loss,
    make_conditioned_input,
)
from .cascade import Generator, GeneratorConfig, reconstruct_image
from .errors import CheckpointError, DataError, NumericalError, ValidationError
from .kspace import central_index, zero_filled_image
from .objectives import LossReport, generator_loss, image_metrics, kspace_to_image, step_loss
from .phantom import SubjectRecord, make_training_example
from .sampling import TRAJECTORIES, SamplingMask, make_mask

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lr: float = Field(0.002, gt=0)
    weight_decay: float = Field(0.1, ge=0)
    grad_clip: float = Field(0.1, gt=0)
    lr_step: int = Field(11, ge=1)
    lr_gamma: float = Field(0.1, gt=0)
    epochs: int = Field(12, ge=1)
    max_steps: int | None = Field(None, ge=1)
    batch_size: int = Field(1, ge=1)
    seed: int = 0
    lam: float = Field(1.0, ge=0)
    disc_update: Literal["every_step", "final"] = "every_step"
    adversarial: bool = True
    physical_loss: bool = True
    ssim_loss: bool = True
    stepwise: bool = True
    wrap_phase: bool = False
    divergence_guard: bool = True
    guard_factor: float = Field(10.0, gt=1)
    guard_warmup: int = Field(5, ge=1)
    threads: int = Field(1, ge=1)
    log_every: int = Field(1, ge=1)


class CurriculumStage(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    trajectories: tuple[str, ...] = ("uniform",)
    accelerations: tuple[float, ...] = (4.0,)
    epochs: int | None = Field(None, ge=1)
    max_steps: int | None = Field(None, ge=1)
    init: Literal["fresh", "transfer"] = "transfer"
    checkpoint: bool = True

    @model_validator(mode="after")
    def _check(self):
        if not self.trajectories or not self.accelerations:
            raise ValueError(f"stage {self.name!r}: trajectories and accelerations must be non-empty")
        for t in self.trajectories:
            if t not in TRAJECTORIES:
                raise ValueError(f"stage {self.name!r}: unknown trajectory {t!r}")
        if min(self.accelerations) < 1:
            raise ValueError(f"stage {self.name!r}: accelerations must be >= 1")
        return self


class CurriculumSchedule(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    stages: tuple[CurriculumStage, ...]

    @model_validator(mode="after")
    def _check(self):
        if not self.stages:
            raise ValueError("curriculum needs at least one stage")
        if self.stages[0].init != "fresh":
            raise ValueError("the first curriculum stage must start fresh")
        prev = 0.0
        for s in self.stages:
            if max(s.accelerations) < prev:
                raise ValueError(f"stage {s.name!r} is easier than the previous stage (curriculum goes low to high AF)")
            prev = max(s.accelerations)
        return self


def task1_schedule(epochs: int | None = None, max_steps: int | None = None) -> CurriculumSchedule:
    """Three uniform models, AF 4 -> 8 -> 10, each initialised from the previous one."""
    return CurriculumSchedule(stages=tuple(
        CurriculumStage(name=f"af{af}", trajectories=("uniform",), accelerations=(float(af),),
                        epochs=epochs, max_steps=max_steps, init="fresh" if i == 0 else "transfer")
        for i, af in enumerate((4, 8, 10))
    ))


def task2_schedule(epochs: int | None = None, max_steps: int | None = None) -> CurriculumSchedule:
    """One model over all trajectories, widening the AF range; only the last stage is saved."""
    ranges = ((4, 8), (4, 8, 12, 16), (4, 8, 12, 16, 20, 24))
    return CurriculumSchedule(stages=tuple(
        CurriculumStage(name=f"af{r[0]}-{r[-1]}", trajectories=TRAJECTORIES,
                        accelerations=tuple(float(a) for a in r), epochs=epochs, max_steps=max_steps,
                        init="fresh" if i == 0 else "transfer", checkpoint=i == len(ranges) - 1)
        for i, r in enumerate(ranges)
    ))


@dataclass
class Example:
    k0: torch.Tensor  # [T, C, H, W], scaled
    kG: torch.Tensor  # [T, C, H, W], scaled
    mask: torch.Tensor  # [H, W]
    zero_filled: torch.Tensor  # [H, W]
    target: torch.Tensor  # [H, W]
    scale: float
    meta: dict = field(default_factory=dict)

    @property
    def k_gt_central(self) -> torch.Tensor:
        return self.kG[central_index(self.kG.shape[0])]


def prepare_example(rec: SubjectRecord, frame: int, mask: SamplingMask, adjacent: int,
                    meta: dict | None = None, dtype=torch.complex64) -> Example:
    """Undersample one frame and scale it so the zero-filled image peaks at 1."""
    k0, kG = make_training_example(rec, frame, mask, adjacent)
    scale = float(zero_filled_image(k0).max())
    if not scale > 0:
        raise DataError(f"zero-filled image of frame {frame} is empty")
    k0 = (k0 / scale).to(dtype)
    kG = (kG / scale).to(dtype)
    info = {"frame": frame, "trajectory": mask.trajectory, "acceleration": mask.acceleration,
            "contrast": rec.contrast_tag}
    info.update(meta or {})
    return Example(k0, kG, mask.tensor(kG.real.dtype), zero_filled_image(k0), zero_filled_image(kG), scale, info)


@lru_cache(maxsize=512)
def _cached_mask(trajectory: str, H: int, W: int, af: float, acs: int, seed: int) -> SamplingMask:
    return make_mask(trajectory, H, W, af, acs, seed)


def clip_gradients(parameters, max_norm: float) -> float:
    """Clip the global gradient norm in place; returns the norm before clipping."""
    return float(torch.nn.utils.clip_grad_norm_(list(parameters), max_norm))


class DivergenceGuard:
    """Flags a step whose loss exceeds ``factor`` times the running mean of the current epoch."""

    def __init__(self, factor: float = 10.0, warmup: int = 5):
        self.factor, self.warmup = factor, warmup
        self.reset()

    def reset(self):
        self.total, self.count = 0.0, 0

    def should_skip(self, loss: float) -> bool:
        if self.count >= self.warmup and loss > self.factor * (self.total / self.count):
            return True
        self.total += loss
        self.count += 1
        return False


def _check_finite(named):
    for name, value in named:
        if not torch.isfinite(value).all():
            raise NumericalError(f"non-finite value in {name}")


def _disc_pair(target, candidate, zero_filled, peak):
    real = make_conditioned_input(target / peak, zero_filled / peak).unsqueeze(0)
    fake = make_conditioned_input(candidate / peak, zero_filled / peak).unsqueeze(0)
    return real, fake


def train_step(batch: Example | Sequence[Example], generator: Generator, discriminator: PatchDiscriminator,
               opt_g: torch.optim.Optimizer, opt_d: torch.optim.Optimizer, config: TrainConfig,
               guard: DivergenceGuard | None = None) -> LossReport:
    """One generator update over ``batch``, with discriminator updates interleaved per reconstructor step.

    For each example the reconstructor steps run in order; after step ``t`` the
    step loss is recorded and (unless ``disc_update == "final"``) the
    discriminator takes one optimizer step on (ground truth, step-``t`` output)
    pairs. The adversarial generator term uses the final output. Generator,
    sensitivity estimator and step sizes then take a single clipped AdamW step.
    """
    examples = [batch] if isinstance(batch, Example) else list(batch)
    generator.train()
    discriminator.train()
    gen_params = [p for p in generator.parameters() if p.requires_grad]
    disc_params = list(discriminator.parameters())
    n_steps = len(generator.steps)
    opt_g.zero_grad(set_to_none=True)
    reports = []

    for ex in examples:
        report = LossReport(lam=config.lam)
        step_totals = []
        peak = ex.target.max().clamp_min(1e-12)
        kg_c = ex.k_gt_central

        def on_step(t, k_c, ex=ex, report=report, step_totals=step_totals, peak=peak, kg_c=kg_c):
            total, phys, ssim = step_loss(k_c, kg_c, config.wrap_phase, config.physical_loss, config.ssim_loss)
            _check_finite([(f"step{t}.physical", phys), (f"step{t}.ssim", ssim)])
            step_totals.append(total)
            report.physical.append(float(phys.detach()))
            report.ssim.append(float(ssim.detach()))
            report.step.append(float(total.detach()))
            update_now = config.disc_update == "every_step" or t == n_steps - 1
            if config.adversarial and update_now:
                with torch.no_grad():
                    fake_img = kspace_to_image(k_c.detach())
                real_in, fake_in = _disc_pair(ex.target, fake_img, ex.zero_filled, peak)
                opt_d.zero_grad(set_to_none=True)
                d_loss = discriminator_loss(discriminator(real_in), discriminator(fake_in))
                _check_finite([(f"step{t}.discriminator", d_loss)])
                d_loss.backward()
                clip_gradients(disc_params, config.grad_clip)
                opt_d.step()
                report.disc.append(float(d_loss.detach()))

        out = generator(ex.k0, ex.mask, step_callback=on_step)
        if n_steps == 0:
            raise ValidationError("training needs at least one reconstructor")
        used = step_totals if config.stepwise else step_totals[-1:]
        if config.adversarial:
            for p in disc_params:
                p.requires_grad_(False)
            try:
                final_img = reconstruct_image(out.k_final)
                _, fake_in = _disc_pair(ex.target, final_img, ex.zero_filled, peak)
                adv = generator_adversarial_loss(discriminator(fake_in))
            finally:
                for p in disc_params:
                    p.requires_grad_(True)
        else:
            adv = out.k_final.real.new_zeros(())
        total = generator_loss(used, adv, config.lam)
        _check_finite([("adversarial", adv), ("generator", total)])
        report.stepwise_sum = float(sum(float(s.detach()) for s in used))
        report.adversarial = float(adv.detach())
        report.generator = float(total.detach())
        if guard is not None and guard.should_skip(report.generator):
            report.skipped = True
            log.warning("generator loss %.4g exceeds guard; step skipped", report.generator)
        else:
            (total / len(examples)).backward()
        reports.append(report)

    skipped = any(r.skipped for r in reports)
    if skipped:
        opt_g.zero_grad(set_to_none=True)
    else:
        clip_gradients(gen_params, config.grad_clip)
        opt_g.step()
    return _mean_report(reports, skipped)


def _mean_report(reports: list[LossReport], skipped: bool) -> LossReport:
    if len(reports) == 1:
        reports[0].skipped = skipped
        return reports[0]
    n = len(reports)
    mean_list = lambda attr: [sum(v) / n for v in zip(*(getattr(r, attr) for r in reports))]  # noqa: E731
    mean = lambda attr: sum(getattr(r, attr) for r in reports) / n  # noqa: E731
    return LossReport(
        physical=mean_list("physical"), ssim=mean_list("ssim"), step=mean_list("step"),
        disc=mean_list("disc"), stepwise_sum=mean("stepwise_sum"), adversarial=mean("adversarial"),
        generator=mean("generator"), lam=reports[0].lam, skipped=skipped,
    )


def seed_everything(seed: int, threads: int = 1) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2 ** 32)
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True)


class Trainer:
    """Owns the models, optimizers and schedulers for one training run."""

    def __init__(self, gen_cfg: GeneratorConfig, disc_cfg: DiscriminatorConfig, config: TrainConfig,
                 dtype=torch.float32):
        seed_everything(config.seed, config.threads)
        self.gen_cfg, self.disc_cfg, self.config = gen_cfg, disc_cfg, config
        self.generator = Generator(gen_cfg).to(dtype)
        self.discriminator = PatchDiscriminator(disc_cfg).to(dtype)
        self.complex_dtype = torch.complex128 if dtype == torch.float64 else torch.complex64
        self.reset_optimizers()
        self.global_step = 0
        self.epoch = 0
        self.guard = DivergenceGuard(config.guard_factor, config.guard_warmup) if config.divergence_guard else None

    def reset_optimizers(self):
        c = self.config
        self.opt_g = torch.optim.AdamW(self.generator.parameters(), lr=c.lr, weight_decay=c.weight_decay)
        self.opt_d = torch.optim.AdamW(self.discriminator.parameters(), lr=c.lr, weight_decay=c.weight_decay)
        self.sched_g = torch.optim.lr_scheduler.StepLR(self.opt_g, step_size=c.lr_step, gamma=c.lr_gamma)
        self.sched_d = torch.optim.lr_scheduler.StepLR(self.opt_d, step_size=c.lr_step, gamma=c.lr_gamma)

    @property
    def lr(self) -> float:
        return self.opt_g.param_groups[0]["lr"]

    def step(self, batch) -> LossReport:
        report = train_step(batch, self.generator, self.discriminator, self.opt_g, self.opt_d,
                            self.config, self.guard)
        self.global_step += 1
        return report

    def end_epoch(self):
        self.epoch += 1
        self.sched_g.step()
        self.sched_d.step()
        if self.guard is not None:
            self.guard.reset()

    def fit(self, subjects: Sequence[SubjectRecord], trajectories=("uniform",), accelerations=(4.0,),
            epochs: int | None = None, max_steps: int | None = None, log_file=None, stage: str = "",
            stream_seed: int | None = None, callback=None) -> list[LossReport]:
        """Train over every (subject, frame) example, shuffled per epoch.

        Each example gets a (trajectory, AF) pair drawn uniformly from the grid.
        ``max_steps`` stops early (counted in optimizer steps); otherwise
        ``epochs`` (default from config) full passes run.
        """
        c = self.config
        epochs = epochs or c.epochs
        max_steps = max_steps or c.max_steps
        rng = np.random.default_rng([c.seed if stream_seed is None else stream_seed, 7919])
        index = [(s, f) for s, rec in enumerate(subjects) for f in range(rec.frames)]
        if not index:
            raise DataError("training set is empty")
        grid = [(t, float(a)) for t in trajectories for a in accelerations]
        reports = []
        steps_done = 0
        while True:
            order = rng.permutation(len(index))
            for start in range(0, len(order), c.batch_size):
                batch = []
                for j in order[start:start + c.batch_size]:
                    s, f = index[j]
                    traj, af = grid[rng.integers(len(grid))]
                    mseed = 0 if traj == "uniform" else int(rng.integers(2 ** 31))
                    rec = subjects[s]
                    mask = _cached_mask(traj, rec.kspace_full.shape[2], rec.kspace_full.shape[3], af,
                                        self.gen_cfg.acs_lines, mseed)
                    batch.append(prepare_example(rec, f, mask, self.gen_cfg.adjacent, {"subject": s},
                                                 self.complex_dtype))
                report = self.step(batch)
                reports.append(report)
                steps_done += 1
                if log_file is not None and (self.global_step % c.log_every == 0):
                    fields = report.to_dict()
                    fields["step_loss"] = fields.pop("step")
                    write_log_record(log_file, {
                        **fields, "stage": stage, "epoch": self.epoch, "step": self.global_step, "lr": self.lr,
                        "eta": self.generator.etas(),
                    })
                if callback is not None:
                    callback(self, report)
                if max_steps is not None and steps_done >= max_steps:
                    return reports
            self.end_epoch()
            if max_steps is None and self.epoch >= epochs:
                return reports


def write_log_record(path, record: dict) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


# checkpoints

def named_tensors(generator: Generator, discriminator: PatchDiscriminator | None = None) -> dict[str, torch.Tensor]:
    """Flat tensor map: ``generator.step{t}.*``, ``eta.{t}``, ``sme.*`` and ``disc.*``."""
    out = {}
    for t, step in enumerate(generator.steps):
        for k, v in step.refiner.state_dict().items():
            out[f"generator.step{t}.{k}"] = v
        out[f"eta.{t}"] = step.eta.detach()
    for k, v in generator.sme.net.state_dict().items():
        out[f"sme.{k}"] = v
    if discriminator is not None:
        for k, v in discriminator.state_dict().items():
            out[f"disc.{k}"] = v
    return {k: v.detach().cpu().clone() for k, v in out.items()}


def save_checkpoint(path, generator: Generator, discriminator: PatchDiscriminator | None = None,
                    config: dict | None = None, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "tensors": named_tensors(generator, discriminator),
        "generator_config": generator.cfg.model_dump_json(),
        "discriminator_config": discriminator.cfg.model_dump_json() if discriminator is not None else None,
        "config": json.dumps(config or {}, sort_keys=True),
        "meta": json.dumps(meta or {}, sort_keys=True),
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path) -> dict:
    try:
        payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    except (OSError, RuntimeError, EOFError, ValueError, pickle.UnpicklingError) as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc})") from exc
    if not isinstance(payload, dict) or payload.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    return payload


def apply_tensors(tensors: dict, generator: Generator, discriminator: PatchDiscriminator | None = None) -> None:
    """Load a flat tensor map with strict name matching and shape checks."""
    expected = named_tensors(generator, discriminator)
    wanted = set(expected)
    given = {k for k in tensors if discriminator is not None or not k.startswith("disc.")}
    missing = sorted(wanted - given)
    unexpected = sorted(given - wanted)
    mismatched = [f"{k}: checkpoint {tuple(tensors[k].shape)} vs model {tuple(expected[k].shape)}"
                  for k in sorted(wanted & given) if tensors[k].shape != expected[k].shape]
    if missing or unexpected or mismatched:
        lines = []
        if missing:
            lines.append("missing: " + ", ".join(missing))
        if unexpected:
            lines.append("unexpected: " + ", ".join(unexpected))
        if mismatched:
            lines.append("shape mismatch: " + "; ".join(mismatched))
        raise CheckpointError("incompatible checkpoint\n  " + "\n  ".join(lines))

    def sub(prefix):
        return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}

    with torch.no_grad():
        for t, step in enumerate(generator.steps):
            step.refiner.load_state_dict(sub(f"generator.step{t}."))
            step.eta.copy_(tensors[f"eta.{t}"])
        generator.sme.net.load_state_dict(sub("sme."))
        if discriminator is not None:
            discriminator.load_state_dict(sub("disc."))


def models_from_checkpoint(path, dtype=torch.float32) -> tuple[Generator, PatchDiscriminator | None, dict]:
    payload = load_checkpoint(path)
    gen = Generator(GeneratorConfig.model_validate_json(payload["generator_config"])).to(dtype)
    disc = None
    if payload.get("discriminator_config"):
        disc = PatchDiscriminator(DiscriminatorConfig.model_validate_json(payload["discriminator_config"])).to(dtype)
    apply_tensors(payload["tensors"], gen, disc)
    return gen, disc, payload


@dataclass
class StageResult:
    name: str
    checkpoint: Path | None
    steps: int
    final_report: LossReport


def run_curriculum(schedule: CurriculumSchedule, subjects: Sequence[SubjectRecord], gen_cfg: GeneratorConfig,
                   disc_cfg: DiscriminatorConfig, config: TrainConfig, out_dir,
                   config_echo: dict | None = None) -> list[StageResult]:
    """Train each stage in order, transferring weights where the stage asks for it."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_file = out_dir / "train_log.jsonl"
    results = []
    prev = None
    for i, stage in enumerate(schedule.stages):
        trainer = Trainer(gen_cfg, disc_cfg, config.model_copy(update={"seed": config.seed + i}))
        if stage.init == "transfer" and prev is not None:
            apply_tensors(named_tensors(prev.generator, prev.discriminator), trainer.generator, trainer.discriminator)
        reports = trainer.fit(subjects, stage.trajectories, stage.accelerations, stage.epochs, stage.max_steps,
                              log_file=log_file, stage=stage.name)
        ckpt = None
        if stage.checkpoint:
            ckpt = save_checkpoint(out_dir / f"stage{i}_{stage.name}.pt", trainer.generator, trainer.discriminator,
                                   config=config_echo, meta={"stage": stage.name, "index": i,
                                                             "steps": trainer.global_step,
                                                             "trajectories": list(stage.trajectories),
                                                             "accelerations": list(stage.accelerations)})
        results.append(StageResult(stage.name, ckpt, trainer.global_step, reports[-1]))
        log.info("stage %s finished after %d steps", stage.name, trainer.global_step)
        prev = trainer
    return results


# evaluation

@dataclass
class MetricsReport:
    records: list[dict] = field(default_factory=list)

    GROUP_KEYS = ("contrast", "trajectory", "acceleration")

    def aggregate(self, by: Sequence[str] = ("contrast", "acceleration")) -> dict:
        groups: dict[tuple, list[dict]] = {}
        for r in self.records:
            groups.setdefault(tuple(r[k] for k in by), []).append(r)
        groups[("all",) * len(by)] = list(self.records)
        out = {}
        for key, rows in groups.items():
            stats = {}
            for prefix in ("recon", "zf"):
                for m in ("nmse", "psnr", "ssim"):
                    vals = np.array([row[f"{prefix}_{m}"] for row in rows], dtype=np.float64)
                    stats[f"{prefix}_{m}_mean"] = float(vals.mean())
                    # identical inf PSNRs (identity evaluation) have zero spread, not nan
                    same = bool(np.all(vals == vals[0]))
                    stats[f"{prefix}_{m}_std"] = 0.0 if same else float(vals.std())
            stats["count"] = len(rows)
            out[key] = stats
        return out

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def summary_table(self, by: Sequence[str] = ("contrast", "acceleration")) -> str:
        """Rows of ``NMSE/PSNR/SSIM`` triples for the reconstruction and the zero-filled baseline."""
        header = " | ".join(list(by) + ["n", "recon NMSE/PSNR/SSIM", "zero-filled NMSE/PSNR/SSIM"])
        lines = [header, "-" * len(header)]
        for key, s in sorted(self.aggregate(by).items(), key=lambda kv: tuple(str(x) for x in kv[0])):
            cells = [str(k) for k in key] + [str(s["count"]), _triple(s, "recon"), _triple(s, "zf")]
            lines.append(" | ".join(cells))
        return "\n".join(lines) + "\n"


def _triple(stats: dict, prefix: str) -> str:
    return f"{stats[f'{prefix}_nmse_mean']:.4f}/{stats[f'{prefix}_psnr_mean']:.2f}/{stats[f'{prefix}_ssim_mean']:.4f}"


@torch.no_grad()
def reconstruct_example(generator: Generator, ex: Example) -> torch.Tensor:
    generator.eval()
    dtype = next(generator.parameters()).dtype
    ctype = torch.complex128 if dtype == torch.float64 else torch.complex64
    out = generator(ex.k0.to(ctype), ex.mask.to(dtype))
    return reconstruct_image(out.k_final)


def evaluate(generator: Generator | None, subjects: Sequence[SubjectRecord], masks: Sequence[SamplingMask],
             adjacent: int | None = None, frames: Sequence[int] | None = None) -> MetricsReport:
    """Metrics of every (subject, frame, mask) reconstruction against ground truth.

    Images are compared after scaling by the ground-truth maximum. With
    ``generator=None`` the ground truth is evaluated against itself.
    """
    adjacent = adjacent if adjacent is not None else (generator.cfg.adjacent if generator is not None else 1)
    report = MetricsReport()
    for s, rec in enumerate(subjects):
        if rec.image_rss is None or rec.kspace_full is None:
            raise DataError(f"subject {s} has no ground truth")
        for mask in masks:
            for f in (frames if frames is not None else range(rec.frames)):
                ex = prepare_example(rec, f, mask, adjacent, {"subject": s})
                gt = ex.target
                recon = gt if generator is None else reconstruct_example(generator, ex)
                peak = float(gt.max())
                r = image_metrics(recon / peak, gt / peak)
                z = image_metrics(ex.zero_filled / peak, gt / peak)
                report.records.append({
                    "subject": s, "frame": f, "contrast": rec.contrast_tag, "trajectory": mask.trajectory,
                    "acceleration": mask.acceleration,
                    **{f"recon_{k}": v for k, v in r.items()}, **{f"zf_{k}": v for k, v in z.items()},
                })
    return report


def load_subjects(data_dir) -> list[SubjectRecord]:
    from .phantom import read_subject

    files = sorted(Path(data_dir).glob("*.h5"))
    if not files:
        raise DataError(f"no subject files (*.h5) in {data_dir}")
    return [read_subject(p) for p in files]
