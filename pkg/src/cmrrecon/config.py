"""Experiment configuration: one YAML file, validated in full before any work starts."""
from __future__ import annotations

import os
from pathlib import Path
from typing import Literal

import pydantic
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .adversarial import DiscriminatorConfig
from .cascade import GeneratorConfig
from .errors import ConfigError
from .phantom import CONTRAST_TAGS
from .sampling import TRAJECTORIES
from .trainer import CurriculumSchedule, TrainConfig, task1_schedule, task2_schedule

OUTPUT_ROOT_ENV = "CMRRECON_OUTPUT_ROOT"


class PhantomDefaults(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    height: int = Field(64, ge=8)
    width: int = Field(64, ge=8)
    frames: int = Field(8, ge=1)
    coils: int = Field(4, ge=1)
    noise_std: float = Field(0.0, ge=0)
    pulsatility: float = Field(0.12, ge=0, lt=0.5)
    contrasts: tuple[str, ...] = ("cine",)
    seed: int = 0

    @field_validator("contrasts")
    @classmethod
    def _tags(cls, v):
        bad = [t for t in v if t not in CONTRAST_TAGS]
        if bad or not v:
            raise ValueError(f"contrast tags must be a non-empty subset of {CONTRAST_TAGS}, got {list(v)}")
        return v


class SamplingGrid(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    trajectories: tuple[str, ...] = ("uniform",)
    accelerations: tuple[float, ...] = (4.0,)
    seed: int = 0

    @field_validator("trajectories")
    @classmethod
    def _traj(cls, v):
        bad = [t for t in v if t not in TRAJECTORIES]
        if bad or not v:
            raise ValueError(f"trajectories must be a non-empty subset of {TRAJECTORIES}, got {list(v)}")
        return v

    @field_validator("accelerations")
    @classmethod
    def _af(cls, v):
        if not v or min(v) < 1:
            raise ValueError("accelerations must be a non-empty list of values >= 1")
        return v


class Paths(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    data_dir: str = "data"
    out_dir: str = "runs/default"


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    phantom: PhantomDefaults = PhantomDefaults()
    sampling: SamplingGrid = SamplingGrid()
    generator: GeneratorConfig = GeneratorConfig()
    discriminator: DiscriminatorConfig = DiscriminatorConfig()
    train: TrainConfig = TrainConfig()
    task: Literal[1, 2] | None = None
    curriculum: CurriculumSchedule | None = None
    paths: Paths = Paths()

    def schedule(self, task: int | None = None) -> CurriculumSchedule:
        """Explicit curriculum if given, else the task preset, else one plain stage."""
        task = task if task is not None else self.task
        if self.curriculum is not None and task is None:
            return self.curriculum
        if task == 1:
            return task1_schedule(max_steps=self.train.max_steps)
        if task == 2:
            return task2_schedule(max_steps=self.train.max_steps)
        from .trainer import CurriculumStage

        return CurriculumSchedule(stages=(CurriculumStage(
            name="train", trajectories=self.sampling.trajectories, accelerations=self.sampling.accelerations,
            max_steps=self.train.max_steps, init="fresh"),))

    def echo(self) -> dict:
        """Config without paths, stored in checkpoints (paths would break run-to-run bit equality)."""
        return self.model_dump(mode="json", exclude={"paths"})


def _format_errors(exc: pydantic.ValidationError) -> str:
    lines = []
    for err in exc.errors():
        key = ".".join(str(p) for p in err["loc"]) or "<root>"
        if err["type"] == "extra_forbidden":
            lines.append(f"unknown config key '{key}'")
        else:
            lines.append(f"invalid value for '{key}': {err['msg']}")
    return "; ".join(lines)


def _set_path(tree: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = tree
    for p in parts[:-1]:
        nxt = node.get(p)
        if nxt is None:
            nxt = node[p] = {}
        elif not isinstance(nxt, dict):
            raise ConfigError(f"cannot override '{dotted}': '{p}' is not a section")
        node = nxt
    node[parts[-1]] = value


def parse_override(item: str) -> tuple[str, object]:
    """``section.key=value``; the value is parsed as YAML (numbers, lists, booleans)."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {item!r} has an empty key")
    try:
        return key, yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {item!r}: value is not valid YAML ({exc})") from exc


def build_config(tree: dict | None = None, overrides=()) -> ExperimentConfig:
    tree = dict(tree or {})
    for item in overrides:
        if isinstance(item, str):
            key, value = parse_override(item)
        else:
            key, value = item
        _set_path(tree, key, value)
    try:
        return ExperimentConfig.model_validate(tree)
    except pydantic.ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from exc


def load_config(path=None, overrides=()) -> ExperimentConfig:
    tree = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            tree = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
        if not isinstance(tree, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    return build_config(tree, overrides)


def output_root() -> Path | None:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return Path(root) if root else None


def resolve_output(path) -> Path:
    """Relative output paths land under ``$CMRRECON_OUTPUT_ROOT`` when it is set."""
    path = Path(path)
    root = output_root()
    if root is not None and not path.is_absolute():
        return root / path
    return path
