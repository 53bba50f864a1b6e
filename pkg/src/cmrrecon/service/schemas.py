from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field

from ..sampling import TRAJECTORIES


class _Request(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Health(BaseModel):
    status: str = "ok"
    version: str
    trajectories: list[str] = list(TRAJECTORIES)


class MaskRequest(_Request):
    trajectory: str = "uniform"
    acceleration: float = Field(4.0, ge=1)
    height: int = Field(64, ge=1)
    width: int = Field(64, ge=1)
    acs_lines: int = Field(16, ge=0)
    seed: int = 0


class MaskResponse(BaseModel):
    metadata: dict
    mask: list[list[int]]


class MetricsRequest(_Request):
    pred: list[list[float]]
    gt: list[list[float]]


class MetricsResponse(BaseModel):
    nmse: float
    psnr: float | None = Field(description="dB; null when the images are identical (infinite PSNR)")
    ssim: float


class ReconstructRequest(_Request):
    checkpoint: str
    subject: str
    frame: int = Field(0, ge=0)
    trajectory: str = "uniform"
    acceleration: float = Field(4.0, ge=1)
    seed: int = 0
    acs_lines: int | None = Field(None, ge=0)


class ReconstructResponse(BaseModel):
    ssim: float
    height: int
    width: int
    images: dict[str, str] = Field(description="base64 of big-endian uint16 pixels, row major")
    sidecar: dict


class EvaluateRequest(_Request):
    checkpoint: str | None = None
    data_dir: str
    trajectories: list[str] = ["uniform"]
    accelerations: list[float] = [4.0]
    seed: int = 0
    acs_lines: int | None = Field(None, ge=0)
    frames: list[int] | None = None


class EvaluateResponse(BaseModel):
    records: list[dict]
    summary: str


class ErrorResponse(BaseModel):
    error: str
    detail: str
    exit_code: int
