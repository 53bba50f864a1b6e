from __future__ import annotations

import base64
from importlib.metadata import PackageNotFoundError, version

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .. import api
from ..errors import CMRReconError, DataError, NumericalError, ValidationError
from ..objectives import image_metrics
from ..sampling import TRAJECTORIES, make_mask
from .schemas import (
    EvaluateRequest,
    EvaluateResponse,
    Health,
    MaskRequest,
    MaskResponse,
    MetricsRequest,
    MetricsResponse,
    ReconstructRequest,
    ReconstructResponse,
)

_STATUS = {ValidationError: 422, DataError: 400, NumericalError: 500}


def _version() -> str:
    try:
        return version("cmrrecon")
    except PackageNotFoundError:
        return "0+unknown"


def _status(exc: CMRReconError) -> int:
    for cls, code in _STATUS.items():
        if isinstance(exc, cls):
            return code
    return 500


def _error(exc: Exception, status: int, exit_code: int) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": type(exc).__name__, "detail": str(exc),
                                                     "exit_code": exit_code})


def _check_trajectories(names) -> None:
    bad = [t for t in names if t not in TRAJECTORIES]
    if bad:
        raise ValidationError(f"unknown trajectory {bad[0]!r}; expected one of {TRAJECTORIES}")


def _encode(img: np.ndarray) -> str:
    return base64.b64encode(img.astype(">u2").tobytes()).decode("ascii")


def create_app() -> FastAPI:
    app = FastAPI(title="cmrrecon", version=_version())

    @app.exception_handler(CMRReconError)
    async def _domain_error(request: Request, exc: CMRReconError):
        return _error(exc, _status(exc), exc.exit_code)

    @app.exception_handler(RequestValidationError)
    async def _request_error(request: Request, exc: RequestValidationError):
        detail = "; ".join(f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in exc.errors())
        return JSONResponse(status_code=422, content={"error": "RequestValidationError", "detail": detail,
                                                      "exit_code": ValidationError.exit_code})

    @app.get("/health", response_model=Health)
    def health():
        return Health(version=_version())

    @app.post("/masks", response_model=MaskResponse)
    def masks(req: MaskRequest):
        _check_trajectories([req.trajectory])
        mask = make_mask(req.trajectory, req.height, req.width, req.acceleration, req.acs_lines, req.seed)
        return MaskResponse(metadata=mask.metadata(), mask=mask.data.astype(int).tolist())

    @app.post("/metrics", response_model=MetricsResponse)
    def metrics(req: MetricsRequest):
        pred, gt = np.asarray(req.pred, dtype=np.float64), np.asarray(req.gt, dtype=np.float64)
        if pred.ndim != 2 or pred.shape != gt.shape:
            raise ValidationError(f"pred {pred.shape} and gt {gt.shape} must be equal-shape 2D images")
        return MetricsResponse(**api.finite_or_none(image_metrics(pred, gt)))

    @app.post("/reconstruct", response_model=ReconstructResponse)
    def reconstruct(req: ReconstructRequest):
        _check_trajectories([req.trajectory])
        result = api.reconstruct_subject_file(req.checkpoint, req.subject, req.frame, req.trajectory,
                                              req.acceleration, req.seed, req.acs_lines)
        images, sidecar = result.quantized()
        H, W = images["gt"].shape
        return ReconstructResponse(ssim=result.ssim, height=H, width=W,
                                   images={k: _encode(v) for k, v in images.items()},
                                   sidecar=api.finite_or_none(sidecar))

    @app.post("/evaluate", response_model=EvaluateResponse)
    def evaluate(req: EvaluateRequest):
        _check_trajectories(req.trajectories)
        report = api.evaluate_dir(req.checkpoint, req.data_dir, req.trajectories, req.accelerations, req.seed,
                                  req.acs_lines, req.frames)
        return EvaluateResponse(records=api.finite_or_none(report.records), summary=report.summary_table())

    return app


def decode_image(text: str, height: int, width: int) -> np.ndarray:
    return np.frombuffer(base64.b64decode(text), dtype=">u2").reshape(height, width).astype(np.uint16)
