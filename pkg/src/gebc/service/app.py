"""HTTP service exposing the pipeline commands.

Every pipeline error class carries an http_status; the handler maps it to a
structured payload that also names the class, so thin clients can translate
back to process exit codes.
"""

from __future__ import annotations

from importlib import metadata

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ..config import RunConfig, desk_profile, load_run_config
from ..errors import GebcError
from ..runs import cmd_caption, cmd_evaluate, cmd_extract, cmd_train
from .schemas import (CaptionRequest, CaptionResponse, ConfigSource,
                      ErrorPayload, EvaluateRequest, EvaluateResponse,
                      ExtractRequest, ExtractResponse, HealthResponse,
                      TrainRequest, TrainResponse)


def _package_version() -> str:
    try:
        return metadata.version("gebc")
    except metadata.PackageNotFoundError:
        return "unknown"


def build_config(source: ConfigSource) -> RunConfig:
    overrides = source.overrides or {}
    if source.config is not None:
        return load_run_config(source.config, overrides)
    if source.config_path == "desk":
        return desk_profile(**overrides)
    return load_run_config(source.config_path, overrides)


def create_app() -> FastAPI:
    app = FastAPI(title="gebc", version=_package_version())

    @app.exception_handler(GebcError)
    async def _gebc_error(request: Request, exc: GebcError) -> JSONResponse:
        payload = ErrorPayload(
            error=type(exc).__name__, detail=str(exc), exit_code=exc.exit_code
        )
        return JSONResponse(status_code=exc.http_status,
                            content=payload.model_dump())

    @app.get("/health", response_model=HealthResponse)
    async def health() -> HealthResponse:
        return HealthResponse(status="ok", version=_package_version())

    @app.post("/extract", response_model=ExtractResponse)
    async def extract(req: ExtractRequest) -> ExtractResponse:
        summary = cmd_extract(build_config(req), split=req.split,
                              overwrite=req.overwrite)
        return ExtractResponse(**summary.as_dict())

    @app.post("/train", response_model=TrainResponse)
    async def train(req: TrainRequest) -> TrainResponse:
        result = cmd_train(build_config(req), split=req.split, resume=req.resume)
        return TrainResponse(**result)

    @app.post("/caption", response_model=CaptionResponse)
    async def caption(req: CaptionRequest) -> CaptionResponse:
        result = cmd_caption(build_config(req), checkpoint=req.checkpoint,
                             split=req.split, output=req.output, force=req.force)
        return CaptionResponse(**result)

    @app.post("/evaluate", response_model=EvaluateResponse)
    async def evaluate(req: EvaluateRequest) -> EvaluateResponse:
        result = cmd_evaluate(build_config(req), req.predictions,
                              split=req.split, spice=req.spice)
        report = result["report"]
        return EvaluateResponse(
            per_type=report["per_type"],
            overall=report["overall"],
            report_path=result["report_path"],
            breakdown_path=result["breakdown_path"],
        )

    return app
