"""Request/response models for the HTTP service."""

from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, model_validator

Split = Literal["train", "val", "test"]


class ConfigSource(BaseModel):
    """Where the run configuration comes from.

    Exactly one of `config` (inline document) or `config_path` (server-side
    file, or the literal "desk" for the bundled desk-scale profile) plus
    optional `overrides` merged on top.
    """

    config: dict[str, Any] | None = None
    config_path: str | None = None
    overrides: dict[str, Any] | None = None

    @model_validator(mode="after")
    def _exactly_one_source(self) -> "ConfigSource":
        if (self.config is None) == (self.config_path is None):
            raise ValueError("provide exactly one of config or config_path")
        return self


class ExtractRequest(ConfigSource):
    split: Split | None = None
    overwrite: bool = False


class ExtractResponse(BaseModel):
    written: list[str]
    skipped: list[str]
    re_extracted: list[str]
    warnings: list[str]


class TrainRequest(ConfigSource):
    split: Split | None = None
    resume: str | None = None


class TrainResponse(BaseModel):
    steps: int
    epochs: int
    final_loss: float | None
    checkpoints: list[str]
    log: str
    config_hash: str
    frozen_checksum: str


class CaptionRequest(ConfigSource):
    checkpoint: str | None = None
    split: Split | None = None
    output: str | None = None
    force: bool = False


class CaptionResponse(BaseModel):
    predictions: str
    boundaries: int
    captions: int


class EvaluateRequest(ConfigSource):
    predictions: str
    split: Split | None = None
    spice: str | None = None


class TypeScoresPayload(BaseModel):
    rouge_l: float
    cider: float
    spice: float | None
    avg: float | None
    avg_no_spice: float


class EvaluateResponse(BaseModel):
    per_type: dict[str, TypeScoresPayload]
    overall: TypeScoresPayload
    report_path: str
    breakdown_path: str


class HealthResponse(BaseModel):
    status: Literal["ok"]
    version: str


class ErrorPayload(BaseModel):
    error: str
    detail: str
    exit_code: int
