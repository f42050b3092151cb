"""Layered, schema-validated run configuration (defaults < file < overrides).

Class defaults mirror the full-scale reference settings; the desk-scale
profile overrides them with tiny synthetic components so the whole pipeline
runs in seconds without pretrained weights.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .features import ExtractorKind


class ExtractorSpec(BaseModel):
    name: str
    kind: ExtractorKind
    channels: int
    stride: int
    tokens_per_frame: int = 1
    impl: str = "synthetic"
    max_detections: int = 12  # synthetic region impl only


class AdapterSettings(BaseModel):
    d_0: int = 768
    q_0: int = 32
    q_1: int = 32
    num_layers: int = 2
    num_heads: int = 8
    feedforward_dim: int = 0
    max_positions: int = 256
    boundary_pe_dim: int = 128
    boundary_pe_base: float = 10000.0


class LMSettings(BaseModel):
    plugin: str = "tiny"
    hidden_dim: int = 64
    vocab_size: int = 128
    num_layers: int = 2
    num_heads: int = 4
    max_seq_len: int = 512
    seed: int = 1234


class TrainSettings(BaseModel):
    weight_decay: float = 0.001
    batch_size: int = 16
    lr_init: float = 8e-5
    lr_min: float = 1e-5
    lr_warmup_start: float = 1e-6
    warmup_fraction: float = 0.1
    warmup_steps: int | None = None
    max_epochs: int = 5
    max_steps: int | None = None
    grad_clip: float | None = 1.0
    decay: Literal["cosine", "linear"] = "cosine"

    @model_validator(mode="after")
    def _check_rates(self) -> "TrainSettings":
        if not (0 < self.lr_warmup_start <= self.lr_min <= self.lr_init):
            raise ValueError("require 0 < lr_warmup_start <= lr_min <= lr_init")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        return self


class RunConfig(BaseModel):
    annotations: str | None = None
    cache_dir: str | None = None
    output_dir: str = "runs/default"
    target_len: int  # L: required, no silent default
    n_o: int = 50
    max_caption_len: int = 96
    seed: int = 0
    deterministic: bool = True
    cache_only: bool = False
    rezero_padded_regions: bool = False
    extractors: list[ExtractorSpec]
    adapter: AdapterSettings = AdapterSettings()
    lm: LMSettings = LMSettings()
    train: TrainSettings = TrainSettings()

    @field_validator("target_len", "n_o", "max_caption_len")
    @classmethod
    def _positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @model_validator(mode="after")
    def _check_extractors(self) -> "RunConfig":
        primaries = [e for e in self.extractors if e.kind is ExtractorKind.PRIMARY]
        if len(primaries) != 1:
            raise ValueError(f"exactly one primary extractor required, got {len(primaries)}")
        if primaries[0].channels != self.adapter.d_0:
            raise ValueError(
                f"primary extractor channels {primaries[0].channels} must equal "
                f"d_0 {self.adapter.d_0}"
            )
        names = [e.name for e in self.extractors]
        if len(set(names)) != len(names):
            raise ValueError("extractor names must be unique")
        return self

    def model_hash(self) -> str:
        """Hash of the shape-relevant subset; guards checkpoint compatibility."""
        subset = {
            "target_len": self.target_len,
            "n_o": self.n_o,
            "extractors": [e.model_dump(mode="json") for e in self.extractors],
            "adapter": self.adapter.model_dump(mode="json"),
            "lm": self.lm.model_dump(mode="json"),
        }
        blob = json.dumps(subset, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def snapshot_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, indent=2)


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_run_config(
    source: str | Path | dict | None = None,
    overrides: dict | None = None,
    text: str | None = None,
) -> RunConfig:
    """Build a validated RunConfig from a file path, raw text, or dict, with
    overrides merged on top."""
    data: dict[str, Any] = {}
    if source is not None:
        if isinstance(source, dict):
            data = copy.deepcopy(source)
        else:
            try:
                text = Path(source).read_text(encoding="utf-8")
            except OSError as e:
                raise ConfigError(f"cannot read config {source}: {e}") from e
    if text is not None:
        try:
            parsed = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ConfigError(f"config is not valid YAML/JSON: {e}") from e
        if not isinstance(parsed, dict):
            raise ConfigError("config document must be a mapping")
        data = _deep_merge(data, parsed)
    if overrides:
        data = _deep_merge(data, overrides)
    try:
        return RunConfig(**data)
    except ValidationError as e:
        raise ConfigError(f"invalid run config: {e}") from e


def desk_profile(**overrides: Any) -> RunConfig:
    """Tiny all-synthetic profile powering tests and the acceptance suite."""
    base: dict[str, Any] = {
        "target_len": 8,
        "n_o": 5,
        "max_caption_len": 96,
        "seed": 0,
        "deterministic": True,
        "extractors": [
            {"name": "synth_primary", "kind": "primary", "channels": 32,
             "tokens_per_frame": 4, "stride": 12},
            {"name": "synth_frame", "kind": "frame_level", "channels": 48,
             "tokens_per_frame": 1, "stride": 8},
            {"name": "synth_region", "kind": "region_level", "channels": 24,
             "stride": 16, "impl": "synthetic_region", "max_detections": 12},
        ],
        "adapter": {"d_0": 32, "q_0": 4, "q_1": 4, "num_layers": 2,
                    "num_heads": 8, "max_positions": 128, "boundary_pe_dim": 32},
        "lm": {"plugin": "tiny", "hidden_dim": 64, "vocab_size": 128,
               "num_layers": 2, "num_heads": 4, "max_seq_len": 512, "seed": 1234},
        "train": {"batch_size": 8, "lr_init": 3e-2, "lr_min": 3e-3,
                  "lr_warmup_start": 3e-4, "warmup_steps": 20,
                  "max_epochs": 5, "weight_decay": 0.001},
    }
    return load_run_config(_deep_merge(base, overrides))
