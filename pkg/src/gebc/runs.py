"""Reproducible command implementations: extract, train, caption, evaluate.

Each command resolves its inputs from a validated RunConfig, writes a config
snapshot next to its outputs, and returns a JSON-safe summary. The service
endpoints and the CLI both call these functions.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from .config import RunConfig
from .data import (CaptionType, FeatureCacheEntry, VideoRecord,
                   load_annotations, store_features)
from .errors import (CacheMiss, ConfigError, CorruptCache, EmptyCorpus,
                     IoFailure)
from .features import VideoSource, cache_path, extract_raw, load_features
from .metrics import ScoreReport, evaluate, load_predictions
from .model import CaptioningModel
from .training import TrainResult, load_checkpoint, restore_checkpoint, train

PREDICTIONS_HEADER = "# gebc-predictions v1"

CACHE_DIR_ENV = "GEBC_CACHE_DIR"


def resolve_cache_dir(cfg: RunConfig) -> str | None:
    env = os.environ.get(CACHE_DIR_ENV)
    return env if env else cfg.cache_dir


def effective_config(cfg: RunConfig) -> RunConfig:
    """Apply environment overrides that beat the config file."""
    cache = resolve_cache_dir(cfg)
    if cache != cfg.cache_dir:
        return cfg.model_copy(update={"cache_dir": cache})
    return cfg


def resolve_annotations(cfg: RunConfig, split: str | None = None) -> Path:
    """A directory config entry selects {split}.json; a file is used as-is."""
    if cfg.annotations is None:
        raise ConfigError("config has no annotations path")
    base = Path(cfg.annotations)
    if base.is_dir():
        return base / f"{split or 'train'}.json"
    return base


def write_snapshot(cfg: RunConfig, out_dir: str | Path, command: str) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{command}_config.json"
        path.write_text(cfg.snapshot_json() + "\n", encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot write config snapshot in {out}: {e}") from e
    return path


@dataclass
class ExtractSummary:
    written: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    re_extracted: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "written": self.written,
            "skipped": self.skipped,
            "re_extracted": self.re_extracted,
            "warnings": self.warnings,
        }


def cmd_extract(cfg: RunConfig, split: str | None = None,
                overwrite: bool = False) -> ExtractSummary:
    """One cache file per (video, extractor); skips valid existing files."""
    cfg = effective_config(cfg)
    if cfg.cache_dir is None:
        raise ConfigError("extract requires cache_dir (or GEBC_CACHE_DIR)")
    records = load_annotations(resolve_annotations(cfg, split))
    model = CaptioningModel(cfg)
    summary = ExtractSummary()
    for record in records:
        video = VideoSource(record.video_id, record.num_frames, record.duration_sec)
        for ex in model.extractors:
            target = cache_path(cfg.cache_dir, video.video_id, ex.name)
            reason = None
            if target.exists():
                if overwrite:
                    reason = "overwrite"
                else:
                    try:
                        entry = load_features(target)
                        if entry.extractor_name != ex.name:
                            reason = "wrong extractor name"
                        else:
                            summary.skipped.append(str(target))
                            continue
                    except CorruptCache as e:
                        reason = str(e)
            feats = extract_raw(video, ex, cfg.n_o)
            store_features(
                FeatureCacheEntry(ex.name, tuple(feats.data.shape), feats.data),
                target,
            )
            if reason not in (None, "overwrite"):
                msg = f"re-extracted {target}: {reason}"
                warnings.warn(msg)
                summary.warnings.append(msg)
                summary.re_extracted.append(str(target))
            else:
                summary.written.append(str(target))
    write_snapshot(cfg, cfg.cache_dir, "extract")
    return summary


def cmd_train(cfg: RunConfig, split: str | None = None,
              resume: str | Path | None = None,
              force: bool = False) -> dict:
    """Full training run: snapshot, per-epoch checkpoints, metrics log."""
    cfg = effective_config(cfg)
    records = load_annotations(resolve_annotations(cfg, split))
    model = CaptioningModel(cfg)
    out_dir = Path(cfg.output_dir)
    write_snapshot(cfg, out_dir, "train")
    resume_ckpt = None
    if resume is not None:
        resume_ckpt = load_checkpoint(resume)
    result: TrainResult = train(records, model, cfg, out_dir=out_dir,
                                resume=resume_ckpt)
    return {
        "steps": result.checkpoint.step,
        "epochs": result.checkpoint.epoch + 1,
        "final_loss": result.history[-1].loss if result.history else None,
        "checkpoints": [str(p) for p in result.checkpoint_paths],
        "log": str(out_dir / "train_log.tsv"),
        "config_hash": cfg.model_hash(),
        "frozen_checksum": model.frozen_checksum(),
    }


def _prediction_line(record: VideoRecord, boundary_id: str,
                     captions: dict[str, str]) -> str:
    return json.dumps(
        {
            "video_id": record.video_id,
            "boundary_id": boundary_id,
            "subject": captions["subject"],
            "status_before": captions["status_before"],
            "status_after": captions["status_after"],
        },
        sort_keys=True,
    )


def cmd_caption(cfg: RunConfig, checkpoint: str | Path | None = None,
                split: str | None = None, output: str | Path | None = None,
                force: bool = False) -> dict:
    """Greedy captions for every boundary of the split, as sorted JSON lines."""
    cfg = effective_config(cfg)
    records = load_annotations(resolve_annotations(cfg, split))
    model = CaptioningModel(cfg)
    if checkpoint is not None:
        ckpt = load_checkpoint(checkpoint)
        restore_checkpoint(ckpt, model, None, cfg, force=force)
    out_dir = Path(cfg.output_dir)
    out_path = Path(output) if output is not None else out_dir / "predictions.jsonl"
    lines = [PREDICTIONS_HEADER]
    count = 0
    for record in sorted(records, key=lambda r: r.video_id):
        for boundary in sorted(record.boundaries, key=lambda b: b.boundary_id):
            triple = model.caption(record, boundary)
            lines.append(_prediction_line(record, boundary.boundary_id, {
                "subject": triple.subject,
                "status_before": triple.status_before,
                "status_after": triple.status_after,
            }))
            count += 1
    try:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot write predictions {out_path}: {e}") from e
    write_snapshot(cfg, out_path.parent, "caption")
    return {"predictions": str(out_path), "boundaries": count,
            "captions": 3 * count}


def load_spice_file(path: str | Path) -> dict[CaptionType, float]:
    """JSON object {caption type value: score on the 0-100 scale}."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise IoFailure(f"cannot read spice file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"spice file {path} is not valid JSON: {e}") from e
    out = {}
    for ct in CaptionType:
        if ct.value not in doc:
            raise ConfigError(f"spice file {path} missing key {ct.value!r}")
        out[ct] = float(doc[ct.value])
    return out


def cmd_evaluate(cfg: RunConfig, predictions: str | Path,
                 split: str | None = None,
                 spice: str | Path | None = None) -> dict:
    """Score a predictions file against the split's annotations."""
    cfg = effective_config(cfg)
    records = load_annotations(resolve_annotations(cfg, split))
    if not records:
        raise EmptyCorpus("no annotated videos in the split")
    spice_by_type = load_spice_file(spice) if spice is not None else None
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report: ScoreReport = evaluate(
        load_predictions(predictions), records,
        spice_by_type=spice_by_type,
        breakdown_path=out_dir / "breakdown.jsonl",
    )
    write_snapshot(cfg, out_dir, "evaluate")
    report_path = out_dir / "report.txt"
    try:
        report_path.write_text(report.to_text(), encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot write report {report_path}: {e}") from e
    return {
        "report": report.to_dict(),
        "report_path": str(report_path),
        "breakdown_path": str(out_dir / "breakdown.jsonl"),
    }
