"""Shared fixtures: a small deterministic corpus and run configs over tmp dirs."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from gebc.config import RunConfig, desk_profile
from gebc.data import (
    BoundaryAnnotation,
    CaptionTriple,
    VideoRecord,
    dump_annotations,
)

# One sample per video so all eight targets are separable by visual content.
FIXTURE_CAPTIONS = [
    ("a dog", "it sits", "it runs"),
    ("a cat", "it naps", "it eats"),
    ("a bird", "it waits", "it flies"),
    ("a man", "it stands", "it walks"),
    ("a woman", "it talks", "it smiles"),
    ("a child", "it plays", "it jumps"),
    ("a horse", "it rests", "it climbs"),
    ("a fish", "it swims", "it turns"),
]


def build_fixture_records() -> list[VideoRecord]:
    records = []
    for i, (sub, bef, aft) in enumerate(FIXTURE_CAPTIONS):
        vid = f"vid_{chr(ord('a') + i)}"
        records.append(
            VideoRecord(
                video_id=vid,
                duration_sec=10.0,
                num_frames=48,
                boundaries=[
                    BoundaryAnnotation(
                        boundary_id=f"{vid}_b0",
                        timestamp_sec=5.0,
                        time_box=(0.0, 10.0),
                        captions=CaptionTriple(
                            subject=sub, status_before=bef, status_after=aft
                        ),
                    )
                ],
            )
        )
    return records


@pytest.fixture()
def fixture_records() -> list[VideoRecord]:
    return build_fixture_records()


@pytest.fixture()
def annotations_dir(tmp_path: Path, fixture_records: list[VideoRecord]) -> Path:
    """Directory holding train/val/test splits over the same eight videos."""
    ann = tmp_path / "annotations"
    ann.mkdir()
    text = dump_annotations(fixture_records)
    for split in ("train", "val", "test"):
        (ann / f"{split}.json").write_text(text)
    return ann


@pytest.fixture()
def desk_cfg(tmp_path: Path, annotations_dir: Path) -> RunConfig:
    return desk_profile(
        annotations=str(annotations_dir),
        cache_dir=str(tmp_path / "cache"),
        output_dir=str(tmp_path / "runs"),
    )


def write_config_file(path: Path, cfg: RunConfig) -> Path:
    path.write_text(json.dumps(cfg.model_dump(mode="json"), indent=2))
    return path
