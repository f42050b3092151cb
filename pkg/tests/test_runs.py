"""Run commands: cache management, prediction files, and config snapshots."""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import pytest

from gebc.config import desk_profile
from gebc.errors import ConfigError, EmptyCorpus
from gebc.features import cache_path
from gebc.runs import (
    CACHE_DIR_ENV,
    PREDICTIONS_HEADER,
    cmd_caption,
    cmd_evaluate,
    cmd_extract,
    cmd_train,
    load_spice_file,
    resolve_annotations,
    resolve_cache_dir,
)


def fast(cfg):
    return cfg.model_copy(
        update={"train": cfg.train.model_copy(update={"max_epochs": 1, "max_steps": 2})}
    )


class TestCmdExtract:
    def test_idempotent_then_corrupt_reextracts(self, desk_cfg):
        first = cmd_extract(desk_cfg)
        assert len(first.written) == 24
        assert first.re_extracted == []

        second = cmd_extract(desk_cfg)
        assert second.written == []
        assert len(second.skipped) == 24

        victim = cache_path(desk_cfg.cache_dir, "vid_a", "synth_primary")
        blob = victim.read_bytes()
        victim.write_bytes(blob[: len(blob) // 2])
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            third = cmd_extract(desk_cfg)
        assert len(third.re_extracted) == 1
        assert "vid_a" in third.re_extracted[0]
        assert any("vid_a" in str(w.message) for w in caught)
        assert victim.read_bytes() == blob

    def test_overwrite_rewrites_everything(self, desk_cfg):
        cmd_extract(desk_cfg)
        again = cmd_extract(desk_cfg, overwrite=True)
        assert len(again.written) == 24

    def test_requires_cache_dir(self, desk_cfg):
        with pytest.raises(ConfigError):
            cmd_extract(desk_cfg.model_copy(update={"cache_dir": None}))

    def test_snapshot_written(self, desk_cfg):
        cmd_extract(desk_cfg)
        snap = Path(desk_cfg.cache_dir) / "extract_config.json"
        assert snap.exists()
        assert json.loads(snap.read_text())["target_len"] == desk_cfg.target_len


class TestCacheDirResolution:
    def test_env_var_wins(self, desk_cfg, tmp_path, monkeypatch):
        env_dir = tmp_path / "env_cache"
        monkeypatch.setenv(CACHE_DIR_ENV, str(env_dir))
        assert resolve_cache_dir(desk_cfg) == str(env_dir)

    def test_config_value_without_env(self, desk_cfg, monkeypatch):
        monkeypatch.delenv(CACHE_DIR_ENV, raising=False)
        assert resolve_cache_dir(desk_cfg) == desk_cfg.cache_dir

    def test_extract_honors_env(self, desk_cfg, tmp_path, monkeypatch):
        env_dir = tmp_path / "env_cache"
        monkeypatch.setenv(CACHE_DIR_ENV, str(env_dir))
        cmd_extract(desk_cfg)
        assert cache_path(env_dir, "vid_a", "synth_primary").exists()


class TestResolveAnnotations:
    def test_directory_plus_split(self, desk_cfg):
        path = resolve_annotations(desk_cfg, "val")
        assert path == Path(desk_cfg.annotations) / "val.json"

    def test_default_split_is_train(self, desk_cfg):
        assert resolve_annotations(desk_cfg, None).name == "train.json"

    def test_file_used_verbatim(self, desk_cfg):
        file_cfg = desk_cfg.model_copy(
            update={"annotations": str(Path(desk_cfg.annotations) / "test.json")}
        )
        assert resolve_annotations(file_cfg, "train").name == "test.json"

    def test_none_rejected(self, desk_cfg):
        with pytest.raises(ConfigError):
            resolve_annotations(desk_cfg.model_copy(update={"annotations": None}), None)


class TestCmdCaption:
    def test_predictions_file_shape(self, desk_cfg):
        result = cmd_caption(fast(desk_cfg))
        lines = Path(result["predictions"]).read_text().splitlines()
        assert lines[0] == PREDICTIONS_HEADER
        assert len(lines) == 1 + 8
        row = json.loads(lines[1])
        assert set(row) == {
            "video_id", "boundary_id", "subject", "status_before", "status_after",
        }
        assert result["boundaries"] == 8
        assert result["captions"] == 24

    def test_rows_sorted_by_video_then_boundary(self, desk_cfg):
        result = cmd_caption(fast(desk_cfg))
        lines = Path(result["predictions"]).read_text().splitlines()[1:]
        keys = [
            (json.loads(l)["video_id"], json.loads(l)["boundary_id"]) for l in lines
        ]
        assert keys == sorted(keys)

    def test_empty_split_writes_header_only(self, desk_cfg, tmp_path):
        empty = tmp_path / "empty.json"
        empty.write_text("[]")
        cfg = fast(desk_cfg).model_copy(update={"annotations": str(empty)})
        result = cmd_caption(cfg)
        assert Path(result["predictions"]).read_text() == PREDICTIONS_HEADER + "\n"
        assert result["boundaries"] == 0

    def test_byte_identical_across_runs(self, desk_cfg, tmp_path):
        cfg = fast(desk_cfg)
        a = Path(cmd_caption(cfg, output=tmp_path / "a.jsonl")["predictions"]).read_bytes()
        b = Path(cmd_caption(cfg, output=tmp_path / "b.jsonl")["predictions"]).read_bytes()
        assert a == b


class TestCmdTrainEvaluate:
    def test_train_then_evaluate_roundtrip(self, desk_cfg):
        cfg = fast(desk_cfg)
        summary = cmd_train(cfg)
        assert summary["steps"] == 2
        assert Path(summary["log"]).exists()
        for ckpt in summary["checkpoints"]:
            assert Path(ckpt).exists()

        cap = cmd_caption(cfg, split="val")
        result = cmd_evaluate(cfg, cap["predictions"], split="val")
        assert set(result["report"]["per_type"]) == {"subject", "before", "after"}
        assert Path(result["report_path"]).exists()
        assert Path(result["breakdown_path"]).exists()

    def test_evaluate_empty_corpus(self, desk_cfg, tmp_path):
        empty = tmp_path / "empty.json"
        empty.write_text("[]")
        cfg = desk_cfg.model_copy(update={"annotations": str(empty)})
        preds = tmp_path / "p.jsonl"
        preds.write_text(PREDICTIONS_HEADER + "\n")
        with pytest.raises(EmptyCorpus):
            cmd_evaluate(cfg, preds)

    def test_spice_scores_folded_into_report(self, desk_cfg, tmp_path):
        cfg = fast(desk_cfg)
        cap = cmd_caption(cfg)
        spice = tmp_path / "spice.json"
        spice.write_text(json.dumps({"subject": 30.0, "before": 20.0, "after": 10.0}))
        result = cmd_evaluate(cfg, cap["predictions"], spice=spice)
        assert result["report"]["per_type"]["subject"]["spice"] == 30.0
        assert result["report"]["overall"]["avg"] is not None


class TestLoadSpiceFile:
    def test_valid(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(json.dumps({"subject": 1.0, "before": 2.0, "after": 3.0}))
        scores = load_spice_file(p)
        assert len(scores) == 3

    def test_missing_key_rejected(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(json.dumps({"subject": 1.0}))
        with pytest.raises(ConfigError):
            load_spice_file(p)

    def test_bad_json_rejected(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text("{nope")
        with pytest.raises(ConfigError):
            load_spice_file(p)
