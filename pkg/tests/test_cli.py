"""Command-line client: happy paths, flag overrides, and exit codes."""

from __future__ import annotations

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from gebc.cli import main
from gebc.config import RunConfig

from conftest import write_config_file


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def config_file(tmp_path, desk_cfg) -> Path:
    return write_config_file(tmp_path / "run.json", desk_cfg)


@pytest.fixture()
def fast_config_file(tmp_path, desk_cfg) -> Path:
    fast = desk_cfg.model_copy(
        update={
            "train": desk_cfg.train.model_copy(
                update={"max_epochs": 1, "max_steps": 2}
            )
        }
    )
    return write_config_file(tmp_path / "fast.json", fast)


class TestHealth:
    def test_health_ok(self, runner):
        result = runner.invoke(main, ["health"])
        assert result.exit_code == 0, result.output
        assert json.loads(result.output)["status"] == "ok"


class TestExtract:
    def test_writes_then_skips(self, runner, config_file):
        r1 = runner.invoke(main, ["extract", "--config", str(config_file)])
        assert r1.exit_code == 0, r1.output
        assert len(json.loads(r1.output)["written"]) == 24

        r2 = runner.invoke(main, ["extract", "--config", str(config_file)])
        body = json.loads(r2.output)
        assert body["written"] == []
        assert len(body["skipped"]) == 24

    def test_overwrite_flag(self, runner, config_file):
        runner.invoke(main, ["extract", "--config", str(config_file)])
        r = runner.invoke(
            main, ["extract", "--config", str(config_file), "--overwrite"]
        )
        assert r.exit_code == 0
        assert len(json.loads(r.output)["written"]) == 24

    def test_missing_config_file(self, runner, tmp_path):
        r = runner.invoke(
            main, ["extract", "--config", str(tmp_path / "none.json")]
        )
        assert r.exit_code == 29  # ConfigError
        assert "error [ConfigError]" in r.output


class TestPipeline:
    def test_train_caption_evaluate(self, runner, fast_config_file, tmp_path):
        r = runner.invoke(main, ["train", "--config", str(fast_config_file)])
        assert r.exit_code == 0, r.output
        assert json.loads(r.output)["steps"] == 2

        r = runner.invoke(
            main,
            ["caption", "--config", str(fast_config_file), "--split", "val"],
        )
        assert r.exit_code == 0, r.output
        preds = json.loads(r.output)["predictions"]
        assert Path(preds).exists()

        r = runner.invoke(
            main,
            [
                "evaluate",
                preds,
                "--config",
                str(fast_config_file),
                "--split",
                "val",
            ],
        )
        assert r.exit_code == 0, r.output
        body = json.loads(r.output)
        assert set(body["per_type"]) == {"subject", "before", "after"}

    def test_caption_deterministic_flag_roundtrip(self, runner, fast_config_file):
        r1 = runner.invoke(
            main, ["caption", "--config", str(fast_config_file), "--seed", "5"]
        )
        assert r1.exit_code == 0, r1.output
        p1 = Path(json.loads(r1.output)["predictions"]).read_bytes()
        r2 = runner.invoke(
            main, ["caption", "--config", str(fast_config_file), "--seed", "5"]
        )
        p2 = Path(json.loads(r2.output)["predictions"]).read_bytes()
        assert p1 == p2


class TestExitCodes:
    def test_missing_predictions_is_io_failure(self, runner, config_file):
        r = runner.invoke(
            main,
            ["evaluate", "/nonexistent/preds.jsonl", "--config", str(config_file)],
        )
        assert r.exit_code == 13
        assert "error [IoFailure]" in r.output

    def test_cache_only_miss(self, runner, tmp_path, desk_cfg):
        cfg = desk_cfg.model_copy(update={"cache_only": True})
        path = write_config_file(tmp_path / "miss.json", cfg)
        r = runner.invoke(main, ["caption", "--config", str(path)])
        assert r.exit_code == 14
        assert "error [CacheMiss]" in r.output


class TestOverrides:
    def test_output_override_redirects_artifacts(
        self, runner, fast_config_file, tmp_path
    ):
        alt = tmp_path / "elsewhere"
        r = runner.invoke(
            main,
            [
                "train",
                "--config",
                str(fast_config_file),
                "--output",
                str(alt),
            ],
        )
        assert r.exit_code == 0, r.output
        body = json.loads(r.output)
        assert str(alt) in body["log"]
        assert alt.exists()
