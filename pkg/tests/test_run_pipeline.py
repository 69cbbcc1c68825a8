"""Tests for the run_pipeline.py command line."""

from __future__ import annotations

import json
import sys
from pathlib import Path
from unittest.mock import patch

from typer.testing import CliRunner

from dexmimic.errors import CollectionError

# Allow importing scripts module
sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "scripts"))

from run_pipeline import EXIT_STAGE, EXIT_VALIDATION, app  # noqa: E402

runner = CliRunner()


def test_synth_demo_writes_keypoints(tmp_path):
    out = tmp_path / "demo.jsonl"
    result = runner.invoke(app, ["synth-demo", "--out", str(out), "--frames", "8"])
    assert result.exit_code == 0, result.output
    assert len(out.read_text().splitlines()) == 8


def test_bad_config_is_validation_exit(tmp_path):
    config = tmp_path / "bad.json"
    config.write_text(json.dumps({"nope": 1}))
    result = runner.invoke(app, ["retarget", "--config", str(config), "--out", str(tmp_path)])
    assert result.exit_code == EXIT_VALIDATION


def test_missing_artifact_is_stage_exit(tmp_path):
    result = runner.invoke(app, ["train-state", "--out", str(tmp_path)])
    assert result.exit_code == EXIT_STAGE


@patch("run_pipeline.run_stage")
def test_collection_failure_is_stage_exit(mock_run_stage, tmp_path):
    mock_run_stage.side_effect = CollectionError("only 0 of 5 successful rollouts")
    result = runner.invoke(app, ["rollout", "--out", str(tmp_path)])
    assert result.exit_code == EXIT_STAGE
    assert mock_run_stage.call_args.args[1] == "collect"


@patch("run_pipeline.run_stage")
def test_resume_reports_skip(mock_run_stage, tmp_path):
    mock_run_stage.return_value = False
    result = runner.invoke(app, ["eval", "--out", str(tmp_path), "--resume", "--seed", "4"])
    assert result.exit_code == 0
    assert "skipped" in result.output
    run = mock_run_stage.call_args.args[0]
    assert run.config.seed == 4
    assert mock_run_stage.call_args.kwargs == {"resume": True}


@patch("run_pipeline.run_pipeline")
def test_pipeline_prints_stage_status(mock_run_pipeline, tmp_path):
    mock_run_pipeline.return_value = {"stages": {"retarget": {"status": "complete"}}}
    result = runner.invoke(app, ["pipeline", "--out", str(tmp_path)])
    assert result.exit_code == 0
    assert "retarget      complete" in result.output
    assert "eval          missing" in result.output
