#!/usr/bin/env python3
"""Command-line entry point for the retarget → train → collect → distill → eval pipeline.

Exit codes:
    0: Success.
    2: Validation error (bad config, malformed input file, corrupt checkpoint).
    3: Stage failure (missing precondition artifact, rollout quota not met).

Usage:
    python scripts/run_pipeline.py synth-demo --out artifacts/demo.jsonl
    python scripts/run_pipeline.py retarget --config configs/toy.json --out artifacts
    python scripts/run_pipeline.py pipeline --config configs/toy.json --out artifacts --resume
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from pathlib import Path

import structlog
import torch
import typer

from dexmimic.config import PipelineConfig, get_settings, load_config
from dexmimic.errors import CollectionError, InvalidInputError, StageError
from dexmimic.pipeline.runner import STAGES, PipelineRun, run_pipeline, run_stage
from dexmimic.retarget.demo import synthesize_demo
from dexmimic.retarget.keypoints import write_keypoints

logger = structlog.get_logger(__name__)
app = typer.Typer(no_args_is_help=True)

EXIT_VALIDATION = 2
EXIT_STAGE = 3

_CONFIG = typer.Option(None, "--config", help="JSON experiment config (defaults if omitted)")
_OUT = typer.Option(None, "--out", help="Artifact directory (DM_ARTIFACT_DIR by default)")
_SEED = typer.Option(None, "--seed", help="Override the config seed")
_RESUME = typer.Option(False, "--resume", help="Skip stages whose artifacts are intact")


def _setup(config_path: Path | None, out: Path | None, seed: int | None) -> PipelineRun:
    settings = get_settings()
    structlog.configure(
        wrapper_class=structlog.make_filtering_bound_logger(
            logging.getLevelName(settings.log_level.upper()),
        ),
    )
    torch.set_num_threads(settings.torch_threads)
    config: PipelineConfig = load_config(config_path)
    if seed is not None:
        config = config.model_copy(update={"seed": seed})
    return PipelineRun(config=config, out_dir=out or settings.artifact_dir)


def _guarded(action: Callable[[], None]) -> None:
    """Run *action*, mapping dexmimic errors onto exit codes."""
    try:
        action()
    except (StageError, CollectionError) as exc:
        logger.error("stage_failed", error=str(exc))
        typer.echo(f"FAIL: {exc}", err=True)
        raise SystemExit(EXIT_STAGE) from exc
    except InvalidInputError as exc:
        logger.error("validation_failed", error=str(exc))
        typer.echo(f"INVALID: {exc}", err=True)
        raise SystemExit(EXIT_VALIDATION) from exc


def _single_stage(stage: str, config: Path | None, out: Path | None, seed: int | None,
                  resume: bool) -> None:
    def action() -> None:
        run = _setup(config, out, seed)
        ran = run_stage(run, stage, resume=resume)
        typer.echo(f"{stage}: {'done' if ran else 'skipped (artifacts intact)'} -> {run.out_dir}")

    _guarded(action)


@app.command()
def retarget(
    config: Path | None = _CONFIG, out: Path | None = _OUT,
    seed: int | None = _SEED, resume: bool = _RESUME,
) -> None:
    """Retarget the demonstration and build the reference trajectory."""
    _single_stage("retarget", config, out, seed, resume)


@app.command("train-state")
def train_state(
    config: Path | None = _CONFIG, out: Path | None = _OUT,
    seed: int | None = _SEED, resume: bool = _RESUME,
) -> None:
    """Train the state-based policy with PPO on the staged reward."""
    _single_stage("train-state", config, out, seed, resume)


@app.command()
def rollout(
    config: Path | None = _CONFIG, out: Path | None = _OUT,
    seed: int | None = _SEED, resume: bool = _RESUME,
) -> None:
    """Collect successful state-policy rollouts with rendered point clouds."""
    _single_stage("collect", config, out, seed, resume)


@app.command("train-visual")
def train_visual(
    config: Path | None = _CONFIG, out: Path | None = _OUT,
    seed: int | None = _SEED, resume: bool = _RESUME,
) -> None:
    """Distill the rollout dataset into a point-cloud policy."""
    _single_stage("train-visual", config, out, seed, resume)


@app.command("eval")
def eval_(
    config: Path | None = _CONFIG, out: Path | None = _OUT,
    seed: int | None = _SEED, resume: bool = _RESUME,
) -> None:
    """Evaluate the configured policy and write the report."""
    _single_stage("eval", config, out, seed, resume)


@app.command()
def pipeline(
    config: Path | None = _CONFIG, out: Path | None = _OUT,
    seed: int | None = _SEED, resume: bool = _RESUME,
) -> None:
    """Run every stage in order."""

    def action() -> None:
        run = _setup(config, out, seed)
        manifest = run_pipeline(run.config, run.out_dir, resume=resume)
        for stage in STAGES:
            status = manifest["stages"].get(stage, {}).get("status", "missing")
            typer.echo(f"  {stage:<13} {status}")
        typer.echo(f"Artifacts in {run.out_dir}")

    _guarded(action)


@app.command("synth-demo")
def synth_demo(
    out: Path = typer.Option(..., "--out", help="Keypoint JSONL file to write"),
    object_name: str = typer.Option("box", "--object", help="Object preset"),
    frames: int = typer.Option(40, help="Number of frames"),
    seed: int = typer.Option(0, "--seed"),
) -> None:
    """Write a synthetic keypoint trajectory for smoke runs."""

    def action() -> None:
        demo = synthesize_demo(object_name, frames, seed)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_keypoints(demo.human, out)
        logger.info("synthetic_demo_written", path=str(out), frames=frames)
        typer.echo(f"Wrote {frames} frames to {out}")

    _guarded(action)


if __name__ == "__main__":
    app()
