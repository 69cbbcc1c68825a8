"""Rollout collection, datasets, evaluation and the end-to-end stage runner."""

from dexmimic.pipeline.dataset import Dataset, RolloutEpisode, read_dataset, write_dataset
from dexmimic.pipeline.evaluate import EvalObject, EvalReport, evaluate, write_eval_report
from dexmimic.pipeline.rollout import (
    ActContext,
    RandomActor,
    ReplayActor,
    StateActor,
    VisualActor,
    collect_rollouts,
    run_episode,
)
from dexmimic.pipeline.runner import STAGES, PipelineRun, run_pipeline, run_stage
from dexmimic.pipeline.tasks import TASKS, TaskSpec, task_spec

__all__ = [
    # tasks
    "TASKS",
    "TaskSpec",
    "task_spec",
    # datasets
    "Dataset",
    "RolloutEpisode",
    "read_dataset",
    "write_dataset",
    # rollouts
    "ActContext",
    "StateActor",
    "ReplayActor",
    "RandomActor",
    "VisualActor",
    "run_episode",
    "collect_rollouts",
    # evaluation
    "EvalObject",
    "EvalReport",
    "evaluate",
    "write_eval_report",
    # runner
    "STAGES",
    "PipelineRun",
    "run_pipeline",
    "run_stage",
]
