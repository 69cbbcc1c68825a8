"""End-to-end pipeline: retarget, train the state policy, collect, distill, evaluate.

Every stage reads its inputs from and writes its outputs to one artifact
directory, and records what it wrote in ``run_manifest.json`` so a resumed
run can skip stages whose artifacts are intact.
"""

from __future__ import annotations

import hashlib
import json
from collections.abc import Callable, Iterable
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np
import structlog

from dexmimic.checkpoint import file_sha256
from dexmimic.config import PipelineConfig, camera_angles
from dexmimic.errors import CollectionError, InvalidInputError, StageError
from dexmimic.kinematics.transforms import RigidTransform
from dexmimic.pipeline.dataset import MANIFEST, read_dataset, write_dataset
from dexmimic.pipeline.evaluate import EvalObject, evaluate, write_eval_report
from dexmimic.pipeline.rollout import Actor, StateActor, VisualActor, collect_rollouts
from dexmimic.pipeline.tasks import SuccessRule, TaskSpec, task_spec
from dexmimic.retarget.build import build_reference
from dexmimic.retarget.demo import synthesize_demo
from dexmimic.retarget.keypoints import HumanHandTrajectory, read_keypoints, write_keypoints
from dexmimic.retarget.solver import retarget_trajectory, write_robot_trajectory
from dexmimic.reward.reference import ReferenceTrajectory, read_reference, write_reference
from dexmimic.reward.terms import RewardConfig
from dexmimic.rl.env import ManipulationEnv
from dexmimic.rl.train import (
    load_state_policy,
    save_state_policy,
    train_state_policy,
    write_training_curve,
)
from dexmimic.sim.camera import CameraSpec, overhead_camera
from dexmimic.sim.scene import DEFAULT_CONTAINER, Scene, scene_from_dict
from dexmimic.visual.train import load_visual_policy, save_visual_policy, train_visual_policy

logger = structlog.get_logger(__name__)

STAGES = ("retarget", "train-state", "collect", "train-visual", "eval")
RUN_MANIFEST = "run_manifest.json"


def artifact_sha256(path: Path) -> str:
    """File digest, or a digest over the sorted file names and contents of a directory."""
    if path.is_file():
        return file_sha256(path)
    digest = hashlib.sha256()
    for child in sorted(p for p in path.rglob("*") if p.is_file()):
        digest.update(child.relative_to(path).as_posix().encode())
        digest.update(file_sha256(child).encode())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# Run context
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class PipelineRun:
    config: PipelineConfig
    out_dir: Path

    @cached_property
    def seed(self) -> int:
        return self.config.resolved_seed()

    @cached_property
    def task(self) -> TaskSpec:
        return task_spec(self.config.task.name, self.config.task.episode_length)

    @cached_property
    def scene(self) -> Scene:
        hand = self.config.hand.chain_file
        scene = scene_from_dict({
            "hand": None if hand is None else str(hand),
            "object": self.config.scene.object,
        })
        if self.task.success is SuccessRule.CONTAINMENT:
            pose = RigidTransform.from_translation(self.config.scene.container_position)
            scene = replace(scene, container=DEFAULT_CONTAINER, container_pose=pose)
        return scene

    @cached_property
    def camera(self) -> CameraSpec:
        section = self.config.camera
        elevation, azimuth, fov = camera_angles(section)
        return overhead_camera(
            section.target,
            distance=section.distance,
            elevation=elevation,
            azimuth=azimuth,
            fov_horizontal=fov,
            fov_vertical=fov,
            resolution=section.resolution,
        )

    # -- artifact paths ------------------------------------------------------

    def path(self, name: str) -> Path:
        return self.out_dir / name

    @property
    def keypoints_path(self) -> Path:
        return self.config.keypoints or self.path("demo_keypoints.jsonl")

    @property
    def reference_path(self) -> Path:
        return self.path("reference.jsonl")

    @property
    def state_policy_path(self) -> Path:
        return self.path("state_policy.dmck")

    @property
    def dataset_path(self) -> Path:
        return self.path("dataset")

    @property
    def visual_policy_path(self) -> Path:
        return self.path("visual_policy.dmck")

    @property
    def eval_dir(self) -> Path:
        return self.path("eval")

    # -- builders ------------------------------------------------------------

    def env_factory(
        self, ref: ReferenceTrajectory, reward: RewardConfig | None = None,
    ) -> Callable[[int], ManipulationEnv]:
        scene = self.scene
        reward = reward or self.config.reward

        def build(worker: int) -> ManipulationEnv:
            return ManipulationEnv(
                scene.build_world(self.config.sim),
                ref,
                reward,
                self.task.episode_length,
                container=scene.container,
                container_pose=scene.container_pose,
            )

        return build

    def require(self, stage: str, path: Path) -> Path:
        if not path.exists():
            raise StageError(stage, f"missing artifact {path}")
        return path

    def load_reference(self, stage: str) -> ReferenceTrajectory:
        path = self.require(stage, self.reference_path)
        try:
            return read_reference(path)
        except InvalidInputError as exc:
            raise StageError(stage, str(exc)) from exc


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def _demonstration(run: PipelineRun) -> HumanHandTrajectory:
    if run.config.keypoints is not None:
        return read_keypoints(run.require("retarget", run.config.keypoints))
    lift = None
    if run.scene.container_pose is not None:
        # Carry into the container region instead of straight up.
        xy = np.asarray(run.config.scene.object_xy)
        goal = run.scene.container_pose.translation
        lift = np.array([goal[0] - xy[0], goal[1] - xy[1], 0.03])
    demo = synthesize_demo(
        run.config.scene.object,
        run.config.demo.frames,
        run.config.demo.seed,
        chain=run.scene.chain,
        object_xy=tuple(run.config.scene.object_xy),
        lift=lift,
    )
    write_keypoints(demo.human, run.keypoints_path)
    return demo.human


def stage_retarget(run: PipelineRun) -> dict[str, Path]:
    human = _demonstration(run)
    if human.object_poses is None:
        raise StageError("retarget", "keypoint file carries no object track")
    robot = retarget_trajectory(run.scene.chain, human, run.config.retarget)
    if not robot.all_converged:
        logger.warning(
            "retarget_frames_not_converged", frames=int((~robot.converged).sum()),
        )
    robot_path = run.path("robot_trajectory.jsonl")
    write_robot_trajectory(robot, robot_path)
    ref = build_reference(run.scene.chain, robot, human.object_poses)
    write_reference(ref, run.reference_path)
    return {"robot_trajectory": robot_path, "reference": run.reference_path}


def stage_train_state(run: PipelineRun) -> dict[str, Path]:
    ref = run.load_reference("train-state")
    ppo = run.config.ppo.model_copy(update={"seed": run.seed})
    result = train_state_policy(
        lambda worker, reward: run.env_factory(ref, reward)(worker),
        [ref],
        run.config.augment,
        run.config.reward,
        ppo,
    )
    save_state_policy(
        run.state_policy_path, result.policy,
        task=run.task.name, seed=run.seed, env_steps=result.env_steps,
    )
    curve_path = run.path("training_curve.csv")
    write_training_curve(result.curve, curve_path)
    return {"state_policy": run.state_policy_path, "training_curve": curve_path}


def _state_actor(run: PipelineRun, stage: str) -> StateActor:
    path = run.require(stage, run.state_policy_path)
    try:
        return StateActor(load_state_policy(path))
    except InvalidInputError as exc:
        raise StageError(stage, str(exc)) from exc


def stage_collect(run: PipelineRun) -> dict[str, Path]:
    ref = run.load_reference("collect")
    actor = _state_actor(run, "collect")
    section = run.config.rollout
    try:
        dataset = collect_rollouts(
            run.env_factory(ref),
            actor,
            ref,
            run.config.augment,
            section.required_successes,
            camera=run.camera,
            n_points=run.config.camera.n_points,
            seed=run.seed,
            workers=section.workers,
            attempt_factor=section.attempt_factor,
            task=run.task.name,
            source_checkpoint=file_sha256(run.state_policy_path),
        )
    except CollectionError as exc:
        if exc.partial is not None:
            write_dataset(exc.partial, run.path("dataset_partial"))
        raise StageError("collect", str(exc)) from exc
    write_dataset(dataset, run.dataset_path)
    return {"dataset": run.dataset_path}


def stage_train_visual(run: PipelineRun) -> dict[str, Path]:
    run.require("train-visual", run.dataset_path / MANIFEST)
    try:
        dataset = read_dataset(run.dataset_path)
    except InvalidInputError as exc:
        raise StageError("train-visual", str(exc)) from exc
    config = run.config.visual.model_copy(update={"seed": run.seed})
    result = train_visual_policy(dataset.to_samples(), config)
    save_visual_policy(
        run.visual_policy_path, result.policy,
        task=run.task.name, seed=run.seed, frame_set=config.frame_set.value,
        num_fingertips=dataset.num_fingertips,
    )
    curve_path = run.path("visual_curve.csv")
    result.curve.to_csv(curve_path, index=False, float_format="%.10g")
    return {"visual_policy": run.visual_policy_path, "visual_curve": curve_path}


def _eval_actor(run: PipelineRun) -> Actor:
    if run.config.evaluate.policy == "state":
        return _state_actor(run, "eval")
    path = run.require("eval", run.visual_policy_path)
    try:
        policy = load_visual_policy(path)
    except InvalidInputError as exc:
        raise StageError("eval", str(exc)) from exc
    return VisualActor(policy, run.config.visual.frame_set)


def stage_eval(run: PipelineRun) -> dict[str, Path]:
    ref = run.load_reference("eval")
    actor = _eval_actor(run)
    section = run.config.evaluate
    report = evaluate(
        actor,
        [EvalObject(run.scene.object_name, run.env_factory(ref), ref)],
        run.config.augment if section.augment else None,
        section.episodes,
        run.seed,
        task=run.task.name,
        camera=run.camera,
        n_points=run.config.camera.n_points,
        workers=section.workers,
    )
    paths = write_eval_report(report, run.eval_dir)
    return {f"eval_{k}": v for k, v in paths.items()}


STAGE_FUNCTIONS: dict[str, Callable[[PipelineRun], dict[str, Path]]] = {
    "retarget": stage_retarget,
    "train-state": stage_train_state,
    "collect": stage_collect,
    "train-visual": stage_train_visual,
    "eval": stage_eval,
}


# ---------------------------------------------------------------------------
# Run manifest
# ---------------------------------------------------------------------------

def read_run_manifest(out_dir: Path) -> dict[str, Any]:
    path = out_dir / RUN_MANIFEST
    if not path.exists():
        return {"stages": {}}
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise StageError("pipeline", f"{path}: corrupt run manifest ({exc})") from exc
    manifest.setdefault("stages", {})
    return manifest


def write_run_manifest(out_dir: Path, manifest: dict[str, Any]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / RUN_MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def stage_is_complete(out_dir: Path, entry: dict[str, Any] | None) -> bool:
    """A stage is complete when every recorded artifact exists with its recorded digest."""
    if not entry or entry.get("status") != "complete":
        return False
    for record in entry.get("artifacts", {}).values():
        path = out_dir / record["path"]
        if not path.exists() or artifact_sha256(path) != record["sha256"]:
            return False
    return True


def run_stage(run: PipelineRun, stage: str, *, resume: bool = False) -> bool:
    """Run one stage and record it; returns False when *resume* skipped it."""
    if stage not in STAGE_FUNCTIONS:
        raise InvalidInputError(f"unknown stage {stage!r} (known: {', '.join(STAGES)})")
    manifest = read_run_manifest(run.out_dir)
    if resume and stage_is_complete(run.out_dir, manifest["stages"].get(stage)):
        logger.info("stage_skipped", stage=stage)
        return False
    logger.info("stage_started", stage=stage)
    run.out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = STAGE_FUNCTIONS[stage](run)
    manifest["seed"] = run.seed
    manifest["stages"][stage] = {
        "status": "complete",
        "artifacts": {
            name: {
                "path": _relative(path, run.out_dir),
                "sha256": artifact_sha256(path),
            }
            for name, path in sorted(artifacts.items())
        },
    }
    write_run_manifest(run.out_dir, manifest)
    logger.info("stage_complete", stage=stage, artifacts=sorted(artifacts))
    return True


def _relative(path: Path, root: Path) -> str:
    try:
        return path.resolve().relative_to(root.resolve()).as_posix()
    except ValueError:
        return str(path.resolve())


def run_pipeline(
    config: PipelineConfig,
    out_dir: Path | str,
    *,
    resume: bool = False,
    stages: Iterable[str] = STAGES,
) -> dict[str, Any]:
    """Run the stages in order and return the run manifest."""
    run = PipelineRun(config=config, out_dir=Path(out_dir))
    for stage in stages:
        run_stage(run, stage, resume=resume)
    return read_run_manifest(run.out_dir)
