"""Tests for the task table, rollout datasets, collection, evaluation and the stage runner."""

from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from dexmimic.config import PipelineConfig
from dexmimic.errors import CollectionError, InvalidInputError, StageError
from dexmimic.pipeline.dataset import (
    Dataset,
    RolloutEpisode,
    read_dataset,
    write_dataset,
)
from dexmimic.pipeline.evaluate import EvalObject, evaluate, write_eval_report
from dexmimic.pipeline.rollout import (
    ReplayActor,
    collect_rollouts,
    derive_seed,
    run_episode,
    run_in_waves,
)
from dexmimic.pipeline.runner import (
    RUN_MANIFEST,
    PipelineRun,
    read_run_manifest,
    run_stage,
    stage_is_complete,
)
from dexmimic.pipeline.tasks import SuccessRule, task_spec
from dexmimic.reward.reference import ReferenceTrajectory
from dexmimic.rl.env import ManipulationEnv
from dexmimic.sim.camera import overhead_camera

EPISODE_LENGTH = 3


def _static_reference(box_reference: ReferenceTrajectory, target_shift: float = 0.0):
    """Object stays put; the hand hovers 40 cm to the side of it."""
    n = box_reference.length
    q = np.tile(box_reference.q[0], (n, 1))
    q[:, box_reference.base_dof] += 0.4
    target = box_reference.obj_pos[0] + np.array([target_shift, 0.0, 0.0])
    return ReferenceTrajectory(
        q=q,
        tips=np.tile(box_reference.tips[0], (n, 1, 1)),
        obj_pos=np.tile(box_reference.obj_pos[0], (n, 1)),
        obj_quat=np.tile(box_reference.obj_quat[0], (n, 1)),
        pregrasp_len=1,
        target_pos=target,
        target_quat=box_reference.obj_quat[0],
        base_dof=box_reference.base_dof,
    )


def _factory(box_scene, ref):
    def build(worker):
        return ManipulationEnv(box_scene.build_world(), ref, episode_length=EPISODE_LENGTH)

    return build


def _camera():
    return overhead_camera(resolution=16)


class _CloudReadingActor:
    """Replays the reference but renders the point cloud first, like a visual policy would."""

    def __init__(self) -> None:
        self.inner = ReplayActor()
        self.clouds = 0

    def act(self, obs, ctx):
        assert ctx.cloud().shape == (ctx.n_points, 3)
        self.clouds += 1
        return self.inner.act(obs, ctx)


class TestTasks:
    """Task table lookups."""

    def test_relocate(self):
        spec = task_spec("relocate")
        assert (spec.episode_length, spec.success) == (60, SuccessRule.SR3)

    def test_place_inside_uses_containment(self):
        assert task_spec("place_inside").success is SuccessRule.CONTAINMENT

    def test_length_override(self):
        assert task_spec("relocate", 12).episode_length == 12

    def test_unsupported_task(self):
        with pytest.raises(InvalidInputError, match="not supported"):
            task_spec("pour")

    def test_unknown_task(self):
        with pytest.raises(InvalidInputError, match="unknown task"):
            task_spec("juggle")


class TestDataset:
    """Manifest plus float32 blobs."""

    def _dataset(self, rng) -> Dataset:
        steps, points, tips, dof = 4, 8, 2, 5
        target = np.array([0.0, 0.0, 0.2])
        positions = np.tile(np.array([0.0, 0.01, 0.2], dtype=np.float32), (steps, 1))
        episode = RolloutEpisode(
            observations=rng.normal(size=(steps, 2 * dof + 11)).astype(np.float32),
            clouds=rng.normal(size=(steps, points, 3)).astype(np.float32),
            poses=np.tile([0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0], (steps, tips + 2, 1)),
            actions=rng.normal(size=(steps, dof)).astype(np.float32),
            rewards=rng.normal(size=steps).astype(np.float32),
            object_positions=positions.astype(float),
            stages=["pre_grasp", "pre_grasp", "manipulation", "manipulation"],
            target_pos=target,
            success=True,
            sr10=True,
            sr3=True,
            final_distance=0.01,
            seed=7,
        )
        return Dataset(task="relocate", n_points=points, num_fingertips=tips, dof=dof, seed=1,
                       episodes=[episode, episode])

    def test_round_trip_is_byte_stable(self, rng, tmp_path):
        first = tmp_path / "a"
        second = tmp_path / "b"
        write_dataset(self._dataset(rng), first)
        write_dataset(read_dataset(first), second)
        for path in sorted(first.iterdir()):
            assert (second / path.name).read_bytes() == path.read_bytes()

    def test_success_reverifies(self, rng, tmp_path):
        write_dataset(self._dataset(rng), tmp_path)
        assert all(e.verify_success() for e in read_dataset(tmp_path).episodes)

    def test_failed_episode_rejected_on_read(self, rng, tmp_path):
        dataset = self._dataset(rng)
        good = dataset.episodes[0]
        dataset.episodes[1] = replace(
            good,
            object_positions=good.object_positions + 1.0,
            success=False,
            sr10=False,
            sr3=False,
            final_distance=1.7,
        )
        assert not dataset.episodes[1].verify_success()
        write_dataset(dataset, tmp_path)
        with pytest.raises(InvalidInputError, match="episode 1 does not verify"):
            read_dataset(tmp_path)

    def test_flag_disagreeing_with_position_rejected(self, rng):
        good = self._dataset(rng).episodes[0]
        moved = replace(good, object_positions=good.object_positions + 1.0)
        assert not moved.verify_success()

    def test_samples_take_state_prefix(self, rng):
        samples = self._dataset(rng).to_samples()
        assert len(samples) == 8
        assert samples.state_dim == 10
        assert samples.num_fingertips == 2
        np.testing.assert_array_equal(samples.episode, [0, 0, 0, 0, 1, 1, 1, 1])

    def test_short_blob_rejected(self, rng, tmp_path):
        write_dataset(self._dataset(rng), tmp_path)
        blob = tmp_path / "episode_00000.bin"
        blob.write_bytes(blob.read_bytes()[:-8])
        with pytest.raises(InvalidInputError, match="too short"):
            read_dataset(tmp_path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(InvalidInputError, match="manifest"):
            read_dataset(tmp_path)


class TestRollout:
    """Episodes, waves and quota-driven collection."""

    def test_derive_seed_is_stable(self):
        assert derive_seed(1, 2) == derive_seed(1, 2)
        assert derive_seed(1, 2) != derive_seed(2, 1)

    def test_waves_keep_order(self):
        waves = list(run_in_waves(list(range(7)), lambda slot, job: (slot, job * 10), workers=3))
        assert [len(w) for w in waves] == [3, 3, 1]
        assert [job for wave in waves for _, job in wave] == [0, 10, 20, 30, 40, 50, 60]
        assert [slot for slot, _ in waves[0]] == [0, 1, 2]

    def test_recorded_episode_shapes(self, box_scene, box_reference):
        ref = _static_reference(box_reference)
        env = _factory(box_scene, ref)(0)
        record = run_episode(env, ReplayActor(), ref, camera=_camera(), n_points=32, record=True)
        ep = record.episode
        assert ep.steps == EPISODE_LENGTH
        assert ep.clouds.shape == (EPISODE_LENGTH, 32, 3)
        assert ep.poses.shape == (EPISODE_LENGTH, box_scene.chain.num_fingertips + 2, 7)
        assert ep.verify_success()

    def test_quota_met_with_replay(self, box_scene, box_reference):
        ref = _static_reference(box_reference)
        dataset = collect_rollouts(
            _factory(box_scene, ref), ReplayActor(), ref, None, 1,
            camera=_camera(), n_points=32, attempt_factor=2,
        )
        assert len(dataset) == 1
        assert dataset.meta == {"attempts": 1, "required_successes": 1}

    def test_exhausted_cap_raises_with_partial(self, box_scene, box_reference):
        ref = _static_reference(box_reference, target_shift=0.5)
        with pytest.raises(CollectionError) as info:
            collect_rollouts(
                _factory(box_scene, ref), ReplayActor(), ref, None, 1,
                camera=_camera(), n_points=32, attempt_factor=2,
            )
        assert len(info.value.partial) == 0
        assert info.value.partial.meta["attempts"] == 2


class TestEvaluate:
    """Seeded evaluation reports."""

    def _objects(self, box_scene, box_reference):
        ref = _static_reference(box_reference)
        return [EvalObject("box", _factory(box_scene, ref), ref)]

    def test_same_seed_same_report(self, box_scene, box_reference):
        objects = self._objects(box_scene, box_reference)
        a = evaluate(ReplayActor(), objects, episodes=2, seed=4)
        b = evaluate(ReplayActor(), objects, episodes=2, seed=4)
        pd.testing.assert_frame_equal(a.episodes, b.episodes)
        assert a.aggregate["sr3"] == 1.0

    def test_rendering_actor_sees_same_outcome(self, box_scene, box_reference):
        objects = self._objects(box_scene, box_reference)
        plain = evaluate(ReplayActor(), objects, episodes=1)
        actor = _CloudReadingActor()
        viewed = evaluate(actor, objects, episodes=1, camera=_camera(), n_points=16)
        assert actor.clouds == EPISODE_LENGTH
        pd.testing.assert_frame_equal(plain.episodes, viewed.episodes)

    def test_report_files(self, box_scene, box_reference, tmp_path):
        report = evaluate(ReplayActor(), self._objects(box_scene, box_reference), episodes=1)
        paths = write_eval_report(report, tmp_path)
        payload = json.loads(paths["json"].read_text())
        assert payload["episodes"] == 1
        assert payload["per_object"][0]["object"] == "box"
        assert pd.read_csv(paths["episodes"]).shape[0] == 1

    def test_nothing_to_evaluate(self):
        with pytest.raises(InvalidInputError):
            evaluate(ReplayActor(), [])


class TestRunner:
    """Stage bookkeeping and resume."""

    def _run(self, tmp_path) -> PipelineRun:
        config = PipelineConfig.model_validate({"demo": {"frames": 8}})
        return PipelineRun(config=config, out_dir=tmp_path)

    def test_resume_skips_intact_stage(self, tmp_path):
        run = self._run(tmp_path)
        assert run_stage(run, "retarget")
        manifest = read_run_manifest(tmp_path)
        assert manifest["stages"]["retarget"]["status"] == "complete"
        assert not run_stage(run, "retarget", resume=True)

    def test_tampered_artifact_reruns(self, tmp_path):
        run = self._run(tmp_path)
        run_stage(run, "retarget")
        entry = read_run_manifest(tmp_path)["stages"]["retarget"]
        (tmp_path / "reference.jsonl").write_text("{}\n")
        assert not stage_is_complete(tmp_path, entry)
        assert run_stage(run, "retarget", resume=True)

    def test_missing_precondition(self, tmp_path):
        with pytest.raises(StageError, match="missing artifact"):
            run_stage(self._run(tmp_path), "train-state")

    def test_corrupt_checkpoint_is_stage_error(self, tmp_path):
        run = self._run(tmp_path)
        run_stage(run, "retarget")
        (tmp_path / "state_policy.dmck").write_bytes(b"garbage")
        with pytest.raises(StageError, match="collect"):
            run_stage(run, "collect")

    def test_unknown_stage(self, tmp_path):
        with pytest.raises(InvalidInputError, match="unknown stage"):
            run_stage(self._run(tmp_path), "deploy")

    def test_corrupt_run_manifest(self, tmp_path):
        (tmp_path / RUN_MANIFEST).write_text("{not json")
        with pytest.raises(StageError, match="corrupt run manifest"):
            read_run_manifest(tmp_path)
