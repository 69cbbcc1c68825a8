"""Tests for multi-frame point clouds, the point encoder and the visual policy heads."""

from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from dexmimic.errors import CheckpointError, InvalidInputError
from dexmimic.kinematics.transforms import RigidTransform
from dexmimic.rl.networks import DTYPE
from dexmimic.visual import (
    DistillSamples,
    FrameSet,
    HeadKind,
    NoiseSchedule,
    PointNetEncoder,
    VisualPolicy,
    VisualTrainConfig,
    bc_forward,
    bc_train,
    concat_samples,
    diffusion_forward_noise,
    diffusion_loss,
    diffusion_sample,
    encode,
    load_visual_policy,
    save_visual_policy,
    stack_frames,
    train_visual_policy,
    transform_to_frames,
)
from dexmimic.visual.frames import poses_to_array
from dexmimic.visual.policy import posterior_mean, timestep_embedding

IDENTITY_POSE7 = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]


def _random_pose(rng: np.random.Generator) -> RigidTransform:
    q = rng.normal(size=4)
    return RigidTransform(rotation=q / np.linalg.norm(q), translation=rng.normal(size=3))


def _samples(rng: np.random.Generator, m: int = 6, n: int = 16, tips: int = 1) -> DistillSamples:
    return DistillSamples(
        clouds=rng.normal(scale=0.1, size=(m, n, 3)),
        poses=np.tile(IDENTITY_POSE7, (m, tips + 2, 1)),
        states=rng.normal(size=(m, 3)),
        actions=rng.normal(size=(m, 2)),
        episode=np.repeat(np.arange(m // 2), 2),
    )


class _FixedAlphaBar:
    def __init__(self, value: float) -> None:
        self.value = value

    def alpha_bar(self, k):
        return np.full(np.shape(k), self.value)


class TestFrames:
    """World-to-frame transforms of a point cloud."""

    def test_identity_frames_copy_world(self, rng):
        pc = rng.normal(size=(10, 3))
        tips = [RigidTransform(), RigidTransform()]
        out = transform_to_frames(pc, RigidTransform(), RigidTransform(), tips)
        assert out.n_frames == 5
        for f in range(out.n_frames):
            np.testing.assert_array_equal(out.block(f), pc)

    def test_origin_seen_from_shifted_target(self):
        target = RigidTransform.from_translation([1.0, 0.0, 0.0])
        out = transform_to_frames(
            np.zeros((1, 3)), target, RigidTransform(), [], FrameSet.WORLD_TARGET,
        )
        np.testing.assert_allclose(out.block(1), [[-1.0, 0.0, 0.0]])

    def test_blocks_match_matrix_oracle(self, rng):
        pc = rng.normal(size=(20, 3))
        target, palm, tip = (_random_pose(rng) for _ in range(3))
        out = transform_to_frames(pc, target, palm, [tip])
        for f, pose in enumerate((target, palm, tip), start=1):
            m = pose.as_matrix()
            expected = (pc - m[:3, 3]) @ m[:3, :3]
            np.testing.assert_allclose(out.block(f), expected, atol=1e-9)

    def test_blocks_map_back_to_world(self, rng):
        pc = rng.normal(size=(20, 3))
        poses = [_random_pose(rng) for _ in range(4)]
        out = transform_to_frames(pc, poses[0], poses[1], poses[2:])
        for f, pose in enumerate(poses, start=1):
            np.testing.assert_allclose(pose.apply(out.block(f)), pc, atol=1e-9)

    def test_frame_set_widths(self):
        assert FrameSet.WORLD.frame_count(4) == 1
        assert FrameSet.WORLD_TARGET.frame_count(4) == 2
        assert FrameSet.FULL.frame_count(4) == 7

    def test_stored_poses_match_live_transform(self, rng):
        pc = rng.normal(size=(8, 3))
        poses = [_random_pose(rng) for _ in range(3)]
        live = transform_to_frames(pc, poses[0], poses[1], poses[2:])
        stored = stack_frames(pc, poses_to_array(poses), FrameSet.FULL, 1)
        np.testing.assert_allclose(stored, live.data, atol=1e-12)

    def test_invalid_pose_rejected(self, rng):
        bad = RigidTransform(rotation=[2.0, 0.0, 0.0, 0.0])
        with pytest.raises(InvalidInputError, match="target"):
            transform_to_frames(rng.normal(size=(4, 3)), bad, RigidTransform(), [RigidTransform()])

    def test_empty_cloud_rejected(self):
        with pytest.raises(InvalidInputError):
            transform_to_frames(np.zeros((0, 3)), RigidTransform(), RigidTransform(), [])


class TestEncoder:
    """Max-pooled per-point features."""

    def test_single_point(self, rng):
        enc = PointNetEncoder(3, (8, 4))
        point = rng.normal(size=(1, 3))
        with torch.no_grad():
            expected = enc.point_features(torch.as_tensor(point, dtype=DTYPE))[0].numpy()
        np.testing.assert_allclose(encode(enc, point), expected, atol=1e-12)

    def test_duplicates_do_not_change_feature(self, rng):
        enc = PointNetEncoder(6, (8, 4))
        pc = rng.normal(size=(5, 6))
        np.testing.assert_allclose(encode(enc, np.vstack([pc, pc[:2]])), encode(enc, pc))

    def test_permutation_invariance(self, rng):
        enc = PointNetEncoder(9, (16, 8))
        pc = rng.normal(size=(30, 9))
        np.testing.assert_allclose(encode(enc, pc[rng.permutation(30)]), encode(enc, pc),
                                   atol=1e-12)

    def test_features_non_negative(self, rng):
        enc = PointNetEncoder(3, (8, 8))
        assert np.all(encode(enc, rng.normal(size=(12, 3))) >= 0.0)

    def test_width_must_be_multiple_of_three(self):
        with pytest.raises(InvalidInputError):
            PointNetEncoder(4)


class TestBehaviorCloning:
    """Deterministic action head."""

    def test_zero_parameters_return_action_mean(self):
        policy = VisualPolicy(3, 2, 2, HeadKind.BC, encoder_sizes=(4,), head_hidden=(4,))
        with torch.no_grad():
            for p in policy.parameters():
                p.zero_()
        policy.set_normalization(np.zeros(2), np.ones(2), np.array([0.3, -0.1]), np.ones(2))
        np.testing.assert_allclose(bc_forward(policy, np.ones((5, 3)), np.zeros(2)), [0.3, -0.1])

    def test_zero_learning_rate_leaves_parameters(self, rng):
        samples = _samples(rng)
        policy = VisualPolicy(12, 3, 2, HeadKind.BC, encoder_sizes=(8,), head_hidden=(8,))
        before = [p.detach().clone() for p in policy.parameters()]
        bc_train(policy, samples, epochs=2, lr=0.0, batch_size=4)
        for a, b in zip(before, policy.parameters()):
            torch.testing.assert_close(a, b.detach())

    def test_non_finite_input_rejected(self):
        policy = VisualPolicy(3, 2, 2, encoder_sizes=(4,), head_hidden=(4,))
        with pytest.raises(InvalidInputError, match="non-finite"):
            bc_forward(policy, np.full((3, 3), math.nan), np.zeros(2))

    @pytest.mark.slow
    def test_overfits_two_samples(self, rng):
        samples = _samples(rng, m=2)
        config = VisualTrainConfig(
            frame_set=FrameSet.FULL, encoder_sizes=(32, 32), head_hidden=(64,), epochs=400,
            learning_rate=3e-3, batch_size=2,
        )
        curve = train_visual_policy(samples, config).curve
        assert curve["loss"].iloc[-1] < 1e-3 * curve["loss"].iloc[0]


class TestDiffusion:
    """Noise schedule, forward process, posterior step and sampling."""

    def test_forward_noise_quarter_alpha_bar(self):
        x0 = np.array([1.0, 2.0])
        eps = np.array([-1.0, 0.5])
        out = diffusion_forward_noise(x0, 3, eps, _FixedAlphaBar(0.25))
        np.testing.assert_allclose(out, 0.5 * x0 + math.sqrt(0.75) * eps, atol=1e-12)

    def test_forward_noise_pure_noise(self):
        eps = np.array([0.7, -0.2, 1.1])
        np.testing.assert_allclose(
            diffusion_forward_noise(np.ones(3), 1, eps, _FixedAlphaBar(0.0)), eps,
        )

    def test_forward_noise_step_zero_is_clean(self, rng):
        x0 = rng.normal(size=(2, 4, 3))
        out = diffusion_forward_noise(x0, np.zeros(2, dtype=int), rng.normal(size=x0.shape),
                                      NoiseSchedule.linear())
        np.testing.assert_array_equal(out, x0)

    def test_single_step_posterior_recovers_x0(self, rng):
        schedule = NoiseSchedule(np.array([0.3]))
        x0 = rng.normal(size=(4, 2))
        eps = rng.normal(size=(4, 2))
        x1 = diffusion_forward_noise(x0, 1, eps, schedule)
        np.testing.assert_allclose(posterior_mean(x1, eps, 1, schedule), x0, atol=1e-12)
        assert schedule.posterior_variance(1) == 0.0

    def test_schedule_rejects_bad_beta(self):
        with pytest.raises(InvalidInputError):
            NoiseSchedule(np.array([0.1, 1.0]))

    def test_oracle_predictor_has_zero_loss(self, rng):
        schedule = NoiseSchedule.linear(10)
        x0 = torch.as_tensor(rng.normal(size=(5, 4, 2)))
        eps = torch.as_tensor(rng.normal(size=(5, 4, 2)))
        k = torch.randint(1, 11, (5,), generator=torch.Generator().manual_seed(0))
        assert float(diffusion_loss(lambda x_k, steps: eps, x0, k, eps, schedule)) == 0.0
        zero = diffusion_loss(lambda x_k, steps: torch.zeros_like(x_k), x0, k, eps, schedule)
        assert float(zero) == pytest.approx(float((eps**2).sum() / 5))

    def test_sampling_is_seeded(self):
        policy = VisualPolicy(3, 2, 2, HeadKind.DIFFUSION, encoder_sizes=(4,), head_hidden=(8,),
                              schedule=NoiseSchedule.linear(5), horizon=3, time_dim=4)
        pc = np.ones((6, 3))
        a = diffusion_sample(policy, pc, np.zeros(2), torch.Generator().manual_seed(9))
        b = diffusion_sample(policy, pc, np.zeros(2), torch.Generator().manual_seed(9))
        assert a.shape == (3, 2)
        np.testing.assert_array_equal(a, b)

    def test_odd_time_dim_embedding_width(self):
        emb = timestep_embedding(torch.tensor([0, 3, 7]), 33)
        assert emb.shape == (3, 33)
        assert torch.all(emb[:, -1] == 0.0)

    def test_odd_time_dim_samples(self):
        policy = VisualPolicy(3, 2, 2, HeadKind.DIFFUSION, encoder_sizes=(4,), head_hidden=(8,),
                              schedule=NoiseSchedule.linear(3), horizon=2, time_dim=33)
        action = diffusion_sample(policy, np.ones((6, 3)), np.zeros(2), torch.Generator())
        assert action.shape == (2, 2)

    def test_config_accepts_odd_time_dim(self):
        assert VisualTrainConfig(time_dim=33).time_dim == 33

    def test_sampling_needs_diffusion_head(self):
        policy = VisualPolicy(3, 2, 2, HeadKind.BC, encoder_sizes=(4,), head_hidden=(4,))
        with pytest.raises(InvalidInputError):
            diffusion_sample(policy, np.ones((2, 3)), np.zeros(2), torch.Generator())


class TestSamplesAndCheckpoints:
    """Training samples, action chunks and checkpoint files."""

    def test_chunks_pad_within_episode(self):
        samples = DistillSamples(
            clouds=np.zeros((4, 2, 3)),
            poses=np.tile(IDENTITY_POSE7, (4, 3, 1)),
            states=np.zeros((4, 1)),
            actions=np.arange(4.0).reshape(4, 1),
            episode=np.array([0, 0, 0, 1]),
        )
        chunks = samples.chunks(3)[:, :, 0]
        np.testing.assert_array_equal(chunks[1], [1.0, 2.0, 2.0])
        np.testing.assert_array_equal(chunks[3], [3.0, 3.0, 3.0])

    def test_concat_keeps_episodes_distinct(self, rng):
        joined = concat_samples([_samples(rng), _samples(rng)])
        assert len(joined) == 12
        assert len(np.unique(joined.episode)) == 6

    def test_misaligned_samples_rejected(self, rng):
        with pytest.raises(InvalidInputError, match="aligned"):
            DistillSamples(
                clouds=np.zeros((3, 2, 3)), poses=np.zeros((3, 3, 7)), states=np.zeros((2, 1)),
                actions=np.zeros((3, 1)), episode=np.zeros(3),
            )

    def test_diffusion_checkpoint_round_trip(self, rng, tmp_path):
        config = VisualTrainConfig(
            head=HeadKind.DIFFUSION, encoder_sizes=(8,), head_hidden=(8,), diffusion_steps=4,
            horizon=2, time_dim=4, epochs=1, batch_size=3,
        )
        policy = train_visual_policy(_samples(rng), config).policy
        path = tmp_path / "visual.ckpt"
        save_visual_policy(path, policy, seed=0)
        loaded = load_visual_policy(path)
        pc = rng.normal(size=(16, 12))
        state = rng.normal(size=3)
        np.testing.assert_array_equal(
            diffusion_sample(loaded, pc, state, torch.Generator().manual_seed(1)),
            diffusion_sample(policy, pc, state, torch.Generator().manual_seed(1)),
        )
        again = tmp_path / "again.ckpt"
        save_visual_policy(again, loaded, seed=0)
        assert again.read_bytes() == path.read_bytes()

    def test_truncated_checkpoint_rejected(self, rng, tmp_path):
        policy = VisualPolicy(3, 2, 2, encoder_sizes=(4,), head_hidden=(4,))
        path = tmp_path / "visual.ckpt"
        save_visual_policy(path, policy)
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(CheckpointError):
            load_visual_policy(path)
