"""Episode runners, policy actors and successful-rollout collection."""

from __future__ import annotations

from collections.abc import Callable, Iterator, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol, TypeVar

import numpy as np
import structlog
import torch

from dexmimic.augment.trajectory import AugmentSpec, augment_reference, sample_augmentation
from dexmimic.errors import CollectionError, InvalidInputError
from dexmimic.kinematics.chain import KinematicChain
from dexmimic.pipeline.dataset import Dataset, RolloutEpisode
from dexmimic.reward.metrics import relocate_success
from dexmimic.reward.reference import ReferenceTrajectory
from dexmimic.rl.env import ActionScaling, EpisodeOutcome, ManipulationEnv
from dexmimic.rl.train import StatePolicy
from dexmimic.sim.camera import CameraSpec, render_point_cloud
from dexmimic.visual.frames import FrameSet, poses_to_array, stack_frames
from dexmimic.visual.policy import HeadKind, VisualPolicy, bc_forward, diffusion_sample

logger = structlog.get_logger(__name__)

EnvFactory = Callable[[int], ManipulationEnv]
T = TypeVar("T")
R = TypeVar("R")


def derive_seed(*parts: int) -> int:
    """Stable 32-bit seed from integer parts."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Actors
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ActContext:
    """What an actor may look at besides the observation. The cloud renders lazily."""

    env: ManipulationEnv
    step: int
    seed: int
    camera: CameraSpec | None = None
    n_points: int = 512
    _cloud: np.ndarray | None = field(default=None, repr=False)

    def cloud(self) -> np.ndarray:
        if self._cloud is None:
            if self.camera is None:
                raise InvalidInputError("no camera configured for point-cloud rendering")
            self._cloud = render_point_cloud(
                self.env.world, self.env.state, self.camera, self.n_points,
                seed=derive_seed(self.seed, self.step),
            )
        return self._cloud

    def poses(self) -> np.ndarray:
        target, palm, tips = self.env.frame_poses()
        return poses_to_array([target, palm, *tips])


class Actor(Protocol):
    def act(self, obs: np.ndarray, ctx: ActContext) -> np.ndarray: ...


@dataclass(eq=False)
class StateActor:
    policy: StatePolicy

    def act(self, obs: np.ndarray, ctx: ActContext) -> np.ndarray:
        return self.policy(obs)


class ReplayActor:
    """Track the active reference's joint path, one frame ahead."""

    def act(self, obs: np.ndarray, ctx: ActContext) -> np.ndarray:
        ref = ctx.env.active_reference
        return ref.q[ref.cursor(ctx.step + 1)]


@dataclass(eq=False)
class RandomActor:
    """Uniform joint targets inside the hand's limits."""

    seed: int = 0

    def act(self, obs: np.ndarray, ctx: ActContext) -> np.ndarray:
        rng = np.random.default_rng(derive_seed(self.seed, ctx.seed, ctx.step))
        scaling = ActionScaling.from_chain(ctx.env.chain)
        return scaling.to_targets(rng.uniform(-1.0, 1.0, size=scaling.dim))


@dataclass(eq=False)
class VisualActor:
    """Render, move the cloud into the policy's frames and act.

    A diffusion head runs only the first action of each sampled chunk.
    """

    policy: VisualPolicy
    frame_set: FrameSet = FrameSet.FULL

    def act(self, obs: np.ndarray, ctx: ActContext) -> np.ndarray:
        chain = ctx.env.chain
        pc = stack_frames(ctx.cloud(), ctx.poses(), self.frame_set, chain.num_fingertips)
        state = obs[:2 * chain.dof]
        if self.policy.kind is HeadKind.BC:
            return bc_forward(self.policy, pc, state)
        generator = torch.Generator().manual_seed(derive_seed(ctx.seed, ctx.step, 1))
        return diffusion_sample(self.policy, pc, state, generator)[0]


# ---------------------------------------------------------------------------
# Episodes
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EpisodeRecord:
    outcome: EpisodeOutcome
    episode: RolloutEpisode | None = None


def run_episode(
    env: ManipulationEnv,
    actor: Actor,
    ref: ReferenceTrajectory,
    *,
    seed: int = 0,
    camera: CameraSpec | None = None,
    n_points: int = 512,
    record: bool = False,
) -> EpisodeRecord:
    """Roll *actor* through one episode on *ref*; optionally record clouds and poses."""
    obs = env.reset(ref)
    observations, clouds, poses, actions, rewards, positions, stages = [], [], [], [], [], [], []
    for step in range(env.episode_length):
        ctx = ActContext(env, step, seed, camera, n_points)
        if record:
            observations.append(obs)
            clouds.append(ctx.cloud())
            poses.append(ctx.poses())
        targets = np.asarray(actor.act(obs, ctx), dtype=float)
        result = env.step(targets)
        if record:
            actions.append(targets)
            rewards.append(result.reward)
            positions.append(env.state.object_pose.translation.copy())
            stages.append(result.stage)
        obs = result.obs
        if result.done:
            break
    outcome = env.outcome()
    if not record:
        return EpisodeRecord(outcome)

    # Success is re-derived from the stored precision so datasets re-verify exactly.
    object_positions = np.array(positions, dtype=np.float32).astype(float)
    target = ref.target_pos.copy()
    sr10, sr3 = relocate_success(object_positions[-1], target)
    success = outcome.success if outcome.containment is not None else sr3
    episode = RolloutEpisode(
        observations=np.array(observations),
        clouds=np.array(clouds),
        poses=np.array(poses),
        actions=np.array(actions),
        rewards=np.array(rewards),
        object_positions=object_positions,
        stages=stages,
        target_pos=target,
        success=bool(success and not outcome.truncated),
        sr10=sr10,
        sr3=sr3,
        final_distance=float(np.linalg.norm(object_positions[-1] - target)),
        containment=outcome.containment,
        seed=seed,
    )
    return EpisodeRecord(outcome, episode)


def episode_reference(
    ref: ReferenceTrajectory, augment: AugmentSpec | None, seed: int, index: int,
    chain: KinematicChain | None = None,
) -> ReferenceTrajectory:
    """The reference for attempt *index*: an independent augmentation draw per attempt."""
    if augment is None:
        return ref
    rng = np.random.default_rng(derive_seed(seed, index))
    sample = sample_augmentation(augment, rng)
    return augment_reference(ref, sample, augment.interpolation_frames, chain=chain)


def run_in_waves(
    jobs: Sequence[T],
    run: Callable[[int, T], R],
    workers: int = 1,
) -> Iterator[list[R]]:
    """Run jobs in waves of *workers*; job i of a wave gets worker slot i. Order is kept."""
    if workers <= 1:
        for job in jobs:
            yield [run(0, job)]
        return
    with ThreadPoolExecutor(max_workers=workers) as executor:
        for start in range(0, len(jobs), workers):
            wave = jobs[start:start + workers]
            yield list(executor.map(run, range(len(wave)), wave))


# ---------------------------------------------------------------------------
# Collection
# ---------------------------------------------------------------------------

def collect_rollouts(
    env_factory: EnvFactory,
    actor: Actor,
    ref: ReferenceTrajectory,
    augment: AugmentSpec | None = None,
    required_successes: int = 100,
    *,
    camera: CameraSpec,
    n_points: int = 512,
    seed: int = 0,
    workers: int = 1,
    attempt_factor: int = 50,
    task: str = "relocate",
    source_checkpoint: str = "",
) -> Dataset:
    """Keep successful episodes until the quota; give up after ``attempt_factor`` x quota tries.

    Raises :class:`CollectionError` carrying the partial dataset when the cap
    is exhausted.
    """
    if required_successes < 1:
        raise InvalidInputError("required_successes must be positive")
    envs = [env_factory(w) for w in range(max(workers, 1))]
    chain = envs[0].chain
    dataset = Dataset(
        task=task,
        n_points=n_points,
        num_fingertips=chain.num_fingertips,
        dof=chain.dof,
        seed=seed,
        source_checkpoint=source_checkpoint,
    )
    max_attempts = attempt_factor * required_successes

    def attempt(slot: int, index: int) -> EpisodeRecord:
        episode_ref = episode_reference(ref, augment, seed, index, chain)
        return run_episode(
            envs[slot], actor, episode_ref,
            seed=derive_seed(seed, index, 2), camera=camera, n_points=n_points, record=True,
        )

    attempts = 0
    for wave in run_in_waves(list(range(max_attempts)), attempt, workers):
        for record in wave:
            attempts += 1
            if record.episode is not None and record.episode.success:
                dataset.episodes.append(record.episode)
            if len(dataset) >= required_successes:
                break
        if len(dataset) >= required_successes:
            break
    dataset.meta = {"attempts": attempts, "required_successes": required_successes}
    if len(dataset) < required_successes:
        logger.error(
            "rollout_collection_failed", attempts=attempts, successes=len(dataset),
            required=required_successes,
        )
        raise CollectionError(
            f"only {len(dataset)} of {required_successes} successful rollouts "
            f"after {attempts} attempts",
            partial=dataset,
        )
    logger.info("rollouts_collected", attempts=attempts, successes=len(dataset))
    return dataset
