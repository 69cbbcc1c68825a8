"""Environments for state-based policy learning.

Both environments share one observation layout::

    [q (dof) | qd (dof) | object position (3) | object quaternion (4) |
     target position (3) | reference phase (1)]

and take absolute joint targets as actions. Policies act in a normalized
[-1, 1] box per DoF; :class:`ActionScaling` maps between the two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import structlog

from dexmimic.errors import InvalidInputError
from dexmimic.kinematics.chain import KinematicChain, chain_from_dict, link_matrices
from dexmimic.kinematics.transforms import RigidTransform
from dexmimic.reward.metrics import (
    SUCCESS_3CM,
    TrackingMetrics,
    containment_fraction,
    episode_metrics,
    place_inside_success,
    relocate_success,
)
from dexmimic.reward.reference import ReferenceTrajectory
from dexmimic.reward.stages import RewardStageMachine, Stage, staged_reward
from dexmimic.reward.terms import RewardConfig
from dexmimic.sim.shapes import BodyShape
from dexmimic.sim.world import World, WorldState

logger = structlog.get_logger(__name__)

OBJECT_STATE_DIM = 3 + 4 + 3 + 1


def observation_dim(dof: int) -> int:
    return 2 * dof + OBJECT_STATE_DIM


def build_observation(
    q: np.ndarray,
    qd: np.ndarray,
    obj_pos: np.ndarray,
    obj_quat: np.ndarray,
    target_pos: np.ndarray,
    phase: float,
) -> np.ndarray:
    return np.concatenate([q, qd, obj_pos, obj_quat, target_pos, [phase]])


@dataclass(frozen=True, eq=False)
class ActionScaling:
    """Affine map from the normalized action box to joint targets.

    Unbounded DoF (free-base rotation) use [-pi, pi].
    """

    low: np.ndarray
    high: np.ndarray

    @classmethod
    def from_chain(cls, chain: KinematicChain) -> ActionScaling:
        low = np.where(np.isfinite(chain.lower), chain.lower, -math.pi)
        high = np.where(np.isfinite(chain.upper), chain.upper, math.pi)
        return cls(low=low, high=high)

    @property
    def dim(self) -> int:
        return self.low.size

    def to_targets(self, action: np.ndarray) -> np.ndarray:
        a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
        return 0.5 * (self.high + self.low) + 0.5 * (self.high - self.low) * a

    def to_normalized(self, targets: np.ndarray) -> np.ndarray:
        half = 0.5 * (self.high - self.low)
        safe = np.where(half > 0.0, half, 1.0)
        a = (np.asarray(targets, dtype=float) - 0.5 * (self.high + self.low)) / safe
        return np.clip(a, -1.0, 1.0)


@dataclass(frozen=True)
class StepResult:
    obs: np.ndarray
    reward: float
    done: bool
    truncated: bool = False
    stage: str = Stage.PRE_GRASP.value


@dataclass(frozen=True)
class EpisodeOutcome:
    success: bool
    sr10: bool
    sr3: bool
    final_distance: float
    metrics: TrackingMetrics | None = None
    containment: float | None = None
    truncated: bool = False
    steps: int = 0


class TrackingEnv(Protocol):
    chain: KinematicChain
    episode_length: int

    @property
    def obs_dim(self) -> int: ...

    def reset(self, ref: ReferenceTrajectory | None = None) -> np.ndarray: ...

    def step(self, targets: np.ndarray) -> StepResult: ...

    def outcome(self) -> EpisodeOutcome: ...


# ---------------------------------------------------------------------------
# Trajectory-guided manipulation
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class _Episode:
    ref: ReferenceTrajectory
    state: WorldState
    machine: RewardStageMachine
    steps: int = 0
    truncated: bool = False
    object_positions: list[np.ndarray] = field(default_factory=list)
    fingertips: list[np.ndarray] = field(default_factory=list)


class ManipulationEnv:
    """One simulated world tracking a reference trajectory with the staged reward.

    Success is SR_3 on the final object position, or containment when a
    container region is configured.
    """

    def __init__(
        self,
        world: World,
        reference: ReferenceTrajectory,
        reward: RewardConfig | None = None,
        episode_length: int = 60,
        *,
        container: BodyShape | None = None,
        container_pose: RigidTransform | None = None,
    ) -> None:
        if episode_length < 1:
            raise InvalidInputError("episode length must be positive")
        if reference.num_fingertips != world.chain.num_fingertips:
            raise InvalidInputError("reference and hand disagree on the fingertip count")
        if reference.q.shape[1] != world.chain.dof:
            raise InvalidInputError("reference joint vectors do not match the hand's DoF")
        self.world = world
        self.chain = world.chain
        self.reference = reference
        self.reward = reward or RewardConfig()
        self.episode_length = episode_length
        self.container = container
        self.container_pose = container_pose
        self._episode: _Episode | None = None

    @property
    def obs_dim(self) -> int:
        return observation_dim(self.chain.dof)

    @property
    def state(self) -> WorldState:
        return self._current.state

    @property
    def active_reference(self) -> ReferenceTrajectory:
        return self._current.ref

    @property
    def _current(self) -> _Episode:
        if self._episode is None:
            raise InvalidInputError("environment has not been reset")
        return self._episode

    def reset(self, ref: ReferenceTrajectory | None = None) -> np.ndarray:
        """Start an episode at the first frame of *ref* (default: the env's reference)."""
        ref = ref or self.reference
        q0 = np.clip(ref.q[0], self.chain.lower, self.chain.upper)
        state = self.world.reset(ref.object_pose(0), q0)
        self._episode = _Episode(
            ref=ref, state=state, machine=RewardStageMachine.for_reference(ref, self.reward),
        )
        return self.observe()

    def observe(self) -> np.ndarray:
        ep = self._current
        s = ep.state
        return build_observation(
            s.q, s.qd, s.object_pose.translation, s.object_pose.rotation,
            ep.ref.target_pos, ep.ref.phase(ep.steps),
        )

    def fingertip_positions(self) -> np.ndarray:
        return link_matrices(self.chain, self.state.q)[list(self.chain.fingertips), :3, 3]

    def frame_poses(self) -> tuple[RigidTransform, RigidTransform, list[RigidTransform]]:
        """(target, palm, fingertips) world poses for the multi-frame point cloud."""
        mats = link_matrices(self.chain, self.state.q)
        palm = RigidTransform.from_matrix(mats[self.chain.palm])
        tips = [RigidTransform.from_matrix(mats[i]) for i in self.chain.fingertips]
        return self._current.ref.target_pose, palm, tips

    def step(self, targets: np.ndarray) -> StepResult:
        ep = self._current
        try:
            state = self.world.step(ep.state, targets)
            if not state.is_finite():
                raise InvalidInputError("simulation produced non-finite state")
        except InvalidInputError as exc:
            logger.warning("episode_truncated", step=ep.steps, reason=str(exc))
            ep.truncated = True
            ep.steps += 1
            return StepResult(self.observe(), 0.0, True, True, ep.machine.stage.value)

        ep.state = state
        mats = link_matrices(self.chain, state.q)
        tips = mats[list(self.chain.fingertips), :3, 3]
        reward, ep.machine = staged_reward(
            ep.machine,
            ep.ref,
            self.reward,
            tips=tips,
            palm_pos=mats[self.chain.palm, :3, 3],
            object_pose=state.object_pose,
            contacts=self.world.fingertips_in_contact(state),
            lifted=self.world.is_lifted(state, self.reward.lift_epsilon),
        )
        ep.steps += 1
        ep.object_positions.append(state.object_pose.translation.copy())
        ep.fingertips.append(tips.copy())
        done = ep.steps >= self.episode_length
        return StepResult(self.observe(), reward, done, False, ep.machine.stage.value)

    def outcome(self) -> EpisodeOutcome:
        ep = self._current
        final = ep.state.object_pose.translation
        sr10, sr3 = relocate_success(final, ep.ref.target_pos)
        metrics = None
        if ep.object_positions:
            metrics = episode_metrics(
                np.array(ep.object_positions), np.array(ep.fingertips), ep.ref,
            )
        containment = None
        success = sr3
        if self.container is not None and self.container_pose is not None:
            containment = containment_fraction(
                self.world.object_shapes, ep.state.object_pose, self.container, self.container_pose,
            )
            success = place_inside_success(containment)
        return EpisodeOutcome(
            success=success and not ep.truncated,
            sr10=sr10,
            sr3=sr3,
            final_distance=float(np.linalg.norm(final - ep.ref.target_pos)),
            metrics=metrics,
            containment=containment,
            truncated=ep.truncated,
            steps=ep.steps,
        )


# ---------------------------------------------------------------------------
# Toy reach task
# ---------------------------------------------------------------------------

REACH_RANGE = 0.3


def reach_chain() -> KinematicChain:
    """Three prismatic DoF carrying a single fingertip."""
    slide = [-REACH_RANGE, REACH_RANGE]
    return chain_from_dict({
        "name": "reach",
        "links": [
            {"name": "x", "joint": {"type": "prismatic", "axis": [1, 0, 0], "limits": [slide]}},
            {"name": "y", "parent": "x",
             "joint": {"type": "prismatic", "axis": [0, 1, 0], "limits": [slide]}},
            {"name": "z", "parent": "y",
             "joint": {"type": "prismatic", "axis": [0, 0, 1], "limits": [slide]}},
            {"name": "tip", "parent": "z"},
        ],
        "palm": "z",
        "fingertips": ["tip"],
    })


class ReachEnv:
    """Move one fingertip to a random static target; no object, first-order joint response.

    The fingertip stands in for the object in the observation. Reward is the
    negative distance plus a unit bonus inside 3 cm; success is ending within
    3 cm of the target.
    """

    def __init__(
        self,
        episode_length: int = 30,
        seed: int = 0,
        response: float = 0.5,
        dt: float = 0.02,
    ) -> None:
        self.chain = reach_chain()
        self.episode_length = episode_length
        self.response = response
        self.dt = dt
        self._rng = np.random.default_rng(seed)
        self.q = np.zeros(3)
        self.qd = np.zeros(3)
        self.target = np.zeros(3)
        self.steps = 0

    @property
    def obs_dim(self) -> int:
        return observation_dim(self.chain.dof)

    def reset(self, ref: ReferenceTrajectory | None = None) -> np.ndarray:
        span = 0.8 * REACH_RANGE
        self.q = self._rng.uniform(-span, span, size=3)
        self.qd = np.zeros(3)
        self.target = (
            ref.target_pos.copy() if ref is not None else self._rng.uniform(-span, span, size=3)
        )
        self.steps = 0
        return self.observe()

    def tip(self) -> np.ndarray:
        return self.q.copy()

    def observe(self) -> np.ndarray:
        phase = min(self.steps / max(self.episode_length - 1, 1), 1.0)
        return build_observation(
            self.q, self.qd, self.tip(), np.array([1.0, 0.0, 0.0, 0.0]), self.target, phase,
        )

    def step(self, targets: np.ndarray) -> StepResult:
        targets = np.clip(np.asarray(targets, dtype=float), self.chain.lower, self.chain.upper)
        if not np.all(np.isfinite(targets)):
            raise InvalidInputError("action contains non-finite values")
        previous = self.q
        self.q = previous + self.response * (targets - previous)
        self.qd = (self.q - previous) / self.dt
        self.steps += 1
        distance = float(np.linalg.norm(self.tip() - self.target))
        reward = -distance + float(distance < SUCCESS_3CM)
        return StepResult(self.observe(), reward, self.steps >= self.episode_length)

    def outcome(self) -> EpisodeOutcome:
        distance = float(np.linalg.norm(self.tip() - self.target))
        sr10, sr3 = relocate_success(self.tip(), self.target)
        return EpisodeOutcome(
            success=sr3, sr10=sr10, sr3=sr3, final_distance=distance, steps=self.steps,
        )
