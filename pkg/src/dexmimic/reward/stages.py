"""Two-stage reward machine: pre-grasp until the grasp pose is reached, then manipulation."""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import StrEnum

import numpy as np
import structlog

from dexmimic.kinematics.transforms import RigidTransform
from dexmimic.reward.reference import ReferenceTrajectory
from dexmimic.reward.terms import (
    RewardConfig,
    RewardVariant,
    manipulation_step_reward,
    palm_object_reward,
    pregrasp_step_reward,
)

logger = structlog.get_logger(__name__)


class Stage(StrEnum):
    PRE_GRASP = "pre_grasp"
    MANIPULATION = "manipulation"


@dataclass(frozen=True)
class RewardStageMachine:
    """Per-episode stage tracker.

    ``elapsed`` counts policy steps; ``cursor`` is the reference index, frozen at ``ref_len``.
    """

    pregrasp_len: int
    ref_len: int
    threshold: float = 0.03
    grace: int = 10
    stage: Stage = Stage.PRE_GRASP
    elapsed: int = 0

    @classmethod
    def for_reference(cls, ref: ReferenceTrajectory, config: RewardConfig) -> RewardStageMachine:
        return cls(
            pregrasp_len=ref.pregrasp_len,
            ref_len=ref.length,
            threshold=config.transition_threshold,
            grace=config.grace_steps,
        )

    @property
    def cursor(self) -> int:
        return min(self.elapsed, self.ref_len)

    def advance(self) -> RewardStageMachine:
        return replace(self, elapsed=self.elapsed + 1)


def mean_tip_error(tips: np.ndarray, ref_tips: np.ndarray) -> float:
    """Mean Euclidean distance over fingertips."""
    return float(np.mean(np.linalg.norm(np.asarray(tips) - np.asarray(ref_tips), axis=-1)))


def stage_transition(
    tips: np.ndarray, ref: ReferenceTrajectory, machine: RewardStageMachine,
) -> RewardStageMachine:
    """Switch to manipulation once the pre-grasp pose is reached or the grace window ends.

    Never switches back.
    """
    if machine.stage is Stage.MANIPULATION or machine.elapsed < machine.pregrasp_len:
        return machine
    error = mean_tip_error(tips, ref.tips[ref.cursor(machine.pregrasp_len)])
    reached = error < machine.threshold
    forced = machine.elapsed >= machine.pregrasp_len + machine.grace
    if reached or forced:
        logger.debug(
            "stage_transition",
            step=machine.elapsed,
            tip_error=round(error, 5),
            forced=not reached,
        )
        return replace(machine, stage=Stage.MANIPULATION)
    return machine


def staged_reward(
    machine: RewardStageMachine,
    ref: ReferenceTrajectory,
    config: RewardConfig,
    *,
    tips: np.ndarray,
    palm_pos: np.ndarray,
    object_pose: RigidTransform,
    contacts: int,
    lifted: bool,
) -> tuple[float, RewardStageMachine]:
    """Reward for the current step, then the machine advanced by one step."""
    machine = stage_transition(tips, ref, machine)
    frame = ref.frame(machine.cursor)
    c = config.coefficients
    if machine.stage is Stage.PRE_GRASP:
        if config.variant is RewardVariant.NO_PREGRASP_HAND:
            reward = palm_object_reward(
                palm_pos, object_pose.translation, c.pregrasp_scale, c.pregrasp_sharpness,
            )
        else:
            reward = pregrasp_step_reward(tips, frame.tips, c.pregrasp_scale, c.pregrasp_sharpness)
    else:
        reward = manipulation_step_reward(
            tips, object_pose, contacts, lifted, frame, c, config.variant,
        )
    return reward, machine.advance()
