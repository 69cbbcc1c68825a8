"""Trajectory-guided staged reward, reference trajectories and tracking metrics."""

from dexmimic.reward.metrics import (
    TrackingMetrics,
    containment_fraction,
    episode_metrics,
    place_inside_success,
    relocate_success,
)
from dexmimic.reward.reference import ReferenceTrajectory, read_reference, write_reference
from dexmimic.reward.stages import RewardStageMachine, Stage, stage_transition, staged_reward
from dexmimic.reward.terms import (
    RewardCoefficients,
    RewardConfig,
    RewardVariant,
    angular_distance,
    manipulation_step_reward,
    object_term,
    pregrasp_step_reward,
)

__all__ = [
    # reference
    "ReferenceTrajectory",
    "read_reference",
    "write_reference",
    # terms
    "RewardCoefficients",
    "RewardConfig",
    "RewardVariant",
    "pregrasp_step_reward",
    "angular_distance",
    "object_term",
    "manipulation_step_reward",
    # stages
    "Stage",
    "RewardStageMachine",
    "stage_transition",
    "staged_reward",
    # metrics
    "TrackingMetrics",
    "episode_metrics",
    "relocate_success",
    "containment_fraction",
    "place_inside_success",
]
