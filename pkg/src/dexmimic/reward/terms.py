"""Per-step reward terms for trajectory-guided manipulation.

Pre-grasp: the hand tracks the reference fingertip path with an
exponential kernel. Manipulation: hand tracking, object tracking, a
fingertip-contact count and a lift bonus, weighted by the coefficients
below.
"""

from __future__ import annotations

import math
from enum import StrEnum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from dexmimic.errors import InvalidInputError
from dexmimic.kinematics.transforms import RigidTransform, require_unit_quaternion
from dexmimic.reward.reference import ReferenceFrame


class RewardVariant(StrEnum):
    """Hand-reward ablations."""

    FULL = "full"
    NO_MANIPULATION_HAND = "no_manipulation_hand"
    NO_PREGRASP_HAND = "no_pregrasp_hand"


class RewardCoefficients(BaseModel):
    """Term weights and kernel sharpness for both stages."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    lambda_hand: float = Field(4.0, ge=0.0)
    lambda_object: float = Field(10.0, ge=0.0)
    lambda_contact: float = Field(0.5, ge=0.0)
    lambda_lift: float = Field(2.0, ge=0.0)
    alpha_position: float = Field(50.0, ge=0.0)
    alpha_rotation: float = Field(0.1, ge=0.0)
    pregrasp_scale: float = Field(10.0, ge=0.0)
    pregrasp_sharpness: float = Field(10.0, ge=0.0)
    hand_scale: float = Field(1.0, ge=0.0)
    contact_indicator: bool = False


class RewardConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    coefficients: RewardCoefficients = Field(default_factory=RewardCoefficients)
    variant: RewardVariant = RewardVariant.FULL
    transition_threshold: float = Field(0.03, gt=0.0)
    grace_steps: int = Field(10, ge=0)
    lift_epsilon: float = Field(0.02, ge=0.0)


def _squared_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.sum(diff * diff))


def pregrasp_step_reward(
    tips: np.ndarray,
    ref_tips: np.ndarray,
    scale: float = 10.0,
    sharpness: float = 10.0,
) -> float:
    """``scale * exp(-sharpness * ||tips - ref_tips||_F^2)``."""
    return scale * math.exp(-sharpness * _squared_error(tips, ref_tips))


def palm_object_reward(
    palm_pos: np.ndarray,
    obj_pos: np.ndarray,
    scale: float = 10.0,
    sharpness: float = 10.0,
) -> float:
    """Pre-grasp reward that only pulls the palm toward the object."""
    return scale * math.exp(-sharpness * _squared_error(palm_pos, obj_pos))


def angular_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Rotation angle between two unit quaternions, in [0, pi]; sign-invariant."""
    a = require_unit_quaternion(a, "first quaternion")
    b = require_unit_quaternion(b, "second quaternion")
    dot = min(abs(float(np.dot(a, b))), 1.0)
    return 2.0 * math.acos(dot)


def object_term(
    pose: RigidTransform,
    ref_pose: RigidTransform,
    alpha_position: float = 50.0,
    alpha_rotation: float = 0.1,
) -> float:
    """``exp(-a1 * (||x - x_ref||^2 + a2 * angle(q, q_ref)))``, in (0, 1]."""
    pos_err = _squared_error(pose.translation, ref_pose.translation)
    angle = angular_distance(pose.rotation, ref_pose.rotation)
    return math.exp(-alpha_position * (pos_err + alpha_rotation * angle))


def manipulation_step_reward(
    tips: np.ndarray,
    object_pose: RigidTransform,
    contacts: int,
    lifted: bool,
    ref: ReferenceFrame,
    coefficients: RewardCoefficients | None = None,
    variant: RewardVariant = RewardVariant.FULL,
) -> float:
    c = coefficients or RewardCoefficients()
    hand = 0.0
    if variant is not RewardVariant.NO_MANIPULATION_HAND:
        hand = pregrasp_step_reward(tips, ref.tips, c.hand_scale, c.pregrasp_sharpness)
    obj = object_term(
        object_pose,
        RigidTransform(rotation=ref.obj_quat, translation=ref.obj_pos),
        c.alpha_position,
        c.alpha_rotation,
    )
    contact = float(min(contacts, 1)) if c.contact_indicator else float(contacts)
    return (
        c.lambda_hand * hand
        + c.lambda_object * obj
        + c.lambda_contact * contact
        + c.lambda_lift * float(lifted)
    )
