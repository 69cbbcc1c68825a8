"""Reference-trajectory augmentation.

Two operations generate new training references from one demonstration:

* a planar rigid motion (x/y translation plus a rotation about the vertical
  axis through the initial object position) applied to the whole scene;
* new target poses, reached by appending frames that interpolate the
  object from its last reference pose while the hand is carried rigidly
  with it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator

from dexmimic.kinematics.chain import KinematicChain, clamp_to_limits
from dexmimic.kinematics.transforms import (
    RigidTransform,
    expmap_to_quat,
    quat_multiply,
    quat_normalize,
    quat_to_expmap,
    slerp,
)
from dexmimic.reward.reference import ReferenceTrajectory

logger = structlog.get_logger(__name__)

Range = tuple[float, float]


class AugmentSpec(BaseModel):
    """Sampling ranges. Zero-width ranges disable the corresponding perturbation."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    translation_x: Range = (-0.10, 0.10)
    translation_y: Range = (-0.10, 0.10)
    rotation_z: Range = (-math.pi, math.pi)
    target_xy: Range = (-0.05, 0.05)
    target_z: Range = (0.0, 0.05)
    interpolation_frames: int = Field(10, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _ranges_ordered(self) -> AugmentSpec:
        for name in ("translation_x", "translation_y", "rotation_z", "target_xy", "target_z"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must satisfy low <= high, got ({lo}, {hi})")
        return self

    @classmethod
    def disabled(cls) -> AugmentSpec:
        zero = (0.0, 0.0)
        return cls(
            translation_x=zero, translation_y=zero, rotation_z=zero, target_xy=zero, target_z=zero,
        )


@dataclass(frozen=True)
class PlanarDelta:
    dx: float = 0.0
    dy: float = 0.0
    yaw: float = 0.0

    def is_identity(self) -> bool:
        return self.dx == 0.0 and self.dy == 0.0 and self.yaw == 0.0

    def as_transform(self, pivot: np.ndarray) -> RigidTransform:
        """Rotate about the vertical axis through *pivot*, then translate."""
        shift = RigidTransform.from_translation([self.dx, self.dy, 0.0])
        return shift @ RigidTransform.from_rotation_z(self.yaw, pivot)


@dataclass(frozen=True, eq=False)
class AugmentSample:
    delta: PlanarDelta
    target_offset: np.ndarray | None = None


def unwrap_expmap(r: np.ndarray, previous: np.ndarray) -> np.ndarray:
    """Equivalent rotation vector (angle shifted by 2*pi) closest to *previous*."""
    angle = float(np.linalg.norm(r))
    if angle < 1e-12:
        return r
    axis = r / angle
    alternative = (angle - 2.0 * math.pi) * axis
    if np.linalg.norm(alternative - previous) < np.linalg.norm(r - previous):
        return alternative
    return r


def _base_frame(chain: KinematicChain | None) -> RigidTransform:
    return RigidTransform() if chain is None else chain.free_base_frame()


def _move_base(
    q: np.ndarray, base_dof: int, g: RigidTransform, previous: np.ndarray,
    frame: RigidTransform, chain: KinematicChain | None,
) -> np.ndarray:
    """Move the free base so every link below it moves by the world motion *g*."""
    local = frame.inverse() @ g @ frame
    out = q.copy()
    out[base_dof:base_dof + 3] = local.apply(q[base_dof:base_dof + 3])
    turned = quat_multiply(local.rotation, expmap_to_quat(q[base_dof + 3:base_dof + 6]))
    rot = quat_normalize(turned)
    out[base_dof + 3:base_dof + 6] = unwrap_expmap(quat_to_expmap(rot), previous)
    if chain is not None:
        out = clamp_to_limits(chain, out)
    return out


def transform_reference(
    ref: ReferenceTrajectory, delta: PlanarDelta, *, chain: KinematicChain | None = None,
) -> ReferenceTrajectory:
    """Apply a planar rigid motion to every frame of *ref*.

    Finger joints are unchanged; the free base (when present) is moved with
    the scene. Given the *chain*, the base moves through the chain's base
    frame and stays inside its limits; without it the base frame is the
    world frame. The identity delta returns *ref* itself.
    """
    if delta.is_identity():
        return ref
    g = delta.as_transform(ref.obj_pos[0])
    obj_quat = np.array([quat_normalize(quat_multiply(g.rotation, qt)) for qt in ref.obj_quat])
    q = ref.q.copy()
    if ref.base_dof is not None:
        b = ref.base_dof
        frame = _base_frame(chain)
        previous = ref.q[0, b + 3:b + 6]
        for t in range(ref.length):
            q[t] = _move_base(ref.q[t], b, g, previous, frame, chain)
            previous = q[t, b + 3:b + 6]
    return ReferenceTrajectory(
        q=q,
        tips=g.apply(ref.tips.reshape(-1, 3)).reshape(ref.tips.shape),
        obj_pos=g.apply(ref.obj_pos),
        obj_quat=obj_quat,
        pregrasp_len=ref.pregrasp_len,
        target_pos=g.apply(ref.target_pos),
        target_quat=quat_normalize(quat_multiply(g.rotation, ref.target_quat)),
        base_dof=ref.base_dof,
    )


def interpolate_target(
    ref: ReferenceTrajectory, target: RigidTransform, frames: int,
    *, chain: KinematicChain | None = None,
) -> ReferenceTrajectory:
    """Append *frames* frames moving the object from its last pose to *target*.

    Positions are interpolated linearly and orientations by slerp; the hand
    keeps its last-frame pose relative to the object.
    """
    if frames < 1:
        raise ValueError("interpolation needs at least one frame")
    last = ref.object_pose(ref.length - 1)
    last_inv = last.inverse()
    new_q, new_tips, new_pos, new_quat = [], [], [], []
    previous = None if ref.base_dof is None else ref.q[-1, ref.base_dof + 3:ref.base_dof + 6]
    frame = None if ref.base_dof is None else _base_frame(chain)
    for k in range(1, frames + 1):
        s = k / frames
        pos = (1.0 - s) * last.translation + s * target.translation
        quat = slerp(last.rotation, target.rotation, s)
        carry = RigidTransform(rotation=quat, translation=pos) @ last_inv
        q = ref.q[-1].copy()
        if ref.base_dof is not None:
            q = _move_base(ref.q[-1], ref.base_dof, carry, previous, frame, chain)
            previous = q[ref.base_dof + 3:ref.base_dof + 6]
        new_q.append(q)
        new_tips.append(carry.apply(ref.tips[-1]))
        new_pos.append(pos)
        new_quat.append(quat)
    return ReferenceTrajectory(
        q=np.vstack([ref.q, np.array(new_q)]),
        tips=np.concatenate([ref.tips, np.array(new_tips)]),
        obj_pos=np.vstack([ref.obj_pos, np.array(new_pos)]),
        obj_quat=np.vstack([ref.obj_quat, np.array(new_quat)]),
        pregrasp_len=ref.pregrasp_len,
        target_pos=target.translation.copy(),
        target_quat=target.rotation.copy(),
        base_dof=ref.base_dof,
    )


def sample_augmentation(spec: AugmentSpec, rng: np.random.Generator) -> AugmentSample:
    """Uniform draw inside the configured ranges.

    No target offset when both target ranges are zero.
    """
    delta = PlanarDelta(
        dx=float(rng.uniform(*spec.translation_x)),
        dy=float(rng.uniform(*spec.translation_y)),
        yaw=float(rng.uniform(*spec.rotation_z)),
    )
    lo_xy, hi_xy = spec.target_xy
    lo_z, hi_z = spec.target_z
    if lo_xy == hi_xy == 0.0 and lo_z == hi_z == 0.0:
        return AugmentSample(delta=delta)
    offset = np.array([
        rng.uniform(lo_xy, hi_xy),
        rng.uniform(lo_xy, hi_xy),
        rng.uniform(lo_z, hi_z),
    ])
    return AugmentSample(delta=delta, target_offset=offset)


def augment_reference(
    ref: ReferenceTrajectory, sample: AugmentSample, frames: int,
    *, chain: KinematicChain | None = None,
) -> ReferenceTrajectory:
    """Transform *ref* by the sample's delta, then interpolate to the shifted target."""
    moved = transform_reference(ref, sample.delta, chain=chain)
    if sample.target_offset is None:
        return moved
    target = RigidTransform(
        rotation=moved.target_quat, translation=moved.target_pos + sample.target_offset,
    )
    logger.debug(
        "reference_augmented",
        dx=sample.delta.dx, dy=sample.delta.dy, yaw=sample.delta.yaw,
        target=target.translation.tolist(),
    )
    return interpolate_target(moved, target, frames, chain=chain)
