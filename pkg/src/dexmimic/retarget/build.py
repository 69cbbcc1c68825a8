"""Turn a retargeted robot trajectory plus the demonstrated object track into a reference."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
import structlog

from dexmimic.errors import InvalidInputError
from dexmimic.kinematics.chain import KinematicChain, link_matrices
from dexmimic.kinematics.transforms import RigidTransform
from dexmimic.retarget.solver import RobotTrajectory
from dexmimic.reward.reference import ReferenceTrajectory

logger = structlog.get_logger(__name__)

OBJECT_MOVE_THRESHOLD = 0.005


def pregrasp_split(object_positions: np.ndarray, threshold: float = OBJECT_MOVE_THRESHOLD) -> int:
    """Last frame before the object first leaves a *threshold* ball around its start.

    Clamped to [1, T - 1]; a track that never moves gives T - 1.
    """
    positions = np.asarray(object_positions, dtype=float)
    n = positions.shape[0]
    moved = np.linalg.norm(positions - positions[0], axis=-1) > threshold
    split = int(np.argmax(moved)) - 1 if moved.any() else n - 1
    return min(max(split, 1), n - 1)


def build_reference(
    chain: KinematicChain,
    robot: RobotTrajectory,
    object_poses: Sequence[RigidTransform],
    pregrasp_len: int | None = None,
) -> ReferenceTrajectory:
    """Fingertip targets from FK of the retargeted joints; target = final object pose."""
    if len(object_poses) != robot.length:
        raise InvalidInputError(
            f"object track has {len(object_poses)} poses for {robot.length} robot frames",
        )
    if robot.length < 2:
        raise InvalidInputError("a reference needs at least two frames")
    tips = np.stack([
        link_matrices(chain, q)[list(chain.fingertips), :3, 3] for q in robot.q
    ])
    obj_pos = np.array([p.translation for p in object_poses])
    obj_quat = np.array([p.rotation for p in object_poses])
    t_p = pregrasp_split(obj_pos) if pregrasp_len is None else pregrasp_len
    base_dof = None if chain.free_base is None else chain.dof_offsets[chain.free_base]
    ref = ReferenceTrajectory(
        q=robot.q.copy(),
        tips=tips,
        obj_pos=obj_pos,
        obj_quat=obj_quat,
        pregrasp_len=t_p,
        target_pos=obj_pos[-1].copy(),
        target_quat=obj_quat[-1].copy(),
        base_dof=base_dof,
    )
    logger.info(
        "reference_built", frames=ref.length, pregrasp_len=t_p, fingertips=ref.num_fingertips,
    )
    return ref
