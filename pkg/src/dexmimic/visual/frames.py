"""Express one world point cloud in several task and robot frames at once."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from enum import StrEnum

import numpy as np

from dexmimic.errors import InvalidInputError
from dexmimic.kinematics.transforms import RigidTransform


class FrameSet(StrEnum):
    """Which frame blocks make up the network input."""

    WORLD = "world"
    WORLD_TARGET = "world+target"
    FULL = "world+target+palm+tips"

    def frame_count(self, num_fingertips: int) -> int:
        if self is FrameSet.WORLD:
            return 1
        if self is FrameSet.WORLD_TARGET:
            return 2
        return num_fingertips + 3


@dataclass(frozen=True, eq=False)
class MultiFramePointCloud:
    """``N x 3F`` matrix; blocks in the order [world | target | palm | tip_1..tip_j]."""

    data: np.ndarray
    frame_set: FrameSet = FrameSet.FULL
    num_fingertips: int = 0

    @property
    def n_points(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1] // 3

    @property
    def world(self) -> np.ndarray:
        return self.data[:, :3]

    def block(self, f: int) -> np.ndarray:
        if not 0 <= f < self.n_frames:
            raise InvalidInputError(f"frame block {f} out of range for {self.n_frames} frames")
        return self.data[:, 3 * f:3 * f + 3]


def _check_pose(pose: RigidTransform, name: str) -> None:
    if not pose.is_valid():
        raise InvalidInputError(f"{name} pose is not a valid rigid transform: {pose!r}")


def frame_poses(
    target: RigidTransform,
    palm: RigidTransform,
    fingertips: Sequence[RigidTransform],
    frame_set: FrameSet = FrameSet.FULL,
) -> list[RigidTransform]:
    """The non-world frames used by *frame_set*, in block order."""
    frame_set = FrameSet(frame_set)
    if frame_set is FrameSet.WORLD:
        return []
    if frame_set is FrameSet.WORLD_TARGET:
        return [target]
    return [target, palm, *fingertips]


def transform_to_frames(
    pc_world: np.ndarray,
    target: RigidTransform,
    palm: RigidTransform,
    fingertips: Sequence[RigidTransform],
    frame_set: FrameSet = FrameSet.FULL,
) -> MultiFramePointCloud:
    """Block f holds the points mapped by the inverse of frame f's world pose."""
    frame_set = FrameSet(frame_set)
    points = np.asarray(pc_world, dtype=float)
    if points.ndim != 2 or points.shape[1] != 3 or points.shape[0] == 0:
        raise InvalidInputError(f"point cloud must be (N, 3) with N >= 1, got {points.shape}")
    if not np.all(np.isfinite(points)):
        raise InvalidInputError("point cloud contains non-finite values")
    if frame_set is FrameSet.FULL and not fingertips:
        raise InvalidInputError("the full frame set needs at least one fingertip pose")
    _check_pose(target, "target")
    _check_pose(palm, "palm")
    for i, tip in enumerate(fingertips):
        _check_pose(tip, f"fingertip {i}")

    blocks = [points]
    for pose in frame_poses(target, palm, fingertips, frame_set):
        blocks.append(pose.inverse().apply(points))
    return MultiFramePointCloud(
        data=np.concatenate(blocks, axis=1),
        frame_set=frame_set,
        num_fingertips=len(fingertips),
    )


def poses_to_array(poses: Sequence[RigidTransform]) -> np.ndarray:
    """(P, 7) array of ``(x, y, z, qw, qx, qy, qz)`` rows."""
    return np.array([p.as_pose7() for p in poses]).reshape(len(poses), 7)


def stack_frames(
    pc_world: np.ndarray,
    poses: np.ndarray,
    frame_set: FrameSet,
    num_fingertips: int,
) -> np.ndarray:
    """Multi-frame data from a world cloud and a stored (2 + j, 7) pose array.

    Pose rows are [target, palm, tip_1..tip_j], as recorded in rollouts.
    """
    poses = np.asarray(poses, dtype=float)
    if poses.shape != (num_fingertips + 2, 7):
        raise InvalidInputError(
            f"expected {num_fingertips + 2} stored poses, got array of shape {poses.shape}",
        )
    rows = [RigidTransform.from_pose7(p) for p in poses]
    return transform_to_frames(pc_world, rows[0], rows[1], rows[2:], frame_set).data
