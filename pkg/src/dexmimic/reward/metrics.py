"""Tracking and task-success metrics.

Thresholds follow the standard relocate protocol: per-step object error
below 1 cm and fingertip error below 5 cm count as tracked; the final
object position within 10 cm / 3 cm of the target counts as success.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from dexmimic.errors import InvalidInputError
from dexmimic.kinematics.transforms import RigidTransform
from dexmimic.reward.reference import ReferenceTrajectory
from dexmimic.sim.shapes import BodyShape, PosedShape, contains, sample_volume

OBJECT_TRACK_THRESHOLD = 0.01
HAND_TRACK_THRESHOLD = 0.05
SUCCESS_10CM = 0.10
SUCCESS_3CM = 0.03
CONTAINMENT_SUCCESS = 0.5


@dataclass(frozen=True)
class TrackingMetrics:
    """Mean object / fingertip errors (m) and their per-step tracked fractions."""

    object_error: float
    hand_error: float
    object_tracked: float
    hand_tracked: float


def step_errors(
    object_positions: np.ndarray,
    fingertips: np.ndarray,
    ref: ReferenceTrajectory,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-step object distance and mean fingertip distance against the reference."""
    object_positions = np.asarray(object_positions, dtype=float)
    fingertips = np.asarray(fingertips, dtype=float)
    steps = object_positions.shape[0]
    if steps == 0 or fingertips.shape[0] != steps:
        raise InvalidInputError(
            "achieved object and fingertip tracks must be non-empty and aligned",
        )
    idx = [ref.cursor(t) for t in range(steps)]
    obj_err = np.linalg.norm(object_positions - ref.obj_pos[idx], axis=-1)
    tip_err = np.mean(np.linalg.norm(fingertips - ref.tips[idx], axis=-1), axis=-1)
    return obj_err, tip_err


def episode_metrics(
    object_positions: np.ndarray,
    fingertips: np.ndarray,
    ref: ReferenceTrajectory,
) -> TrackingMetrics:
    obj_err, tip_err = step_errors(object_positions, fingertips, ref)
    return metrics_from_errors(obj_err, tip_err)


def metrics_from_errors(obj_err: Sequence[float], tip_err: Sequence[float]) -> TrackingMetrics:
    obj_err = np.asarray(obj_err, dtype=float)
    tip_err = np.asarray(tip_err, dtype=float)
    return TrackingMetrics(
        object_error=float(np.mean(obj_err)),
        hand_error=float(np.mean(tip_err)),
        object_tracked=float(np.mean(obj_err < OBJECT_TRACK_THRESHOLD)),
        hand_tracked=float(np.mean(tip_err < HAND_TRACK_THRESHOLD)),
    )


def relocate_success(final_position: np.ndarray, target: np.ndarray) -> tuple[bool, bool]:
    """(within 10 cm, within 3 cm) of the target position."""
    distance = float(np.linalg.norm(np.asarray(final_position) - np.asarray(target)))
    return distance < SUCCESS_10CM, distance < SUCCESS_3CM


def containment_fraction(
    object_shapes: BodyShape | Sequence[BodyShape],
    object_pose: RigidTransform,
    container: BodyShape,
    container_pose: RigidTransform,
    samples: int = 4096,
    seed: int = 0,
) -> float:
    """Monte-Carlo fraction of the object's volume inside the container volume.

    Each shape gets samples in proportion to its volume; a sample is kept only
    by the first shape that contains it, so overlapping shapes are counted once.
    """
    if isinstance(object_shapes, BodyShape):
        object_shapes = [object_shapes]
    if samples < 1:
        raise InvalidInputError("samples must be positive")
    rng = np.random.default_rng(seed)
    volumes = np.array([s.volume() for s in object_shapes])
    counts = np.floor(samples * volumes / volumes.sum()).astype(int)
    counts[0] += samples - counts.sum()
    body = object_pose.as_matrix()
    posed = [PosedShape.place(shape, body) for shape in object_shapes]
    points = []
    for i, (shape, n) in enumerate(zip(object_shapes, counts)):
        if n == 0:
            continue
        cloud = posed[i].to_world(sample_volume(shape, int(n), rng))
        for earlier in posed[:i]:
            cloud = cloud[~contains(earlier, cloud)]
        points.append(cloud)
    cloud = np.vstack(points)
    region = PosedShape.place(container, container_pose)
    return float(np.mean(contains(region, cloud)))


def place_inside_success(fraction: float) -> bool:
    return fraction >= CONTAINMENT_SUCCESS
