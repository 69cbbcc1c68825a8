"""Human hand keypoint trajectories (21-joint convention) and their JSON-lines files.

Each line is ``{"t": int, "keypoints": [[x, y, z] x 21]}`` with optional
``"obj_pos"`` / ``"obj_quat"`` fields carrying the demonstrated object pose.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dexmimic.errors import InvalidInputError
from dexmimic.kinematics.transforms import RigidTransform, is_unit_quaternion

HAND_KEYPOINTS: tuple[str, ...] = (
    "wrist",
    "thumb_cmc", "thumb_mcp", "thumb_ip", "thumb_tip",
    "index_mcp", "index_pip", "index_dip", "index_tip",
    "middle_mcp", "middle_pip", "middle_dip", "middle_tip",
    "ring_mcp", "ring_pip", "ring_dip", "ring_tip",
    "pinky_mcp", "pinky_pip", "pinky_dip", "pinky_tip",
)
NUM_KEYPOINTS = len(HAND_KEYPOINTS)
MAX_WRIST_JUMP = 0.5


def keypoint_index(name: str) -> int:
    try:
        return HAND_KEYPOINTS.index(name)
    except ValueError as exc:
        raise InvalidInputError(f"unknown hand keypoint {name!r}") from exc


@dataclass(frozen=True, eq=False)
class HumanHandTrajectory:
    """(T, 21, 3) world keypoints in meters, plus an optional object track."""

    keypoints: np.ndarray
    object_poses: tuple[RigidTransform, ...] | None = None

    def __post_init__(self) -> None:
        kp = np.asarray(self.keypoints, dtype=float)
        object.__setattr__(self, "keypoints", kp)
        if kp.ndim != 3 or kp.shape[1:] != (NUM_KEYPOINTS, 3) or kp.shape[0] < 1:
            raise InvalidInputError(
                f"keypoints must have shape (T>=1, {NUM_KEYPOINTS}, 3), got {kp.shape}",
            )
        if not np.all(np.isfinite(kp)):
            raise InvalidInputError("keypoints contain non-finite coordinates")
        jumps = np.linalg.norm(np.diff(kp[:, 0], axis=0), axis=-1)
        if jumps.size and float(jumps.max()) >= MAX_WRIST_JUMP:
            frame = int(np.argmax(jumps)) + 1
            raise InvalidInputError(
                f"wrist moves {jumps.max():.3f} m between frames {frame - 1} and {frame}",
            )
        if self.object_poses is not None:
            if len(self.object_poses) != kp.shape[0]:
                raise InvalidInputError("object track must have one pose per keypoint frame")
            if not all(p.is_valid() for p in self.object_poses):
                raise InvalidInputError("object track contains an invalid pose")

    @property
    def length(self) -> int:
        return self.keypoints.shape[0]

    def translated(self, d: np.ndarray) -> HumanHandTrajectory:
        d = np.asarray(d, dtype=float)
        poses = None
        if self.object_poses is not None:
            shift = RigidTransform.from_translation(d)
            poses = tuple(shift @ p for p in self.object_poses)
        return HumanHandTrajectory(keypoints=self.keypoints + d, object_poses=poses)


def write_keypoints(traj: HumanHandTrajectory, path: Path | str) -> None:
    lines = []
    for t in range(traj.length):
        row: dict[str, object] = {"t": t, "keypoints": traj.keypoints[t].tolist()}
        if traj.object_poses is not None:
            row["obj_pos"] = traj.object_poses[t].translation.tolist()
            row["obj_quat"] = traj.object_poses[t].rotation.tolist()
        lines.append(json.dumps(row, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


def read_keypoints(path: Path | str) -> HumanHandTrajectory:
    path = Path(path)
    try:
        rows = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"{path}: cannot read keypoints ({exc})") from exc
    if not rows:
        raise InvalidInputError(f"{path}: no keypoint frames")
    rows.sort(key=lambda r: r.get("t", 0))
    if [r.get("t") for r in rows] != list(range(len(rows))):
        raise InvalidInputError(f"{path}: frame indices must run 0..T-1 without gaps")
    keypoints = np.array([r["keypoints"] for r in rows], dtype=float)
    poses = None
    with_object = ["obj_pos" in r for r in rows]
    if any(with_object):
        if not all(with_object):
            raise InvalidInputError(f"{path}: object pose present on some frames only")
        quats = [np.asarray(r["obj_quat"], dtype=float) for r in rows]
        if not all(is_unit_quaternion(q) for q in quats):
            raise InvalidInputError(f"{path}: object orientations must be unit quaternions")
        poses = tuple(
            RigidTransform(rotation=q, translation=r["obj_pos"]) for q, r in zip(quats, rows)
        )
    return HumanHandTrajectory(keypoints=keypoints, object_poses=poses)
