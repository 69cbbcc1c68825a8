"""Reference trajectories: the time-indexed hand and object motion a policy tracks.

On disk a reference is JSON lines: a header object followed by one object
per frame::

    {"T_p": 12, "T_r": 40, "target_pos": [...], "target_quat": [...], "base_dof": 0}
    {"t": 0, "q": [...], "tips": [[x, y, z], ...], "obj_pos": [...], "obj_quat": [...]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from dexmimic.errors import InvalidInputError
from dexmimic.kinematics.transforms import RigidTransform, is_unit_quaternion


@dataclass(frozen=True)
class ReferenceFrame:
    q: np.ndarray
    tips: np.ndarray
    obj_pos: np.ndarray
    obj_quat: np.ndarray


@dataclass(frozen=True, eq=False)
class ReferenceTrajectory:
    """Per-frame robot joints, fingertip targets and object poses.

    ``pregrasp_len`` frames precede the manipulation stage. ``base_dof`` is
    the index of the first free-base DoF in ``q`` (None for fixed-base
    hands); augmentation uses it to move the hand with the scene.
    """

    q: np.ndarray
    tips: np.ndarray
    obj_pos: np.ndarray
    obj_quat: np.ndarray
    pregrasp_len: int
    target_pos: np.ndarray
    target_quat: np.ndarray
    base_dof: int | None = 0

    def __post_init__(self) -> None:
        for name in ("q", "tips", "obj_pos", "obj_quat", "target_pos", "target_quat"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.q.shape[0]
        if self.q.ndim != 2 or n < 2:
            raise InvalidInputError("a reference needs at least two frames of joint values")
        if self.tips.ndim != 3 or self.tips.shape[0] != n or self.tips.shape[2] != 3:
            raise InvalidInputError(f"tips must have shape ({n}, j, 3), got {self.tips.shape}")
        if self.obj_pos.shape != (n, 3) or self.obj_quat.shape != (n, 4):
            raise InvalidInputError("object poses must have one position and quaternion per frame")
        if not 0 < self.pregrasp_len < n:
            raise InvalidInputError(
                f"pre-grasp length must satisfy 0 < T_p < T_r, got {self.pregrasp_len} / {n}",
            )
        arrays = (self.q, self.tips, self.obj_pos, self.obj_quat, self.target_pos, self.target_quat)
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise InvalidInputError("reference contains non-finite values")
        if not all(is_unit_quaternion(qt) for qt in self.obj_quat) or not is_unit_quaternion(
            self.target_quat,
        ):
            raise InvalidInputError("reference orientations must be unit quaternions")

    @property
    def length(self) -> int:
        return self.q.shape[0]

    @property
    def num_fingertips(self) -> int:
        return self.tips.shape[1]

    @property
    def target_pose(self) -> RigidTransform:
        return RigidTransform(rotation=self.target_quat, translation=self.target_pos)

    def object_pose(self, t: int) -> RigidTransform:
        return RigidTransform(rotation=self.obj_quat[t], translation=self.obj_pos[t])

    def cursor(self, step: int) -> int:
        """Reference frame index for policy step *step*, frozen at the last frame."""
        return min(max(step, 0), self.length - 1)

    def frame(self, t: int) -> ReferenceFrame:
        t = self.cursor(t)
        return ReferenceFrame(self.q[t], self.tips[t], self.obj_pos[t], self.obj_quat[t])

    def phase(self, step: int) -> float:
        return self.cursor(step) / (self.length - 1)


def reference_to_lines(ref: ReferenceTrajectory) -> list[str]:
    header: dict[str, Any] = {
        "T_p": ref.pregrasp_len,
        "T_r": ref.length,
        "target_pos": ref.target_pos.tolist(),
        "target_quat": ref.target_quat.tolist(),
        "base_dof": ref.base_dof,
    }
    lines = [json.dumps(header, sort_keys=True)]
    for t in range(ref.length):
        lines.append(json.dumps({
            "t": t,
            "q": ref.q[t].tolist(),
            "tips": ref.tips[t].tolist(),
            "obj_pos": ref.obj_pos[t].tolist(),
            "obj_quat": ref.obj_quat[t].tolist(),
        }, sort_keys=True))
    return lines


def write_reference(ref: ReferenceTrajectory, path: Path | str) -> None:
    Path(path).write_text("\n".join(reference_to_lines(ref)) + "\n")


def read_reference(path: Path | str) -> ReferenceTrajectory:
    path = Path(path)
    try:
        rows = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"{path}: cannot read reference ({exc})") from exc
    if not rows:
        raise InvalidInputError(f"{path}: empty reference file")
    try:
        header, frames = rows[0], sorted(rows[1:], key=lambda r: r["t"])
        if len(frames) != header["T_r"] or [f["t"] for f in frames] != list(range(len(frames))):
            raise InvalidInputError(f"{path}: frames do not cover 0..T_r-1")
        return ReferenceTrajectory(
            q=np.array([f["q"] for f in frames]),
            tips=np.array([f["tips"] for f in frames]),
            obj_pos=np.array([f["obj_pos"] for f in frames]),
            obj_quat=np.array([f["obj_quat"] for f in frames]),
            pregrasp_len=int(header["T_p"]),
            target_pos=np.array(header["target_pos"]),
            target_quat=np.array(header["target_quat"]),
            base_dof=header.get("base_dof"),
        )
    except KeyError as exc:
        raise InvalidInputError(f"{path}: missing field {exc.args[0]!r}") from exc
