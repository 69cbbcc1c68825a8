"""Configurable kinematic hand model.

A hand is data: an ordered list of links, each attached to its parent by a
fixed offset followed by a joint motion. The loader accepts a JSON
description (see :func:`load_chain`) and the package ships a default desk
hand with a 6-DoF free base and four 3-joint fingers.

Free-base joints consume six DoF: three translations followed by three
exponential-map rotation parameters.
"""

from __future__ import annotations

import json
import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray

from dexmimic.errors import InvalidInputError
from dexmimic.kinematics.transforms import (
    RigidTransform,
    expmap_to_matrix,
    left_jacobian,
    quat_from_axis_angle,
)

JointConfig = NDArray[np.float64]
ArrayLike = Sequence[float] | np.ndarray

JOINT_TYPES = ("revolute", "prismatic", "fixed", "free-base")
_DOF_PER_TYPE = {"revolute": 1, "prismatic": 1, "fixed": 0, "free-base": 6}


@dataclass(frozen=True, eq=False)
class Link:
    """One rigid link and the joint that attaches it to its parent."""

    name: str
    parent: int
    offset: RigidTransform
    axis: np.ndarray
    joint_type: str

    @property
    def dof(self) -> int:
        return _DOF_PER_TYPE[self.joint_type]


@dataclass(frozen=True, eq=False)
class KinematicChain:
    """Topologically ordered links with per-DoF limits and named frames."""

    links: tuple[Link, ...]
    lower: np.ndarray
    upper: np.ndarray
    palm: int
    fingertips: tuple[int, ...]
    base: RigidTransform = field(default_factory=RigidTransform)
    name: str = "hand"

    def __post_init__(self) -> None:
        for i, link in enumerate(self.links):
            if link.joint_type not in JOINT_TYPES:
                raise InvalidInputError(
                    f"link {link.name!r}: unknown joint type {link.joint_type!r}",
                )
            if link.parent >= i:
                raise InvalidInputError(
                    f"link {link.name!r}: parent index {link.parent} is not before {i}",
                )
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))
        if self.lower.shape != (self.dof,) or self.upper.shape != (self.dof,):
            raise InvalidInputError(f"limits must have one entry per DoF ({self.dof})")
        if np.any(self.lower > self.upper):
            raise InvalidInputError("joint limits must satisfy lower <= upper")
        if not 0 <= self.palm < len(self.links):
            raise InvalidInputError("palm frame must name an existing link")
        if len(self.fingertips) < 1:
            raise InvalidInputError("a hand needs at least one fingertip frame")

    @cached_property
    def dof(self) -> int:
        return sum(link.dof for link in self.links)

    @cached_property
    def dof_offsets(self) -> tuple[int, ...]:
        """Index of each link's first DoF in the joint vector."""
        offsets = []
        cursor = 0
        for link in self.links:
            offsets.append(cursor)
            cursor += link.dof
        return tuple(offsets)

    @cached_property
    def link_index(self) -> dict[str, int]:
        return {link.name: i for i, link in enumerate(self.links)}

    @cached_property
    def ancestors(self) -> tuple[tuple[int, ...], ...]:
        """For every link, the chain of link indices from the root down to itself."""
        paths: list[tuple[int, ...]] = []
        for i, link in enumerate(self.links):
            prefix = paths[link.parent] if link.parent >= 0 else ()
            paths.append((*prefix, i))
        return tuple(paths)

    @cached_property
    def offset_matrices(self) -> np.ndarray:
        return np.stack([link.offset.as_matrix() for link in self.links])

    @property
    def num_fingertips(self) -> int:
        return len(self.fingertips)

    @cached_property
    def free_base(self) -> int | None:
        """Index of the free-base link, if the chain has one."""
        for i, link in enumerate(self.links):
            if link.joint_type == "free-base":
                return i
        return None

    def free_base_frame(self) -> RigidTransform:
        """World pose of the free-base joint before its own motion."""
        i = self.free_base
        if i is None:
            raise InvalidInputError(f"chain {self.name!r} has no free base")
        link = self.links[i]
        if link.parent >= 0:
            raise InvalidInputError(
                f"free base of chain {self.name!r} must attach to the chain root",
            )
        return self.base @ link.offset

    def index_of(self, name: str) -> int:
        try:
            return self.link_index[name]
        except KeyError as exc:
            raise InvalidInputError(f"unknown link {name!r} in chain {self.name!r}") from exc

    def with_base(self, base: RigidTransform) -> KinematicChain:
        """Same chain rooted at *base* instead of its current world transform."""
        return replace(self, base=base)


# ---------------------------------------------------------------------------
# Forward kinematics
# ---------------------------------------------------------------------------

def as_joint_config(chain: KinematicChain, q: ArrayLike) -> JointConfig:
    """Validate *q* against the chain's DoF count."""
    arr = np.asarray(q, dtype=float)
    if arr.shape != (chain.dof,):
        raise InvalidInputError(
            f"joint config has shape {arr.shape}, chain {chain.name!r} expects ({chain.dof},)",
        )
    return arr


def _joint_motion(link: Link, values: np.ndarray) -> np.ndarray:
    m = np.eye(4)
    if link.joint_type == "revolute":
        m[:3, :3] = expmap_to_matrix(link.axis * values[0])
    elif link.joint_type == "prismatic":
        m[:3, 3] = link.axis * values[0]
    elif link.joint_type == "free-base":
        m[:3, :3] = expmap_to_matrix(values[3:6])
        m[:3, 3] = values[0:3]
    return m


def chain_frames(chain: KinematicChain, q: ArrayLike) -> tuple[np.ndarray, np.ndarray]:
    """Return (pre-motion joint frames, link frames) as (L, 4, 4) world matrices."""
    q = as_joint_config(chain, q)
    n = len(chain.links)
    joint_frames = np.empty((n, 4, 4))
    link_frames = np.empty((n, 4, 4))
    base = chain.base.as_matrix()
    for i, link in enumerate(chain.links):
        parent = base if link.parent < 0 else link_frames[link.parent]
        joint_frames[i] = parent @ chain.offset_matrices[i]
        start = chain.dof_offsets[i]
        link_frames[i] = joint_frames[i] @ _joint_motion(link, q[start:start + link.dof])
    return joint_frames, link_frames


def link_matrices(chain: KinematicChain, q: ArrayLike) -> np.ndarray:
    """World 4x4 matrix of every link."""
    return chain_frames(chain, q)[1]


def forward_kinematics(chain: KinematicChain, q: ArrayLike) -> list[RigidTransform]:
    """World pose of every link for joint configuration *q*."""
    return [RigidTransform.from_matrix(m) for m in link_matrices(chain, q)]


def fingertip_positions(chain: KinematicChain, q: ArrayLike) -> np.ndarray:
    """(j, 3) world positions of the fingertip frames."""
    mats = link_matrices(chain, q)
    return mats[list(chain.fingertips), :3, 3].copy()


def link_positions(
    chain: KinematicChain,
    q: ArrayLike,
    links: Sequence[int],
) -> np.ndarray:
    mats = link_matrices(chain, q)
    return mats[list(links), :3, 3].copy()


def link_jacobian(
    chain: KinematicChain,
    q: ArrayLike,
    link: int,
    point: np.ndarray | None = None,
    *,
    frames: tuple[np.ndarray, np.ndarray] | None = None,
) -> np.ndarray:
    """3 x dof Jacobian of a world point rigidly attached to *link*.

    *point* defaults to the link origin. Free-base rotation columns are with
    respect to exponential-map rates, so ``J @ qdot`` is the point velocity
    and ``J.T @ f`` the generalized force of a point force *f*. Pass the
    output of :func:`chain_frames` as *frames* to reuse one FK pass across
    several points.
    """
    q = as_joint_config(chain, q)
    joint_frames, link_frames = frames if frames is not None else chain_frames(chain, q)
    p = link_frames[link, :3, 3] if point is None else np.asarray(point, dtype=float)
    jac = np.zeros((3, chain.dof))
    for a in chain.ancestors[link]:
        joint = chain.links[a]
        start = chain.dof_offsets[a]
        if joint.joint_type == "revolute":
            axis = link_frames[a, :3, :3] @ joint.axis
            jac[:, start] = np.cross(axis, p - link_frames[a, :3, 3])
        elif joint.joint_type == "prismatic":
            jac[:, start] = joint_frames[a, :3, :3] @ joint.axis
        elif joint.joint_type == "free-base":
            frame_rot = joint_frames[a, :3, :3]
            jac[:, start:start + 3] = frame_rot
            lever = p - link_frames[a, :3, 3]
            rates = frame_rot @ left_jacobian(q[start + 3:start + 6])
            for k in range(3):
                jac[:, start + 3 + k] = np.cross(rates[:, k], lever)
    return jac


# ---------------------------------------------------------------------------
# Limits
# ---------------------------------------------------------------------------

def clamp_to_limits(chain: KinematicChain, q: ArrayLike) -> JointConfig:
    return np.clip(as_joint_config(chain, q), chain.lower, chain.upper)


def mean_pose(chain: KinematicChain) -> JointConfig:
    """Midpoint of every DoF's limits; unbounded DoF (free-base rotation) get 0."""
    finite = np.isfinite(chain.lower) & np.isfinite(chain.upper)
    mid = np.zeros(chain.dof)
    mid[finite] = 0.5 * (chain.lower[finite] + chain.upper[finite])
    return mid


# ---------------------------------------------------------------------------
# Description files
# ---------------------------------------------------------------------------

def _parse_transform(raw: dict[str, Any] | None) -> RigidTransform:
    if not raw:
        return RigidTransform()
    return RigidTransform(
        rotation=raw.get("rotation", [1.0, 0.0, 0.0, 0.0]),
        translation=raw.get("translation", [0.0, 0.0, 0.0]),
    )


def _parse_limit(value: float | None, default: float) -> float:
    return default if value is None else float(value)


def chain_from_dict(raw: dict[str, Any]) -> KinematicChain:
    """Build a chain from its JSON description.

    Parents are referenced by name and must appear earlier in the list,
    which rules out cycles and misordering.
    """
    links: list[Link] = []
    lower: list[float] = []
    upper: list[float] = []
    names: dict[str, int] = {}
    for i, entry in enumerate(raw.get("links", [])):
        name = entry["name"]
        if name in names:
            raise InvalidInputError(f"duplicate link name {name!r}")
        parent_name = entry.get("parent")
        if parent_name is None:
            parent = -1
        elif parent_name not in names:
            raise InvalidInputError(
                f"link {name!r}: parent {parent_name!r} must be declared before its children",
            )
        else:
            parent = names[parent_name]
        joint = entry.get("joint", {"type": "fixed"})
        joint_type = joint.get("type", "fixed")
        if joint_type not in JOINT_TYPES:
            raise InvalidInputError(f"link {name!r}: unknown joint type {joint_type!r}")
        axis = np.asarray(joint.get("axis", [0.0, 0.0, 1.0]), dtype=float)
        if joint_type in ("revolute", "prismatic"):
            axis = axis / np.linalg.norm(axis)
        dof = _DOF_PER_TYPE[joint_type]
        limits = joint.get("limits", [[None, None]] * dof)
        if len(limits) != dof:
            raise InvalidInputError(f"link {name!r}: expected {dof} limit pairs")
        for lo, hi in limits:
            lower.append(_parse_limit(lo, -math.inf))
            upper.append(_parse_limit(hi, math.inf))
        links.append(Link(name, parent, _parse_transform(entry.get("offset")), axis, joint_type))
        names[name] = i

    try:
        palm = names[raw["palm"]]
        fingertips = tuple(names[n] for n in raw["fingertips"])
    except KeyError as exc:
        raise InvalidInputError(f"named frame {exc.args[0]!r} is not a link") from exc
    return KinematicChain(
        links=tuple(links),
        lower=np.array(lower),
        upper=np.array(upper),
        palm=palm,
        fingertips=fingertips,
        base=_parse_transform(raw.get("base")),
        name=raw.get("name", "hand"),
    )


def chain_to_dict(chain: KinematicChain) -> dict[str, Any]:
    """Inverse of :func:`chain_from_dict` (collision shapes are not included)."""
    links = []
    for i, link in enumerate(chain.links):
        start = chain.dof_offsets[i]
        limits = [
            [
                None if math.isinf(chain.lower[k]) else float(chain.lower[k]),
                None if math.isinf(chain.upper[k]) else float(chain.upper[k]),
            ]
            for k in range(start, start + link.dof)
        ]
        links.append({
            "name": link.name,
            "parent": None if link.parent < 0 else chain.links[link.parent].name,
            "offset": {
                "translation": link.offset.translation.tolist(),
                "rotation": link.offset.rotation.tolist(),
            },
            "joint": {"type": link.joint_type, "axis": link.axis.tolist(), "limits": limits},
        })
    return {
        "name": chain.name,
        "base": {
            "translation": chain.base.translation.tolist(),
            "rotation": chain.base.rotation.tolist(),
        },
        "links": links,
        "palm": chain.links[chain.palm].name,
        "fingertips": [chain.links[i].name for i in chain.fingertips],
    }


def load_chain(path: Path | str) -> KinematicChain:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"{path}: cannot read chain description ({exc})") from exc
    return chain_from_dict(raw)


# ---------------------------------------------------------------------------
# Default desk hand
# ---------------------------------------------------------------------------

# Finger name -> (base offset in palm frame, z-rotation of the finger base,
# phalanx lengths proximal/middle/distal).
_DESK_FINGERS: dict[str, tuple[tuple[float, float, float], float, tuple[float, float, float]]] = {
    "thumb": ((0.000, 0.000, -0.01), math.pi, (0.035, 0.030, 0.025)),
    "index": ((0.090, 0.030, 0.0), 0.0, (0.045, 0.030, 0.025)),
    "middle": ((0.095, 0.000, 0.0), 0.0, (0.045, 0.030, 0.025)),
    "ring": ((0.090, -0.030, 0.0), 0.0, (0.045, 0.030, 0.025)),
}
_FLEX_LIMITS = ((-0.3, 1.6), (0.0, 1.8), (0.0, 1.5))
PHALANX_RADIUS = 0.009
FINGERTIP_RADIUS = 0.010
PALM_RADIUS = 0.028


def desk_hand_description() -> dict[str, Any]:
    """JSON description of the default hand: free base + 4 fingers x 3 flexion joints.

    The palm faces -z in its own frame with fingers along +x, so positive
    flexion curls the fingers downward. The thumb sits at the back of the
    palm pointing -x and curls down against the other three.
    """
    links: list[dict[str, Any]] = [{
        "name": "palm",
        "parent": None,
        "joint": {
            "type": "free-base",
            "limits": [
                [-0.6, 0.6], [-0.6, 0.6], [0.0, 0.6],
                [None, None], [None, None], [None, None],
            ],
        },
    }]
    shapes: list[dict[str, Any]] = [{
        "kind": "capsule",
        "dims": [PALM_RADIUS, 0.07],
        "attachment": "palm",
        "offset": {"translation": [0.05, 0.0, 0.0]},
    }]
    for finger, (origin, yaw, lengths) in _DESK_FINGERS.items():
        segments = ("proximal", "middle", "distal")
        parent = "palm"
        offset: dict[str, Any] = {
            "translation": list(origin),
            "rotation": quat_from_axis_angle([0.0, 0.0, 1.0], yaw).tolist(),
        }
        for segment, length, limits in zip(segments, lengths, _FLEX_LIMITS):
            name = f"{finger}_{segment}"
            links.append({
                "name": name,
                "parent": parent,
                "offset": offset,
                "joint": {"type": "revolute", "axis": [0.0, 1.0, 0.0], "limits": [list(limits)]},
            })
            shapes.append({
                "kind": "capsule",
                "dims": [PHALANX_RADIUS, length],
                "attachment": name,
                "offset": {"translation": [0.5 * length, 0.0, 0.0]},
            })
            parent = name
            offset = {"translation": [length, 0.0, 0.0]}
        tip = f"{finger}_tip"
        links.append({"name": tip, "parent": parent, "offset": offset})
        shapes.append({"kind": "sphere", "dims": [FINGERTIP_RADIUS], "attachment": tip})
    return {
        "name": "desk_hand",
        "links": links,
        "palm": "palm",
        "fingertips": [f"{finger}_tip" for finger in _DESK_FINGERS],
        "shapes": shapes,
    }


def default_desk_hand() -> KinematicChain:
    return chain_from_dict(desk_hand_description())
