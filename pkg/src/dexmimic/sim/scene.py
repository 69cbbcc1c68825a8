"""Object presets and scene files.

The presets are primitive stand-ins for small household items. A scene
file names the hand (chain file or the default desk hand), the object
(preset name or explicit shapes) and an optional container region used by
the place-inside task.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from dexmimic.errors import InvalidInputError
from dexmimic.kinematics.chain import (
    KinematicChain,
    chain_from_dict,
    default_desk_hand,
    desk_hand_description,
)
from dexmimic.kinematics.transforms import RigidTransform, quat_from_axis_angle
from dexmimic.sim.shapes import BodyShape, PosedShape, shape_from_dict, shape_to_dict
from dexmimic.sim.world import SimConfig, World

_STANDING = RigidTransform(rotation=quat_from_axis_angle([0.0, 1.0, 0.0], -math.pi / 2))


@dataclass(frozen=True)
class ObjectPreset:
    shapes: tuple[BodyShape, ...]
    mass: float


OBJECT_PRESETS: dict[str, ObjectPreset] = {
    "box": ObjectPreset((BodyShape("box", (0.03, 0.03, 0.03)),), 0.2),
    "can": ObjectPreset((BodyShape("capsule", (0.03, 0.06), offset=_STANDING),), 0.15),
    "ball": ObjectPreset((BodyShape("sphere", (0.035,)),), 0.1),
    "banana": ObjectPreset((BodyShape("capsule", (0.018, 0.12)),), 0.12),
    "mug": ObjectPreset((BodyShape("capsule", (0.04, 0.04), offset=_STANDING),), 0.2),
}

DEFAULT_CONTAINER = BodyShape("box", (0.08, 0.08, 0.06), attachment="container")


def object_preset(name: str) -> ObjectPreset:
    try:
        return OBJECT_PRESETS[name]
    except KeyError as exc:
        known = ", ".join(sorted(OBJECT_PRESETS))
        raise InvalidInputError(f"unknown object {name!r} (known: {known})") from exc


def rest_height(shapes: tuple[BodyShape, ...], table_height: float = 0.0) -> float:
    """Object-frame height at which the upright object just touches the table."""
    lowest = min(PosedShape.place(s, np.eye(4)).lowest_z() for s in shapes)
    return table_height - lowest


@dataclass(frozen=True, eq=False)
class Scene:
    chain: KinematicChain
    hand_shapes: tuple[BodyShape, ...]
    object_name: str
    object_shapes: tuple[BodyShape, ...]
    object_mass: float
    container: BodyShape | None = None
    container_pose: RigidTransform | None = None

    def build_world(self, config: SimConfig | None = None) -> World:
        return World(
            self.chain,
            self.hand_shapes,
            self.object_shapes,
            config,
            object_mass=self.object_mass,
        )

    def resting_pose(
        self, xy: tuple[float, float] = (0.0, 0.0), table_height: float = 0.0,
    ) -> RigidTransform:
        z = rest_height(self.object_shapes, table_height)
        return RigidTransform.from_translation([xy[0], xy[1], z])


def _hand_from_raw(raw: Any) -> tuple[KinematicChain, tuple[BodyShape, ...]]:
    if raw is None:
        description = desk_hand_description()
        return default_desk_hand(), tuple(shape_from_dict(s) for s in description["shapes"])
    if isinstance(raw, str | Path):
        try:
            raw = json.loads(Path(raw).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidInputError(f"cannot read hand description {raw}: {exc}") from exc
    shapes = tuple(shape_from_dict(s) for s in raw.get("shapes", []))
    return chain_from_dict(raw), shapes


def scene_from_dict(raw: dict[str, Any]) -> Scene:
    chain, hand_shapes = _hand_from_raw(raw.get("hand"))
    obj = raw.get("object", "box")
    if isinstance(obj, str):
        preset = object_preset(obj)
        name, shapes, mass = obj, preset.shapes, preset.mass
    else:
        name = obj.get("name", "custom")
        shapes = tuple(shape_from_dict(s) for s in obj["shapes"])
        mass = float(obj.get("mass", 0.2))
    container = None
    container_pose = None
    if raw.get("container") is not None:
        c = raw["container"]
        container = shape_from_dict({**c, "attachment": "container"})
        container_pose = RigidTransform.from_translation(c.get("position", [0.0, 0.0, 0.0]))
    return Scene(
        chain=chain,
        hand_shapes=hand_shapes,
        object_name=name,
        object_shapes=shapes,
        object_mass=mass,
        container=container,
        container_pose=container_pose,
    )


def scene_to_dict(scene: Scene) -> dict[str, Any]:
    out: dict[str, Any] = {
        "object": {
            "name": scene.object_name,
            "shapes": [shape_to_dict(s) for s in scene.object_shapes],
            "mass": scene.object_mass,
        },
    }
    if scene.container is not None and scene.container_pose is not None:
        out["container"] = {
            **shape_to_dict(scene.container),
            "position": scene.container_pose.translation.tolist(),
        }
    return out


def load_scene(path: Path | str) -> Scene:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"{path}: cannot read scene ({exc})") from exc
    return scene_from_dict(raw)
