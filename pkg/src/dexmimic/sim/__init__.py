"""Rigid-body desk world: shapes, penalty-contact stepping, scenes and the depth camera."""

from dexmimic.sim.camera import CameraSpec, overhead_camera, render_point_cloud
from dexmimic.sim.scene import OBJECT_PRESETS, Scene, load_scene, object_preset, scene_from_dict
from dexmimic.sim.shapes import BodyShape, PosedShape, desk_hand_shapes
from dexmimic.sim.world import ContactPoint, SimConfig, World, WorldState, dump_states

__all__ = [
    # shapes
    "BodyShape",
    "PosedShape",
    "desk_hand_shapes",
    # world
    "SimConfig",
    "World",
    "WorldState",
    "ContactPoint",
    "dump_states",
    # scene
    "OBJECT_PRESETS",
    "Scene",
    "object_preset",
    "scene_from_dict",
    "load_scene",
    # camera
    "CameraSpec",
    "overhead_camera",
    "render_point_cloud",
]
