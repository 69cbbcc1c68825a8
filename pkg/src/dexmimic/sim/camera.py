"""Virtual depth camera: ray-cast the hand and object into a world point cloud."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
import structlog

from dexmimic.errors import DegenerateCameraError, InvalidInputError
from dexmimic.kinematics.transforms import RigidTransform, look_at
from dexmimic.sim.shapes import ray_cast
from dexmimic.sim.world import World, WorldState

logger = structlog.get_logger(__name__)


@dataclass(frozen=True, eq=False)
class CameraSpec:
    """Pinhole ray grid. The camera looks along its local +z (x right, y down)."""

    pose: RigidTransform
    fov_horizontal: float = math.radians(60.0)
    fov_vertical: float = math.radians(60.0)
    resolution: int = 64
    max_range: float = 2.0

    def __post_init__(self) -> None:
        for fov in (self.fov_horizontal, self.fov_vertical):
            if not 0.0 < fov < math.pi:
                raise InvalidInputError(f"field of view must lie in (0, pi), got {fov}")
        if self.resolution < 16:
            raise InvalidInputError(f"camera resolution must be >= 16, got {self.resolution}")
        if self.max_range <= 0.0:
            raise InvalidInputError("camera max range must be positive")

    def ray_directions(self) -> np.ndarray:
        """(resolution**2, 3) unit ray directions in world coordinates."""
        u = np.linspace(-1.0, 1.0, self.resolution) * math.tan(0.5 * self.fov_horizontal)
        v = np.linspace(-1.0, 1.0, self.resolution) * math.tan(0.5 * self.fov_vertical)
        uu, vv = np.meshgrid(u, v)
        local = np.stack([uu.ravel(), vv.ravel(), np.ones(uu.size)], axis=1)
        local /= np.linalg.norm(local, axis=1, keepdims=True)
        return local @ self.pose.as_matrix()[:3, :3].T


def overhead_camera(
    target: Sequence[float] = (0.0, 0.0, 0.0),
    distance: float = 0.8,
    elevation: float = math.radians(45.0),
    azimuth: float = math.pi,
    **kwargs: Any,
) -> CameraSpec:
    """Camera on a sphere around *target*, looking at it.

    The default places it 0.8 m away, 45 degrees above the table, behind the
    hand (on the -x side).
    """
    target = np.asarray(target, dtype=float)
    offset = distance * np.array([
        math.cos(elevation) * math.cos(azimuth),
        math.cos(elevation) * math.sin(azimuth),
        math.sin(elevation),
    ])
    return CameraSpec(pose=look_at(target + offset, target), **kwargs)


def cast_rays(world: World, state: WorldState, camera: CameraSpec) -> np.ndarray:
    """World-frame hit points of every ray that strikes the hand or the object.

    The table is not part of the rendered scene.
    """
    dirs = camera.ray_directions()
    origins = np.broadcast_to(camera.pose.translation, dirs.shape)
    posed = world.posed_hand_shapes(state.q) + world.posed_object_shapes(state.object_pose)
    depth = np.full(dirs.shape[0], np.inf)
    for shape in posed:
        depth = np.minimum(depth, ray_cast(shape, origins, dirs))
    hit = depth <= camera.max_range
    return origins[hit] + depth[hit, None] * dirs[hit]


def render_point_cloud(
    world: World,
    state: WorldState,
    camera: CameraSpec,
    n_points: int = 512,
    seed: int = 0,
) -> np.ndarray:
    """Exactly *n_points* world points, subsampled or padded by resampling.

    Raises :class:`DegenerateCameraError` when no ray hits anything.
    """
    if n_points < 1:
        raise InvalidInputError("n_points must be positive")
    hits = cast_rays(world, state, camera)
    if hits.shape[0] == 0:
        raise DegenerateCameraError("camera sees neither the hand nor the object")
    rng = np.random.default_rng(seed)
    if hits.shape[0] >= n_points:
        idx = rng.choice(hits.shape[0], size=n_points, replace=False)
    else:
        extra = rng.choice(hits.shape[0], size=n_points - hits.shape[0], replace=True)
        idx = np.concatenate([np.arange(hits.shape[0]), extra])
    logger.debug("point_cloud_rendered", hits=int(hits.shape[0]), n_points=n_points)
    return hits[idx]
