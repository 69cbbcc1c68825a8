"""Collision primitives: signed distances, ray casts and volume sampling.

Capsules are swept spheres along their local x axis, centred on the shape
frame. Boxes store half extents. Every function works on batches of points
or rays so the simulator and the camera stay vectorized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from dexmimic.errors import InvalidInputError
from dexmimic.kinematics.transforms import RigidTransform, quat_to_matrix

SHAPE_KINDS = {"sphere": 1, "capsule": 2, "box": 3}
OBJECT = "object"


@dataclass(frozen=True, eq=False)
class BodyShape:
    """A primitive attached to a hand link, to the free object, or to the scene.

    ``dims`` is ``(radius,)`` for spheres, ``(radius, length)`` for capsules
    and ``(hx, hy, hz)`` half extents for boxes.
    """

    kind: str
    dims: tuple[float, ...]
    attachment: str = OBJECT
    offset: RigidTransform = field(default_factory=RigidTransform)

    def __post_init__(self) -> None:
        if self.kind not in SHAPE_KINDS:
            raise InvalidInputError(f"unknown shape kind {self.kind!r}")
        dims = tuple(float(d) for d in self.dims)
        if len(dims) != SHAPE_KINDS[self.kind]:
            raise InvalidInputError(
                f"{self.kind} needs {SHAPE_KINDS[self.kind]} dimensions, got {len(dims)}",
            )
        if any(not math.isfinite(d) or d <= 0.0 for d in dims):
            raise InvalidInputError(f"shape dimensions must be positive, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def radius(self) -> float:
        """Sweep radius (0 for boxes)."""
        return 0.0 if self.kind == "box" else self.dims[0]

    @property
    def half_length(self) -> float:
        return 0.5 * self.dims[1] if self.kind == "capsule" else 0.0

    @property
    def bounding_radius(self) -> float:
        if self.kind == "box":
            return float(np.linalg.norm(self.dims))
        return self.radius + self.half_length

    def volume(self) -> float:
        if self.kind == "sphere":
            return 4.0 / 3.0 * math.pi * self.dims[0] ** 3
        if self.kind == "capsule":
            r, length = self.dims
            return math.pi * r * r * length + 4.0 / 3.0 * math.pi * r**3
        hx, hy, hz = self.dims
        return 8.0 * hx * hy * hz

    def inertia_diagonal(self, mass: float) -> np.ndarray:
        """Principal moments about the shape frame (capsule treated as a cylinder)."""
        if self.kind == "sphere":
            return np.full(3, 0.4 * mass * self.dims[0] ** 2)
        if self.kind == "capsule":
            r, length = self.dims
            full = length + 2.0 * r
            axial = 0.5 * mass * r * r
            transverse = mass * (3.0 * r * r + full * full) / 12.0
            return np.array([axial, transverse, transverse])
        hx, hy, hz = self.dims
        return mass / 3.0 * np.array([hy * hy + hz * hz, hx * hx + hz * hz, hx * hx + hy * hy])


def shape_from_dict(raw: dict[str, Any]) -> BodyShape:
    offset = raw.get("offset") or {}
    return BodyShape(
        kind=raw["kind"],
        dims=tuple(raw["dims"]),
        attachment=raw.get("attachment", OBJECT),
        offset=RigidTransform(
            rotation=offset.get("rotation", [1.0, 0.0, 0.0, 0.0]),
            translation=offset.get("translation", [0.0, 0.0, 0.0]),
        ),
    )


def shape_to_dict(shape: BodyShape) -> dict[str, Any]:
    return {
        "kind": shape.kind,
        "dims": list(shape.dims),
        "attachment": shape.attachment,
        "offset": {
            "translation": shape.offset.translation.tolist(),
            "rotation": shape.offset.rotation.tolist(),
        },
    }


def desk_hand_shapes() -> list[BodyShape]:
    """Capsule phalanges, a palm capsule and fingertip spheres for the default hand."""
    from dexmimic.kinematics.chain import desk_hand_description

    return [shape_from_dict(raw) for raw in desk_hand_description()["shapes"]]


# ---------------------------------------------------------------------------
# Posed shapes
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PosedShape:
    """A shape placed in the world: rotation matrix plus centre."""

    shape: BodyShape
    rotation: np.ndarray
    center: np.ndarray

    @classmethod
    def place(cls, shape: BodyShape, body_pose: np.ndarray | RigidTransform) -> PosedShape:
        """Pose *shape* on a body whose world pose is a 4x4 matrix or transform."""
        m = body_pose.as_matrix() if isinstance(body_pose, RigidTransform) else body_pose
        world = m @ shape.offset.as_matrix()
        return cls(shape=shape, rotation=world[:3, :3], center=world[:3, 3])

    def to_local(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.center) @ self.rotation

    def to_world(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.center

    def segment(self) -> tuple[np.ndarray, np.ndarray]:
        """World endpoints of the core segment (equal for spheres)."""
        axis = self.rotation[:, 0] * self.shape.half_length
        return self.center - axis, self.center + axis

    def lowest_z(self) -> float:
        if self.shape.kind == "box":
            return float(self.center[2] - np.abs(self.rotation[2]) @ np.asarray(self.shape.dims))
        a, b = self.segment()
        return float(min(a[2], b[2]) - self.shape.radius)


def pose_matrix(rotation: np.ndarray, translation: np.ndarray) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = quat_to_matrix(rotation) if rotation.shape == (4,) else rotation
    m[:3, 3] = translation
    return m


# ---------------------------------------------------------------------------
# Signed distance
# ---------------------------------------------------------------------------

def _box_sdf_local(points: np.ndarray, half: np.ndarray) -> np.ndarray:
    d = np.abs(points) - half
    outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
    inside = np.minimum(np.max(d, axis=-1), 0.0)
    return outside + inside


def box_sdf_gradient(points: np.ndarray, half: np.ndarray) -> np.ndarray:
    """Outward unit gradient of the box distance field, in the box frame."""
    points = np.atleast_2d(points)
    d = np.abs(points) - half
    sign = np.where(points < 0.0, -1.0, 1.0)
    grad = np.zeros_like(points)
    outside = np.any(d > 0.0, axis=-1)
    if np.any(outside):
        g = np.maximum(d[outside], 0.0) * sign[outside]
        grad[outside] = g / np.linalg.norm(g, axis=-1, keepdims=True)
    inside = ~outside
    if np.any(inside):
        axis = np.argmax(d[inside], axis=-1)
        rows = np.nonzero(inside)[0]
        grad[rows, axis] = sign[rows, axis]
    return grad


def local_sdf(shape: BodyShape, points: np.ndarray) -> np.ndarray:
    """Signed distance of local-frame *points*; negative inside."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if shape.kind == "sphere":
        return np.linalg.norm(points, axis=-1) - shape.dims[0]
    if shape.kind == "capsule":
        h = shape.half_length
        core = points.copy()
        core[:, 0] -= np.clip(points[:, 0], -h, h)
        return np.linalg.norm(core, axis=-1) - shape.dims[0]
    return _box_sdf_local(points, np.asarray(shape.dims))


def signed_distance(posed: PosedShape, points: np.ndarray) -> np.ndarray:
    return local_sdf(posed.shape, posed.to_local(points))


def contains(posed: PosedShape, points: np.ndarray) -> np.ndarray:
    return signed_distance(posed, points) <= 0.0


def sample_volume(shape: BodyShape, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples inside the shape, local frame, by rejection from its bounds."""
    if shape.kind == "box":
        return rng.uniform(-1.0, 1.0, size=(n, 3)) * np.asarray(shape.dims)
    r, h = shape.radius, shape.half_length
    bounds = np.array([h + r, r, r])
    out = np.empty((0, 3))
    while out.shape[0] < n:
        batch = rng.uniform(-1.0, 1.0, size=(2 * n, 3)) * bounds
        out = np.vstack([out, batch[local_sdf(shape, batch) <= 0.0]])
    return out[:n]


# ---------------------------------------------------------------------------
# Closest points
# ---------------------------------------------------------------------------

def closest_segment_points(
    p0: np.ndarray, p1: np.ndarray, q0: np.ndarray, q1: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Closest points between segments [p0, p1] and [q0, q1] (degenerate allowed)."""
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = float(d1 @ d1)
    e = float(d2 @ d2)
    f = float(d2 @ r)
    eps = 1e-15
    if a <= eps and e <= eps:
        return p0.copy(), q0.copy()
    if a <= eps:
        s = 0.0
        t = min(max(f / e, 0.0), 1.0)
    else:
        c = float(d1 @ r)
        if e <= eps:
            t = 0.0
            s = min(max(-c / a, 0.0), 1.0)
        else:
            b = float(d1 @ d2)
            denom = a * e - b * b
            s = min(max((b * f - c * e) / denom, 0.0), 1.0) if denom > eps else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = min(max(-c / a, 0.0), 1.0)
            elif t > 1.0:
                t = 1.0
                s = min(max((b - c) / a, 0.0), 1.0)
    return p0 + d1 * s, q0 + d2 * t


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def deepest_segment_point_in_box(
    a: np.ndarray, b: np.ndarray, half: np.ndarray, iterations: int = 48,
) -> tuple[np.ndarray, float]:
    """Point on local segment [a, b] with the smallest box distance.

    The box distance field is convex, so golden-section search on the
    segment parameter converges to the global minimum.
    """
    if float(np.dot(b - a, b - a)) < 1e-18:
        return a.copy(), float(_box_sdf_local(a[None], half)[0])
    lo, hi = 0.0, 1.0

    def value(t: float) -> float:
        return float(_box_sdf_local((a + t * (b - a))[None], half)[0])

    x1 = hi - _GOLDEN * (hi - lo)
    x2 = lo + _GOLDEN * (hi - lo)
    f1, f2 = value(x1), value(x2)
    for _ in range(iterations):
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - _GOLDEN * (hi - lo)
            f1 = value(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + _GOLDEN * (hi - lo)
            f2 = value(x2)
    candidates = [(0.0, value(0.0)), (1.0, value(1.0)), (0.5 * (lo + hi), value(0.5 * (lo + hi)))]
    t, best = min(candidates, key=lambda c: c[1])
    return a + t * (b - a), best


@dataclass(frozen=True)
class Penetration:
    """Deepest interpenetration between two posed shapes.

    ``normal`` points from the second shape toward the first; ``point`` is
    the midpoint between the two surfaces along the normal.
    """

    depth: float
    normal: np.ndarray
    point: np.ndarray


def penetration(swept: PosedShape, other: PosedShape) -> Penetration | None:
    """Deepest penetration of a sphere/capsule *swept* into *other*, or None."""
    if swept.shape.kind == "box":
        raise InvalidInputError("the first shape of a pair must be a sphere or capsule")
    gap = float(np.linalg.norm(swept.center - other.center))
    if gap > swept.shape.bounding_radius + other.shape.bounding_radius:
        return None
    a, b = swept.segment()
    r = swept.shape.radius
    if other.shape.kind == "box":
        half = np.asarray(other.shape.dims)
        la, lb = other.to_local(a), other.to_local(b)
        core, dist = deepest_segment_point_in_box(la, lb, half)
        depth = r - dist
        if depth <= 0.0:
            return None
        normal = other.rotation @ box_sdf_gradient(core, half)[0]
        surface = other.to_world(core) - normal * dist
        point = surface - 0.5 * depth * normal
        return Penetration(depth=depth, normal=normal, point=point)
    c, d = other.segment()
    p, q = closest_segment_points(a, b, c, d)
    delta = p - q
    dist = float(np.linalg.norm(delta))
    depth = r + other.shape.radius - dist
    if depth <= 0.0:
        return None
    normal = delta / dist if dist > 1e-12 else np.array([0.0, 0.0, 1.0])
    point = q + normal * (other.shape.radius - 0.5 * depth)
    return Penetration(depth=depth, normal=normal, point=point)


def plane_contacts(posed: PosedShape, height: float) -> list[tuple[np.ndarray, float]]:
    """(world point, depth) pairs for every feature of *posed* below ``z = height``.

    Boxes report penetrating corners; spheres and capsules report the lowest
    point of each end sphere.
    """
    if posed.shape.kind == "box":
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
        corners = posed.to_world(signs * np.asarray(posed.shape.dims))
        return [(c, height - c[2]) for c in corners if c[2] < height]
    a, b = posed.segment()
    ends = [a] if posed.shape.kind == "sphere" else [a, b]
    r = posed.shape.radius
    out = []
    for e in ends:
        depth = height - (e[2] - r)
        if depth > 0.0:
            out.append((e - np.array([0.0, 0.0, r]), depth))
    return out


# ---------------------------------------------------------------------------
# Ray casting
# ---------------------------------------------------------------------------

def _ray_sphere(origins: np.ndarray, dirs: np.ndarray, center: np.ndarray, r: float) -> np.ndarray:
    oc = origins - center
    b = np.einsum("ij,ij->i", oc, dirs)
    c = np.einsum("ij,ij->i", oc, oc) - r * r
    disc = b * b - c
    t = np.full(origins.shape[0], np.inf)
    hit = disc >= 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    near = -b - sq
    far = -b + sq
    t_hit = np.where(near > 0.0, near, far)
    ok = hit & (t_hit > 0.0)
    t[ok] = t_hit[ok]
    return t


def _ray_box_local(origins: np.ndarray, dirs: np.ndarray, half: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (-half - origins) * inv
        t2 = (half - origins) * inv
    t1 = np.where(np.isnan(t1), -np.inf, t1)
    t2 = np.where(np.isnan(t2), np.inf, t2)
    t_near = np.max(np.minimum(t1, t2), axis=1)
    t_far = np.min(np.maximum(t1, t2), axis=1)
    t = np.full(origins.shape[0], np.inf)
    ok = (t_far >= t_near) & (t_far > 0.0)
    t[ok] = np.where(t_near[ok] > 0.0, t_near[ok], t_far[ok])
    return t


def _ray_capsule_local(origins: np.ndarray, dirs: np.ndarray, r: float, h: float) -> np.ndarray:
    # Infinite cylinder about x, restricted to |x| <= h, plus the two end spheres.
    oy, oz = origins[:, 1], origins[:, 2]
    dy, dz = dirs[:, 1], dirs[:, 2]
    a = dy * dy + dz * dz
    b = oy * dy + oz * dz
    c = oy * oy + oz * oz - r * r
    t = np.full(origins.shape[0], np.inf)
    disc = b * b - a * c
    valid = (a > 1e-15) & (disc >= 0.0)
    sq = np.sqrt(np.where(valid, disc, 0.0))
    safe_a = np.where(valid, a, 1.0)
    for root in ((-b - sq) / safe_a, (-b + sq) / safe_a):
        x = origins[:, 0] + root * dirs[:, 0]
        ok = valid & (root > 0.0) & (np.abs(x) <= h) & (root < t)
        t[ok] = root[ok]
    for end in (-h, h):
        t = np.minimum(t, _ray_sphere(origins, dirs, np.array([end, 0.0, 0.0]), r))
    return t


def ray_cast(posed: PosedShape, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Distance along each unit ray to the first hit, ``inf`` on a miss."""
    lo = posed.to_local(origins)
    ld = np.asarray(dirs, dtype=float) @ posed.rotation
    shape = posed.shape
    if shape.kind == "sphere":
        return _ray_sphere(lo, ld, np.zeros(3), shape.dims[0])
    if shape.kind == "capsule":
        return _ray_capsule_local(lo, ld, shape.dims[0], shape.half_length)
    return _ray_box_local(lo, ld, np.asarray(shape.dims))
