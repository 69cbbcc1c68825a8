"""Deterministic desk-scale rigid-body world.

One joint-position-controlled hand, one free rigid object and a static
table plane at ``z = table_height``. Each policy step runs ``decimation``
sub-steps of semi-implicit Euler:

* hand: diagonal joint-space inertia, PD torques toward the action plus
  ``J^T f`` from every contact on a hand link; no gravity (the hand stands
  in for an arm);
* object: Newton-Euler with gravity and contact forces;
* contacts: spring-damper along the normal on the deepest point of each
  shape pair, viscous tangential friction capped by the Coulomb cone.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field

from dexmimic.errors import InvalidInputError
from dexmimic.kinematics.chain import (
    KinematicChain,
    as_joint_config,
    chain_frames,
    link_jacobian,
)
from dexmimic.kinematics.transforms import (
    RigidTransform,
    expmap_to_quat,
    quat_multiply,
    quat_normalize,
    quat_to_matrix,
    require_unit_quaternion,
)
from dexmimic.sim.shapes import OBJECT, BodyShape, PosedShape, penetration, plane_contacts

logger = structlog.get_logger(__name__)

TABLE = "table"


class JointGains(BaseModel):
    """PD gains and joint-space inertia per joint family."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    translation_kp: float = Field(400.0, ge=0.0)
    translation_kd: float = Field(40.0, ge=0.0)
    translation_inertia: float = Field(1.0, gt=0.0)
    rotation_kp: float = Field(10.0, ge=0.0)
    rotation_kd: float = Field(0.6, ge=0.0)
    rotation_inertia: float = Field(0.01, gt=0.0)
    finger_kp: float = Field(20.0, ge=0.0)
    finger_kd: float = Field(0.2, ge=0.0)
    finger_inertia: float = Field(1e-3, gt=0.0)


class SimConfig(BaseModel):
    """Physics parameters. Object mass ``None`` takes the object preset's mass."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    timestep: float = Field(0.002, gt=0.0)
    decimation: int = Field(10, ge=1)
    gravity: tuple[float, float, float] = (0.0, 0.0, -9.81)
    table_height: float = 0.0
    contact_stiffness: float = Field(1e4, gt=0.0)
    contact_damping: float = Field(5.0, gt=0.0)
    friction: float = Field(0.8, ge=0.0)
    friction_viscosity: float = Field(10.0, ge=0.0)
    contact_tolerance: float = Field(1e-3, gt=0.0)
    object_mass: float | None = Field(None, gt=0.0)
    object_inertia: tuple[float, float, float] | None = None
    gains: JointGains = Field(default_factory=JointGains)
    kp: list[float] | None = None
    kd: list[float] | None = None


@dataclass(frozen=True, eq=False)
class ContactPoint:
    """One penalty contact. ``force`` acts on ``link``; ``other`` receives its negation."""

    link: str
    other: str
    position: np.ndarray
    depth: float
    normal: np.ndarray
    force: np.ndarray


@dataclass(frozen=True, eq=False)
class WorldState:
    q: np.ndarray
    qd: np.ndarray
    object_pose: RigidTransform
    object_twist: np.ndarray
    contacts: tuple[ContactPoint, ...] = ()
    time: int = 0

    def is_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.q))
            and np.all(np.isfinite(self.qd))
            and np.all(np.isfinite(self.object_twist))
            and self.object_pose.is_valid()
        )


@dataclass(frozen=True)
class _SubStep:
    q: np.ndarray
    qd: np.ndarray
    pos: np.ndarray
    quat: np.ndarray
    vel: np.ndarray
    omega: np.ndarray


def joint_parameters(chain: KinematicChain, config: SimConfig) -> tuple[np.ndarray, ...]:
    """Per-DoF (kp, kd, inertia) vectors for *chain* under *config*."""
    g = config.gains
    kp = np.empty(chain.dof)
    kd = np.empty(chain.dof)
    inertia = np.empty(chain.dof)
    for i, link in enumerate(chain.links):
        start = chain.dof_offsets[i]
        if link.joint_type == "free-base":
            kp[start:start + 3], kd[start:start + 3] = g.translation_kp, g.translation_kd
            inertia[start:start + 3] = g.translation_inertia
            kp[start + 3:start + 6], kd[start + 3:start + 6] = g.rotation_kp, g.rotation_kd
            inertia[start + 3:start + 6] = g.rotation_inertia
        elif link.joint_type == "prismatic":
            kp[start], kd[start] = g.translation_kp, g.translation_kd
            inertia[start] = g.translation_inertia
        elif link.joint_type == "revolute":
            kp[start], kd[start], inertia[start] = g.finger_kp, g.finger_kd, g.finger_inertia
    if config.kp is not None:
        kp = np.asarray(config.kp, dtype=float)
    if config.kd is not None:
        kd = np.asarray(config.kd, dtype=float)
    if kp.shape != (chain.dof,) or kd.shape != (chain.dof,):
        raise InvalidInputError(f"PD gain overrides must have {chain.dof} entries")
    return kp, kd, inertia


def _object_mass_properties(
    shapes: Sequence[BodyShape], mass: float,
) -> np.ndarray:
    """Body-frame inertia tensor of a compound object, mass split by volume."""
    volumes = np.array([s.volume() for s in shapes])
    inertia = np.zeros((3, 3))
    for shape, vol in zip(shapes, volumes):
        m = mass * vol / volumes.sum()
        rot = quat_to_matrix(shape.offset.rotation)
        local = rot @ np.diag(shape.inertia_diagonal(m)) @ rot.T
        r = shape.offset.translation
        inertia += local + m * (float(r @ r) * np.eye(3) - np.outer(r, r))
    return inertia


class World:
    """Static scene description plus the step function over :class:`WorldState`."""

    def __init__(
        self,
        chain: KinematicChain,
        hand_shapes: Iterable[BodyShape],
        object_shapes: Iterable[BodyShape],
        config: SimConfig | None = None,
        *,
        object_mass: float = 0.2,
    ) -> None:
        self.chain = chain
        self.config = config or SimConfig()
        self.hand_shapes = tuple(hand_shapes)
        self.object_shapes = tuple(object_shapes)
        if not self.object_shapes:
            raise InvalidInputError("the world needs at least one object shape")
        for shape in self.hand_shapes:
            if shape.kind == "box":
                raise InvalidInputError("hand shapes must be spheres or capsules")
            chain.index_of(shape.attachment)
        self._hand_links = tuple(chain.index_of(s.attachment) for s in self.hand_shapes)
        self.mass = self.config.object_mass or object_mass
        if self.config.object_inertia is not None:
            self.inertia_body = np.diag(np.asarray(self.config.object_inertia, dtype=float))
        else:
            self.inertia_body = _object_mass_properties(self.object_shapes, self.mass)
        self.inertia_body_inv = np.linalg.inv(self.inertia_body)
        self.kp, self.kd, self.joint_inertia = joint_parameters(chain, self.config)
        self.gravity = np.asarray(self.config.gravity, dtype=float)
        self._fingertip_names = frozenset(chain.links[i].name for i in chain.fingertips)

    # -- geometry ------------------------------------------------------------

    def posed_object_shapes(self, pose: RigidTransform) -> list[PosedShape]:
        m = pose.as_matrix()
        return [PosedShape.place(s, m) for s in self.object_shapes]

    def posed_hand_shapes(
        self, q: np.ndarray, link_frames: np.ndarray | None = None,
    ) -> list[PosedShape]:
        if link_frames is None:
            link_frames = chain_frames(self.chain, q)[1]
        return [
            PosedShape.place(shape, link_frames[link])
            for shape, link in zip(self.hand_shapes, self._hand_links)
        ]

    def object_lowest_z(self, pose: RigidTransform) -> float:
        return min(p.lowest_z() for p in self.posed_object_shapes(pose))

    # -- episode -------------------------------------------------------------

    def reset(self, object_pose: RigidTransform, q: Sequence[float] | np.ndarray) -> WorldState:
        """Place the object and the hand at rest.

        Raises :class:`InvalidInputError` if the object starts more than 1 mm
        inside the table.
        """
        q = as_joint_config(self.chain, q)
        require_unit_quaternion(object_pose.rotation, "object orientation")
        if not np.all(np.isfinite(q)) or not object_pose.is_valid():
            raise InvalidInputError("reset requires finite joint values and object pose")
        lowest = self.object_lowest_z(object_pose)
        if lowest < self.config.table_height - 1e-3:
            raise InvalidInputError(
                f"object starts {self.config.table_height - lowest:.4f} m inside the table",
            )
        logger.debug(
            "world_reset",
            object_pos=object_pose.translation.tolist(),
            object_lowest_z=round(lowest, 6),
        )
        return WorldState(
            q=np.clip(q, self.chain.lower, self.chain.upper),
            qd=np.zeros(self.chain.dof),
            object_pose=RigidTransform(
                rotation=object_pose.rotation.copy(), translation=object_pose.translation.copy(),
            ),
            object_twist=np.zeros(6),
        )

    def step(self, state: WorldState, action: Sequence[float] | np.ndarray) -> WorldState:
        """Advance one policy step toward absolute joint targets *action*."""
        target = np.asarray(action, dtype=float)
        if target.shape != (self.chain.dof,):
            raise InvalidInputError(
                f"action must have {self.chain.dof} entries, got {target.shape}",
            )
        if not np.all(np.isfinite(target)):
            raise InvalidInputError("action contains non-finite values")
        target = np.clip(target, self.chain.lower, self.chain.upper)
        sub = _SubStep(
            q=state.q.copy(),
            qd=state.qd.copy(),
            pos=state.object_pose.translation.copy(),
            quat=state.object_pose.rotation.copy(),
            vel=state.object_twist[:3].copy(),
            omega=state.object_twist[3:].copy(),
        )
        contacts: tuple[ContactPoint, ...] = ()
        for _ in range(self.config.decimation):
            sub, contacts = self._substep(sub, target)
        return WorldState(
            q=sub.q,
            qd=sub.qd,
            object_pose=RigidTransform(rotation=sub.quat, translation=sub.pos),
            object_twist=np.concatenate([sub.vel, sub.omega]),
            contacts=contacts,
            time=state.time + 1,
        )

    # -- physics -------------------------------------------------------------

    def _contact_force(
        self, depth: float, normal: np.ndarray, v_rel: np.ndarray,
    ) -> np.ndarray:
        cfg = self.config
        vn = float(v_rel @ normal)
        fn = max(cfg.contact_stiffness * depth - cfg.contact_damping * vn, 0.0)
        vt = v_rel - vn * normal
        speed = float(np.linalg.norm(vt))
        force = fn * normal
        if speed > 1e-12 and fn > 0.0:
            ft = min(cfg.friction_viscosity * speed, cfg.friction * fn)
            force = force - ft * vt / speed
        return force

    def find_contacts(
        self,
        q: np.ndarray,
        qd: np.ndarray,
        object_pose: RigidTransform,
        object_twist: np.ndarray,
        frames: tuple[np.ndarray, np.ndarray] | None = None,
    ) -> list[tuple[ContactPoint, np.ndarray | None]]:
        """Contacts with forces for the given configuration.

        Returns ``(contact, hand point Jacobian)`` pairs; the Jacobian is None
        for object-table contacts.
        """
        frames = frames if frames is not None else chain_frames(self.chain, q)
        table = self.config.table_height
        com = object_pose.translation
        vel, omega = object_twist[:3], object_twist[3:]
        objects = self.posed_object_shapes(object_pose)
        up = np.array([0.0, 0.0, 1.0])
        found: list[tuple[ContactPoint, np.ndarray | None]] = []

        for posed, link in zip(self.posed_hand_shapes(q, frames[1]), self._hand_links):
            name = self.chain.links[link].name
            for obj in objects:
                pen = penetration(posed, obj)
                if pen is None:
                    continue
                jac = link_jacobian(self.chain, q, link, pen.point, frames=frames)
                v_obj = vel + np.cross(omega, pen.point - com)
                force = self._contact_force(pen.depth, pen.normal, jac @ qd - v_obj)
                contact = ContactPoint(name, OBJECT, pen.point, pen.depth, pen.normal, force)
                found.append((contact, jac))
            if posed.lowest_z() < table:
                for point, depth in plane_contacts(posed, table):
                    jac = link_jacobian(self.chain, q, link, point, frames=frames)
                    force = self._contact_force(depth, up, jac @ qd)
                    found.append((ContactPoint(name, TABLE, point, depth, up, force), jac))

        for obj in objects:
            for point, depth in plane_contacts(obj, table):
                v_obj = vel + np.cross(omega, point - com)
                force = self._contact_force(depth, up, v_obj)
                found.append((ContactPoint(OBJECT, TABLE, point, depth, up, force), None))
        return found

    def _substep(
        self, s: _SubStep, target: np.ndarray,
    ) -> tuple[_SubStep, tuple[ContactPoint, ...]]:
        dt = self.config.timestep
        frames = chain_frames(self.chain, s.q)
        pose = RigidTransform(rotation=s.quat, translation=s.pos)
        found = self.find_contacts(s.q, s.qd, pose, np.concatenate([s.vel, s.omega]), frames)

        tau = self.kp * (target - s.q) - self.kd * s.qd
        force = self.mass * self.gravity
        torque = np.zeros(3)
        for contact, jac in found:
            if jac is not None:
                tau = tau + jac.T @ contact.force
            if contact.other == OBJECT:
                force = force - contact.force
                torque = torque - np.cross(contact.position - s.pos, contact.force)
            elif contact.link == OBJECT:
                force = force + contact.force
                torque = torque + np.cross(contact.position - s.pos, contact.force)

        qd = s.qd + dt * tau / self.joint_inertia
        q = s.q + dt * qd
        at_limit = (q < self.chain.lower) | (q > self.chain.upper)
        q = np.clip(q, self.chain.lower, self.chain.upper)
        qd = np.where(at_limit, 0.0, qd)

        rot = quat_to_matrix(s.quat)
        inertia_world = rot @ self.inertia_body @ rot.T
        inertia_world_inv = rot @ self.inertia_body_inv @ rot.T
        vel = s.vel + dt * force / self.mass
        omega = s.omega + dt * inertia_world_inv @ (
            torque - np.cross(s.omega, inertia_world @ s.omega)
        )
        pos = s.pos + dt * vel
        quat = quat_normalize(quat_multiply(expmap_to_quat(omega * dt), s.quat))
        return (
            _SubStep(q=q, qd=qd, pos=pos, quat=quat, vel=vel, omega=omega),
            tuple(c for c, _ in found),
        )

    # -- queries -------------------------------------------------------------

    def fingertips_in_contact(self, state: WorldState) -> int:
        """Number of fingertip links touching the object."""
        touching = {c.link for c in state.contacts if c.other == OBJECT}
        return len(touching & self._fingertip_names)

    def is_lifted(self, state: WorldState, epsilon: float = 0.02) -> bool:
        """Strictly above the table by more than *epsilon* at the lowest point."""
        return self.object_lowest_z(state.object_pose) > self.config.table_height + epsilon

    def max_penetration(self, state: WorldState) -> float:
        return max((c.depth for c in state.contacts), default=0.0)


# ---------------------------------------------------------------------------
# Debug dumps
# ---------------------------------------------------------------------------

def state_to_dict(state: WorldState) -> dict[str, Any]:
    return {
        "time": state.time,
        "q": state.q.tolist(),
        "qd": state.qd.tolist(),
        "object_pos": state.object_pose.translation.tolist(),
        "object_quat": state.object_pose.rotation.tolist(),
        "object_twist": state.object_twist.tolist(),
        "contacts": [
            {
                "link": c.link,
                "other": c.other,
                "position": c.position.tolist(),
                "depth": c.depth,
                "normal": c.normal.tolist(),
                "force": c.force.tolist(),
            }
            for c in state.contacts
        ],
    }


def dump_states(states: Iterable[WorldState], path: Path | str) -> None:
    """Write one JSON object per frame."""
    with Path(path).open("w") as fh:
        for state in states:
            fh.write(json.dumps(state_to_dict(state), sort_keys=True) + "\n")
