"""Synthetic demonstrations for the desk hand.

A scripted grasp (approach from above, close, lift and carry to a target)
is generated in robot joint space, and the human keypoints are read off
the hand's forward kinematics: thumb, index, middle and ring keypoints sit
on the matching desk-hand joints, the pinky rides beside the ring finger
and the wrist sits behind the palm. Retargeting such a demo should give
back the scripted joint path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dexmimic.errors import InvalidInputError
from dexmimic.kinematics.chain import KinematicChain, default_desk_hand, link_matrices
from dexmimic.kinematics.transforms import RigidTransform
from dexmimic.retarget.keypoints import NUM_KEYPOINTS, HumanHandTrajectory
from dexmimic.sim.scene import object_preset, rest_height

_FINGER_KEYPOINTS = {
    "thumb": ("cmc", "mcp", "ip", "tip"),
    "index": ("mcp", "pip", "dip", "tip"),
    "middle": ("mcp", "pip", "dip", "tip"),
    "ring": ("mcp", "pip", "dip", "tip"),
}
_SEGMENTS = ("proximal", "middle", "distal", "tip")
WRIST_OFFSET = np.array([-0.03, 0.0, 0.0])
PINKY_OFFSET = np.array([0.0, -0.025, 0.0])

PREGRASP_FLEX = np.array([0.8, 0.2, 0.1])
CLOSED_FLEX = np.array([1.5, 0.35, 0.25])
GRASP_PALM_OFFSET = np.array([-0.045, 0.0])
GRASP_PALM_HEIGHT = 0.09
APPROACH_HEIGHT = 0.25
DEFAULT_LIFT = np.array([0.10, 0.0, 0.15])


@dataclass(frozen=True, eq=False)
class SyntheticDemo:
    """Keypoints with object track, plus the joint path that produced them."""

    human: HumanHandTrajectory
    q: np.ndarray

    @property
    def object_poses(self) -> tuple[RigidTransform, ...]:
        assert self.human.object_poses is not None
        return self.human.object_poses


def _finger_links(chain: KinematicChain) -> list[list[int]]:
    try:
        return [
            [chain.index_of(f"{finger}_{s}") for s in _SEGMENTS] for finger in _FINGER_KEYPOINTS
        ]
    except InvalidInputError as exc:
        raise InvalidInputError(
            "synthetic demos need the desk hand link layout (thumb/index/middle/ring)",
        ) from exc


def keypoints_from_configs(chain: KinematicChain, qs: np.ndarray) -> np.ndarray:
    """(T, 21, 3) human keypoints placed on the desk hand's joints for every config."""
    fingers = _finger_links(chain)
    palm = chain.palm
    out = np.empty((len(qs), NUM_KEYPOINTS, 3))
    for t, q in enumerate(qs):
        mats = link_matrices(chain, q)
        rot, origin = mats[palm, :3, :3], mats[palm, :3, 3]
        out[t, 0] = origin + rot @ WRIST_OFFSET
        slot = 1
        for links in fingers:
            out[t, slot:slot + 4] = mats[links, :3, 3]
            slot += 4
        out[t, slot:slot + 4] = mats[fingers[-1], :3, 3] + rot @ PINKY_OFFSET
    return out


def _smoothstep(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def synthesize_demo(
    object_name: str = "box",
    frames: int = 40,
    seed: int = 0,
    *,
    chain: KinematicChain | None = None,
    object_xy: tuple[float, float] = (0.0, 0.0),
    lift: np.ndarray | None = None,
) -> SyntheticDemo:
    """Scripted approach, close, lift and carry of *object_name*.

    The seed jitters the object's start position and the carry target by a
    few millimetres so repeated demos differ.
    """
    if frames < 8:
        raise InvalidInputError("a synthetic demo needs at least 8 frames")
    chain = chain or default_desk_hand()
    if chain.free_base is None:
        raise InvalidInputError("synthetic demos need a free-base hand")
    fingers = _finger_links(chain)
    rng = np.random.default_rng(seed)
    preset = object_preset(object_name)
    start = np.array([
        object_xy[0] + rng.uniform(-0.005, 0.005),
        object_xy[1] + rng.uniform(-0.005, 0.005),
        rest_height(preset.shapes),
    ])
    carry = (DEFAULT_LIFT if lift is None else np.asarray(lift, dtype=float)) + rng.uniform(
        -0.005, 0.005, size=3,
    )

    n_approach = max(int(0.35 * frames), 2)
    n_close = max(int(0.15 * frames), 2)
    n_carry = frames - n_approach - n_close
    if n_carry < 2:
        raise InvalidInputError("a synthetic demo needs at least 8 frames")
    grasp = np.array([
        start[0] + GRASP_PALM_OFFSET[0], start[1] + GRASP_PALM_OFFSET[1], GRASP_PALM_HEIGHT,
    ])
    above = grasp + np.array([0.0, 0.0, APPROACH_HEIGHT - GRASP_PALM_HEIGHT])

    palm = np.empty((frames, 3))
    flex = np.empty((frames, 3))
    objects = np.empty((frames, 3))
    s = _smoothstep(np.linspace(0.0, 1.0, n_approach))
    palm[:n_approach] = above + s[:, None] * (grasp - above)
    flex[:n_approach] = s[:, None] * PREGRASP_FLEX
    objects[:n_approach] = start
    s = _smoothstep(np.linspace(0.0, 1.0, n_close + 1)[1:])
    palm[n_approach:n_approach + n_close] = grasp
    closing = s[:, None] * (CLOSED_FLEX - PREGRASP_FLEX)
    flex[n_approach:n_approach + n_close] = PREGRASP_FLEX + closing
    objects[n_approach:n_approach + n_close] = start
    s = _smoothstep(np.linspace(0.0, 1.0, n_carry + 1)[1:])
    palm[n_approach + n_close:] = grasp + s[:, None] * carry
    flex[n_approach + n_close:] = CLOSED_FLEX
    objects[n_approach + n_close:] = start + s[:, None] * carry

    base = chain.dof_offsets[chain.free_base]
    qs = np.tile(np.clip(np.zeros(chain.dof), chain.lower, chain.upper), (frames, 1))
    qs[:, base:base + 3] = palm
    qs[:, base + 3:base + 6] = 0.0
    for links in fingers:
        for joint, link in enumerate(links[:3]):
            qs[:, chain.dof_offsets[link]] = flex[:, joint]
    qs = np.clip(qs, chain.lower, chain.upper)

    poses = tuple(RigidTransform.from_translation(p) for p in objects)
    human = HumanHandTrajectory(keypoints=keypoints_from_configs(chain, qs), object_poses=poses)
    return SyntheticDemo(human=human, q=qs)
