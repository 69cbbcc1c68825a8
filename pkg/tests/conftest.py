"""Shared fixtures: small chains, a settled desk scene and a short reference."""

from __future__ import annotations

import math
from typing import Any

import numpy as np
import pytest

from dexmimic.kinematics.chain import KinematicChain, chain_from_dict, default_desk_hand
from dexmimic.retarget.build import build_reference
from dexmimic.retarget.demo import SyntheticDemo, synthesize_demo
from dexmimic.retarget.solver import RobotTrajectory
from dexmimic.reward.reference import ReferenceTrajectory
from dexmimic.sim.scene import Scene, scene_from_dict


def planar_chain_dict(lengths: list[float], limits: float = math.pi) -> dict[str, Any]:
    """Revolute-about-z links of the given lengths, ending in a fixed tip frame."""
    links: list[dict[str, Any]] = []
    parent = None
    offset = [0.0, 0.0, 0.0]
    for i, length in enumerate(lengths):
        name = f"link{i}"
        links.append({
            "name": name,
            "parent": parent,
            "offset": {"translation": offset},
            "joint": {"type": "revolute", "axis": [0, 0, 1], "limits": [[-limits, limits]]},
        })
        parent = name
        offset = [length, 0.0, 0.0]
    links.append({"name": "tip", "parent": parent, "offset": {"translation": offset}})
    return {"name": "planar", "links": links, "palm": "link0", "fingertips": ["tip"]}


def line_reference(length: int = 20, pregrasp: int = 5, tips: int = 2) -> ReferenceTrajectory:
    """Fixed-base reference: the object slides along x with fingertips 5 cm above it."""
    s = np.linspace(0.0, 0.2, length)
    obj = np.stack([s, np.zeros(length), np.full(length, 0.03)], axis=1)
    offsets = np.array([[0.02 * k, 0.0, 0.05] for k in range(tips)])
    identity = np.array([1.0, 0.0, 0.0, 0.0])
    return ReferenceTrajectory(
        q=np.zeros((length, 3)),
        tips=obj[:, None, :] + offsets[None],
        obj_pos=obj,
        obj_quat=np.tile(identity, (length, 1)),
        pregrasp_len=pregrasp,
        target_pos=obj[-1],
        target_quat=identity,
        base_dof=None,
    )


@pytest.fixture()
def one_link_chain() -> KinematicChain:
    return chain_from_dict(planar_chain_dict([1.0]))


@pytest.fixture()
def two_link_chain() -> KinematicChain:
    return chain_from_dict(planar_chain_dict([1.0, 1.0]))


@pytest.fixture(scope="session")
def desk_hand() -> KinematicChain:
    return default_desk_hand()


@pytest.fixture(scope="session")
def box_scene() -> Scene:
    return scene_from_dict({"object": "box"})


@pytest.fixture(scope="session")
def box_demo(desk_hand: KinematicChain) -> SyntheticDemo:
    return synthesize_demo("box", frames=24, seed=0, chain=desk_hand)


@pytest.fixture(scope="session")
def box_reference(desk_hand: KinematicChain, box_demo: SyntheticDemo) -> ReferenceTrajectory:
    """Reference built straight from the scripted joint path (no solve)."""
    traj = RobotTrajectory(
        q=box_demo.q,
        residual=np.zeros(len(box_demo.q)),
        converged=np.ones(len(box_demo.q), dtype=bool),
    )
    return build_reference(desk_hand, traj, box_demo.object_poses)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
