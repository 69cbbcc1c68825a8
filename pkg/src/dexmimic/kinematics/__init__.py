"""Hand kinematics: rigid transforms, chain descriptions, forward kinematics and Jacobians."""

from dexmimic.kinematics.chain import (
    JointConfig,
    KinematicChain,
    Link,
    chain_from_dict,
    chain_to_dict,
    clamp_to_limits,
    default_desk_hand,
    fingertip_positions,
    forward_kinematics,
    link_jacobian,
    load_chain,
    mean_pose,
)
from dexmimic.kinematics.transforms import RigidTransform, look_at, slerp

__all__ = [
    # transforms
    "RigidTransform",
    "look_at",
    "slerp",
    # chain
    "JointConfig",
    "KinematicChain",
    "Link",
    "chain_from_dict",
    "chain_to_dict",
    "load_chain",
    "default_desk_hand",
    "forward_kinematics",
    "fingertip_positions",
    "link_jacobian",
    "clamp_to_limits",
    "mean_pose",
]
