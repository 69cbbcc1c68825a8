"""Human-to-robot hand motion retargeting."""

from dexmimic.retarget.build import build_reference
from dexmimic.retarget.demo import SyntheticDemo, keypoints_from_configs, synthesize_demo
from dexmimic.retarget.keypoints import HumanHandTrajectory, read_keypoints, write_keypoints
from dexmimic.retarget.solver import (
    RetargetConfig,
    RobotTrajectory,
    objective,
    objective_gradient,
    read_robot_trajectory,
    retarget_frame,
    retarget_trajectory,
    write_robot_trajectory,
)

__all__ = [
    # keypoints
    "HumanHandTrajectory",
    "read_keypoints",
    "write_keypoints",
    # solver
    "RetargetConfig",
    "RobotTrajectory",
    "objective",
    "objective_gradient",
    "retarget_frame",
    "retarget_trajectory",
    "read_robot_trajectory",
    "write_robot_trajectory",
    # reference
    "build_reference",
    # demos
    "SyntheticDemo",
    "keypoints_from_configs",
    "synthesize_demo",
]
