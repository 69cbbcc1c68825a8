"""Point-cloud visual policies distilled from state-policy rollouts."""

from dexmimic.visual.encoder import PointNetEncoder, encode
from dexmimic.visual.frames import FrameSet, MultiFramePointCloud, stack_frames, transform_to_frames
from dexmimic.visual.policy import (
    HeadKind,
    NoiseSchedule,
    VisualPolicy,
    bc_forward,
    diffusion_forward_noise,
    diffusion_sample,
)
from dexmimic.visual.train import (
    DistillSamples,
    VisualTrainConfig,
    bc_train,
    concat_samples,
    diffusion_loss,
    diffusion_train,
    diffusion_train_step,
    load_visual_policy,
    save_visual_policy,
    train_visual_policy,
)

__all__ = [
    # frames
    "FrameSet",
    "MultiFramePointCloud",
    "transform_to_frames",
    "stack_frames",
    # encoder
    "PointNetEncoder",
    "encode",
    # heads
    "HeadKind",
    "NoiseSchedule",
    "VisualPolicy",
    "bc_forward",
    "diffusion_forward_noise",
    "diffusion_sample",
    # training
    "DistillSamples",
    "VisualTrainConfig",
    "concat_samples",
    "bc_train",
    "diffusion_loss",
    "diffusion_train_step",
    "diffusion_train",
    "train_visual_policy",
    "save_visual_policy",
    "load_visual_policy",
]
