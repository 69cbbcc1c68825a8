"""Reference-trajectory augmentation: planar scene motion and new target poses."""

from dexmimic.augment.trajectory import (
    AugmentSample,
    AugmentSpec,
    PlanarDelta,
    augment_reference,
    interpolate_target,
    sample_augmentation,
    transform_reference,
)

__all__ = [
    "AugmentSpec",
    "AugmentSample",
    "PlanarDelta",
    "transform_reference",
    "interpolate_target",
    "sample_augmentation",
    "augment_reference",
]
