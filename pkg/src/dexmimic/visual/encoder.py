"""Permutation-invariant point encoder: a shared per-point MLP followed by a max pool."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
import torch
from torch import nn

from dexmimic.errors import InvalidInputError
from dexmimic.rl.networks import DTYPE
from dexmimic.visual.frames import MultiFramePointCloud


class PointNetEncoder(nn.Module):
    """ReLU after every layer, including the last, so features are non-negative."""

    def __init__(self, in_dim: int, sizes: Sequence[int] = (64, 128, 256)) -> None:
        super().__init__()
        if in_dim < 3 or in_dim % 3:
            raise InvalidInputError(f"encoder input must be 3F wide, got {in_dim}")
        if not sizes:
            raise InvalidInputError("encoder needs at least one layer")
        self.in_dim = in_dim
        self.sizes = tuple(int(s) for s in sizes)
        dims = (in_dim, *self.sizes)
        self.layers = nn.ModuleList(
            nn.Linear(a, b, dtype=DTYPE) for a, b in zip(dims[:-1], dims[1:])
        )

    @property
    def feature_dim(self) -> int:
        return self.sizes[-1]

    def point_features(self, points: torch.Tensor) -> torch.Tensor:
        x = points
        for layer in self.layers:
            x = torch.relu(layer(x))
        return x

    def forward(self, points: torch.Tensor) -> torch.Tensor:
        """(..., N, 3F) points to (..., D) features."""
        if points.shape[-1] != self.in_dim:
            raise InvalidInputError(
                f"points have width {points.shape[-1]}, encoder expects {self.in_dim}",
            )
        return self.point_features(points).amax(dim=-2)


def encode(encoder: PointNetEncoder, pc: MultiFramePointCloud | np.ndarray) -> np.ndarray:
    data = pc.data if isinstance(pc, MultiFramePointCloud) else np.asarray(pc, dtype=float)
    with torch.no_grad():
        return encoder(torch.as_tensor(data, dtype=DTYPE)).numpy()
