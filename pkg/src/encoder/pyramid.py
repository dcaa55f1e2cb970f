"""Multi-level feature containers passed between encoder, projector and sampler."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, replace

import torch

from src.errors import ConfigurationError


@dataclass(frozen=True)
class PyramidLevel:
    """One tapped layer: a channel-last grid ``(B, H, W, D)`` and its CLS ``(B, D)``."""

    grid: torch.Tensor
    cls: torch.Tensor

    @property
    def dim(self) -> int:
        """Channel width D."""
        return self.grid.shape[-1]


@dataclass(frozen=True)
class FeaturePyramid:
    """Ordered shallow→deep levels plus the frozen feature-reconstruction target.

    ``target`` is the raw deepest-level grid recorded at extraction time. It is
    never projected, fused or re-selected, so the similarity loss always
    compares against the encoder's last layer.
    """

    levels: tuple[PyramidLevel, ...]
    target: torch.Tensor
    source_resolution: int
    taps: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.levels:
            raise ConfigurationError("FeaturePyramid needs at least one level")
        shapes = {tuple(level.grid.shape[1:3]) for level in self.levels}
        if len(shapes) != 1:
            raise ConfigurationError(f"Pyramid levels disagree on H×W: {sorted(shapes)}")
        if len(self.taps) != len(self.levels):
            raise ConfigurationError(
                f"{len(self.levels)} levels but {len(self.taps)} tap indices"
            )

    @property
    def num_levels(self) -> int:
        """Number of levels L."""
        return len(self.levels)

    @property
    def grid_shape(self) -> tuple[int, int]:
        """Shared (H, W) of every level."""
        h, w = self.levels[0].grid.shape[1:3]
        return int(h), int(w)

    @property
    def deepest(self) -> PyramidLevel:
        """Last (deepest) level currently in the pyramid."""
        return self.levels[-1]

    def with_levels(self, levels: Sequence[PyramidLevel]) -> FeaturePyramid:
        """Return a copy with replaced levels (same taps, same target)."""
        return replace(self, levels=tuple(levels))

    def select(self, indices: Sequence[int]) -> FeaturePyramid:
        """Keep only the levels at *indices* (single or cumulative ablations)."""
        bad = [i for i in indices if i < 0 or i >= self.num_levels]
        if bad or not indices:
            raise ConfigurationError(
                f"Level indices {list(indices)} invalid for {self.num_levels} levels"
            )
        return replace(
            self,
            levels=tuple(self.levels[i] for i in indices),
            taps=tuple(self.taps[i] for i in indices),
        )


__all__ = ["FeaturePyramid", "PyramidLevel"]
