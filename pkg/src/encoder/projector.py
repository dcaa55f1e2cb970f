"""Per-level two-layer MLP projection and per-level CLS fusion."""

from __future__ import annotations

import torch
from torch import nn

from src.configs.schemas import TokenizerMode
from src.encoder.pyramid import FeaturePyramid, PyramidLevel
from src.errors import ConfigurationError, ModeError


class LevelMLP(nn.Module):
    """``fc2(act(fc1(x)))`` applied to grid cells and CLS of one level."""

    def __init__(self, in_dim: int, out_dim: int, activation: str = "gelu") -> None:
        super().__init__()
        self.fc1 = nn.Linear(in_dim, out_dim)
        self.act = nn.GELU() if activation == "gelu" else nn.Identity()
        self.fc2 = nn.Linear(out_dim, out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))

    @torch.no_grad()
    def init_identity(self) -> None:
        """Set both layers to the identity map (requires in_dim == out_dim)."""
        if self.fc1.in_features != self.fc1.out_features:
            raise ConfigurationError(
                f"identity init needs equal widths, got {self.fc1.in_features} → "
                f"{self.fc1.out_features}"
            )
        for layer in (self.fc1, self.fc2):
            layer.weight.copy_(torch.eye(layer.out_features))
            layer.bias.zero_()


class LevelProjector(nn.Module):
    """Projects every pyramid level to one uniform width.

    Per-level MLPs by default; ``shared=True`` uses a single MLP for all
    levels (sensitivity setting for the shared-vs-per-level question).
    """

    def __init__(
        self,
        in_dims: list[int],
        out_dim: int,
        *,
        shared: bool = False,
        activation: str = "gelu",
    ) -> None:
        super().__init__()
        if not in_dims:
            raise ConfigurationError("LevelProjector needs at least one level width")
        if shared and len(set(in_dims)) != 1:
            raise ConfigurationError(f"A shared projector needs equal widths: {in_dims}")
        self.out_dim = out_dim
        self.shared = shared
        count = 1 if shared else len(in_dims)
        self.mlps = nn.ModuleList(
            LevelMLP(in_dims[i], out_dim, activation) for i in range(count)
        )
        self.num_levels = len(in_dims)

    def mlp_for(self, level: int) -> LevelMLP:
        """The MLP applied to level index *level*."""
        return self.mlps[0 if self.shared else level]

    def init_identity(self) -> None:
        """Identity-initialise every MLP."""
        for mlp in self.mlps:
            mlp.init_identity()


def project_levels(pyramid: FeaturePyramid, projector: LevelProjector) -> FeaturePyramid:
    """Project grids and CLS vectors of every level to ``projector.out_dim``.

    The target grid is left untouched; gradients reach the projector only,
    because the pyramid itself was produced without gradient tracking.
    """
    if pyramid.num_levels != projector.num_levels:
        raise ConfigurationError(
            f"Projector built for {projector.num_levels} levels, "
            f"pyramid has {pyramid.num_levels}"
        )
    levels = []
    for index, level in enumerate(pyramid.levels):
        mlp = projector.mlp_for(index)
        if level.dim != mlp.fc1.in_features:
            raise ConfigurationError(
                f"Level {index} width {level.dim} != projector input "
                f"{mlp.fc1.in_features}"
            )
        levels.append(PyramidLevel(grid=mlp(level.grid), cls=mlp(level.cls)))
    return pyramid.with_levels(levels)


def fuse_cls_per_level(pyramid: FeaturePyramid, mode: TokenizerMode) -> FeaturePyramid:
    """Add each level's CLS vector to every cell of that level's grid.

    Raises:
        ModeError: When called for a discrete tokenizer.
    """
    if mode != "continuous":
        raise ModeError(f"CLS fusion is a continuous-mode step, got mode={mode!r}")
    levels = [
        PyramidLevel(grid=level.grid + level.cls[:, None, None, :], cls=level.cls)
        for level in pyramid.levels
    ]
    return pyramid.with_levels(levels)


__all__ = ["LevelMLP", "LevelProjector", "fuse_cls_per_level", "project_levels"]
