"""Mask-token grid shared by the image and feature reconstruction paths."""

from __future__ import annotations

from typing import Literal

import torch
from torch import nn


Path = Literal["image", "feature"]


class MaskTokenGrid(nn.Module):
    """One learnable token replicated ``H·W`` times plus learned positions ``E``.

    With ``shared=False`` the feature path gets its own base token; ``E`` is
    always shared between both paths.
    """

    def __init__(self, height: int, width: int, dim: int, *, shared: bool = True) -> None:
        super().__init__()
        self.height = height
        self.width = width
        self.shared = shared
        self.image_token = nn.Parameter(torch.zeros(dim))
        self.feature_token = None if shared else nn.Parameter(torch.zeros(dim))
        self.pos_embed = nn.Parameter(torch.zeros(height * width, dim))
        nn.init.trunc_normal_(self.image_token, std=0.02)
        if self.feature_token is not None:
            nn.init.trunc_normal_(self.feature_token, std=0.02)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)

    @property
    def cells(self) -> int:
        return self.height * self.width

    @property
    def base_token_count(self) -> int:
        return 1 if self.feature_token is None else 2

    def base_token(self, path: Path = "image") -> torch.Tensor:
        if path == "feature" and self.feature_token is not None:
            return self.feature_token
        return self.image_token

    def replicated(self, batch: int, path: Path = "image") -> torch.Tensor:
        """Base token tiled to ``(batch, H·W, D)`` before positions are added."""
        return self.base_token(path).expand(batch, self.cells, -1)

    def materialize(self, batch: int, path: Path = "image") -> torch.Tensor:
        """Grid tokens ``(batch, H·W, D)`` = replicated base token + ``E``."""
        return self.replicated(batch, path) + self.pos_embed


__all__ = ["MaskTokenGrid"]
