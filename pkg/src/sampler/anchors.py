"""Learnable anchor queries tied to a fixed grid of reference points."""

from __future__ import annotations

import math

import torch
from torch import nn

from src.configs.schemas import is_perfect_square
from src.errors import ConfigurationError


class AnchorQuerySet(nn.Module):
    """``N`` trainable query embeddings plus ``N`` fixed 2D reference points.

    Reference points are a non-trainable buffer in ``[0, 1]²`` stored as
    ``(x, y)``; only the query contents are refined during training.
    """

    def __init__(self, queries: torch.Tensor, reference_points: torch.Tensor) -> None:
        super().__init__()
        if queries.shape[0] != reference_points.shape[0]:
            raise ConfigurationError(
                f"{queries.shape[0]} queries but {reference_points.shape[0]} reference points"
            )
        self.queries = nn.Parameter(queries)
        self.register_buffer("reference_points", reference_points)

    @property
    def count(self) -> int:
        """Token count N."""
        return self.queries.shape[0]

    @property
    def dim(self) -> int:
        """Query width D."""
        return self.queries.shape[1]

    def expand(self, batch: int) -> torch.Tensor:
        """Queries broadcast to ``(batch, N, D)``."""
        return self.queries.unsqueeze(0).expand(batch, -1, -1)


def grid_reference_points(n: int) -> torch.Tensor:
    """Cell centres of a √n × √n grid in row-major order, shape ``(n, 2)``."""
    if not is_perfect_square(n):
        raise ConfigurationError(f"Anchor count must be a perfect square, got {n}")
    side = math.isqrt(n)
    centers = (torch.arange(side, dtype=torch.float32) + 0.5) / side
    rows, cols = torch.meshgrid(centers, centers, indexing="ij")
    return torch.stack([cols.reshape(-1), rows.reshape(-1)], dim=-1)


def init_anchor_grid(
    n: int,
    dim: int,
    *,
    std: float = 0.02,
    generator: torch.Generator | None = None,
) -> AnchorQuerySet:
    """Build an anchor set whose reference points are grid cell centres.

    Raises:
        ConfigurationError: *n* is not a perfect square or *dim* < 1.
    """
    if dim < 1:
        raise ConfigurationError(f"Anchor width must be positive, got {dim}")
    points = grid_reference_points(n)
    queries = torch.randn(n, dim, generator=generator) * std
    return AnchorQuerySet(queries, points)


__all__ = ["AnchorQuerySet", "grid_reference_points", "init_anchor_grid"]
