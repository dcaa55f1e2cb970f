"""2D rotary position embeddings with row/column channel halves.

For a head dimension ``d`` (divisible by 4) the first ``d/2`` channels rotate
by the row index and the last ``d/2`` by the column index. Within each half,
channel pairs ``(2j, 2j+1)`` rotate by ``θ_j · pos`` with
``θ_j = base^(−2j / (d/2))``.
"""

from __future__ import annotations

import math

import torch

from src.errors import ConfigurationError


def _check_head_dim(head_dim: int) -> None:
    if head_dim % 4:
        raise ConfigurationError(f"2D rotary embeddings need head dim divisible by 4, got {head_dim}")


def rope_frequencies(head_dim: int, base: float = 10000.0) -> torch.Tensor:
    """``θ_j`` for ``j < head_dim / 4`` (one frequency per channel pair per half)."""
    _check_head_dim(head_dim)
    half = head_dim // 2
    exponents = torch.arange(0, half, 2, dtype=torch.float64) / half
    return base**-exponents


def _rotate_half(x: torch.Tensor, angles: torch.Tensor) -> torch.Tensor:
    cos, sin = torch.cos(angles).to(x.dtype), torch.sin(angles).to(x.dtype)
    even, odd = x[..., 0::2], x[..., 1::2]
    out = torch.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def rope2d_rotate(x: torch.Tensor, positions: torch.Tensor, base: float = 10000.0) -> torch.Tensor:
    """Rotate ``x`` (``(..., T, d)``) by 2D positions ``(T, 2)`` given as (row, col)."""
    head_dim = x.shape[-1]
    freqs = rope_frequencies(head_dim, base).to(x.device)
    half = head_dim // 2
    pos = positions.to(device=x.device, dtype=torch.float64)
    row_angles = pos[..., 0:1] * freqs
    col_angles = pos[..., 1:2] * freqs
    return torch.cat(
        [_rotate_half(x[..., :half], row_angles), _rotate_half(x[..., half:], col_angles)],
        dim=-1,
    )


def grid_positions(token_count: int) -> torch.Tensor:
    """Row-major ``(i // s, i % s)`` coordinates of a square token grid, ``(N, 2)``."""
    side = math.isqrt(token_count)
    if side * side != token_count:
        raise ConfigurationError(f"Token count {token_count} is not a perfect square")
    index = torch.arange(token_count)
    return torch.stack([index // side, index % side], dim=-1)


def sequence_positions(token_count: int) -> torch.Tensor:
    """Positions of ``[class | image tokens]``: class at (0, 0), then the grid."""
    return torch.cat([torch.zeros(1, 2, dtype=torch.long), grid_positions(token_count)])


class Rope2D:
    """Callable applying :func:`rope2d_rotate` for the first ``T`` sequence positions."""

    def __init__(self, positions: torch.Tensor, base: float = 10000.0) -> None:
        self.positions = positions
        self.base = base

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        return rope2d_rotate(x, self.positions[: x.shape[-2]], self.base)


__all__ = [
    "Rope2D",
    "grid_positions",
    "rope2d_rotate",
    "rope_frequencies",
    "sequence_positions",
]
