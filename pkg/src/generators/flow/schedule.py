"""Dimension-dependent timestep shift and the Euler time grid.

``t = 0`` is data and ``t = 1`` is pure noise. The shift
``t_m = α·t / (1 + (α − 1)·t)`` with ``α = √(m / n)`` pushes the schedule
towards the noisy end for larger latent sizes.
"""

from __future__ import annotations

import math

import torch

from src.errors import InputError


def shift_alpha(shift_n: float, shift_m: float) -> float:
    return math.sqrt(shift_m / shift_n)


def shift_timestep(
    t: torch.Tensor | float,
    shift_n: float = 4096.0,
    shift_m: float = 65536.0,
) -> torch.Tensor | float:
    """Shift timesteps in ``[0, 1]``; returns the same kind it was given.

    Raises:
        InputError: Any ``t`` outside ``[0, 1]``.
    """
    alpha = shift_alpha(shift_n, shift_m)
    if isinstance(t, torch.Tensor):
        if ((t < 0) | (t > 1)).any():
            raise InputError("Timesteps must lie in [0, 1]")
        return alpha * t / (1 + (alpha - 1) * t)
    if not 0.0 <= t <= 1.0:
        raise InputError(f"Timestep {t} outside [0, 1]")
    return alpha * t / (1 + (alpha - 1) * t)


def euler_timesteps(
    steps: int,
    shift_n: float = 4096.0,
    shift_m: float = 65536.0,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """``steps + 1`` shifted times from 1 down to 0 (uniform before shifting)."""
    if steps < 1:
        raise InputError(f"euler steps must be ≥ 1, got {steps}")
    uniform = 1.0 - torch.arange(steps + 1, dtype=torch.float64) / steps
    return shift_timestep(uniform, shift_n, shift_m).to(dtype)


__all__ = ["euler_timesteps", "shift_alpha", "shift_timestep"]
