"""Linear down/up projections around the bottleneck and the continuous latent path."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from src.configs.schemas import TokenizerMode
from src.errors import ConfigurationError, ModeError, NumericError


@dataclass(frozen=True)
class ContinuousLatent:
    """``(..., N, d_lat)`` low-dimensional tokens of the continuous tokenizer."""

    tokens: torch.Tensor

    @property
    def dim(self) -> int:
        return self.tokens.shape[-1]


class DownProjection(nn.Module):
    """Linear ``D_uniform → d_code`` compression ahead of quantization."""

    def __init__(self, in_dim: int, out_dim: int) -> None:
        super().__init__()
        self.proj = nn.Linear(in_dim, out_dim)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.proj(z)

    @torch.no_grad()
    def init_identity(self) -> None:
        if self.proj.in_features != self.proj.out_features:
            raise ConfigurationError("identity init needs equal input and output widths")
        self.proj.weight.copy_(torch.eye(self.proj.out_features))
        self.proj.bias.zero_()


class UpProjection(nn.Module):
    """One-layer map from latent width to decoder width."""

    def __init__(self, in_dim: int, out_dim: int) -> None:
        super().__init__()
        self.proj = nn.Linear(in_dim, out_dim)

    def forward(self, latent: torch.Tensor) -> torch.Tensor:
        return self.proj(latent)


class ContinuousProjection(nn.Module):
    """Single linear map ``D_uniform → d_lat``; no sampling, no KL term."""

    def __init__(self, in_dim: int, latent_dim: int = 32) -> None:
        super().__init__()
        self.proj = nn.Linear(in_dim, latent_dim)

    @property
    def latent_dim(self) -> int:
        return self.proj.out_features

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.proj(z)


def down_project(z_r: torch.Tensor, projection: DownProjection) -> torch.Tensor:
    return projection(z_r)


def up_project(latent: torch.Tensor, projection: UpProjection) -> torch.Tensor:
    return projection(latent)


def project_continuous(
    z_r: torch.Tensor,
    projection: ContinuousProjection,
    mode: TokenizerMode = "continuous",
) -> ContinuousLatent:
    """Project region tokens to the continuous latent space.

    Raises:
        ModeError: Called for a discrete tokenizer.
        NumericError: The projection produced non-finite values.
    """
    if mode != "continuous":
        raise ModeError(f"project_continuous requires continuous mode, got {mode!r}")
    tokens = projection(z_r)
    if not torch.isfinite(tokens).all():
        raise NumericError("Continuous latent contains non-finite values")
    return ContinuousLatent(tokens)


__all__ = [
    "ContinuousLatent",
    "ContinuousProjection",
    "DownProjection",
    "UpProjection",
    "down_project",
    "project_continuous",
    "up_project",
]
