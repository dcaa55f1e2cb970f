"""Dual decoder: pixel reconstruction plus deepest-level feature prediction.

Sequence layouts:

- image path: ``[latent | mask grid | CLS | registers]``
- feature path: ``[latent | mask grid | registers]``

Only the mask-grid outputs are read back; CLS and register outputs never
reach the pixel or feature heads. The image path's CLS output is kept for
linear probing.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import torch
from torch import nn

from src.bottleneck.continuous import UpProjection
from src.configs.schemas import DecoderConfig
from src.decoder.mask_grid import MaskTokenGrid
from src.decoder.pixel_head import PixelHead
from src.errors import InputError, NumericError
from src.modules.blocks import TransformerBlock


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DecoderOutput:
    """Reconstructed image ``(B, 3, S, S)``, predicted features and the CLS output."""

    image: torch.Tensor
    features: torch.Tensor | None
    cls: torch.Tensor


def _check_latent(latent_up: torch.Tensor) -> None:
    if latent_up.ndim != 3 or latent_up.shape[1] < 1:
        raise InputError(
            f"Decoder needs (B, N≥1, D) latent tokens, got {tuple(latent_up.shape)}"
        )


def assemble_image_sequence(
    latent_up: torch.Tensor,
    grid: MaskTokenGrid,
    cls: torch.Tensor,
    registers: torch.Tensor | None,
) -> torch.Tensor:
    """Concatenate ``[latent | mask grid | CLS | registers]``.

    Positions are added to the mask-grid tokens only.

    Returns:
        ``(B, N + H·W + 1 + R, D)``.
    """
    _check_latent(latent_up)
    B = latent_up.shape[0]
    parts = [latent_up, grid.materialize(B, "image"), cls.expand(B, -1, -1)]
    if registers is not None:
        parts.append(registers.expand(B, -1, -1))
    return torch.cat(parts, dim=1)


def assemble_feature_sequence(
    latent_up: torch.Tensor,
    grid: MaskTokenGrid,
    registers: torch.Tensor | None,
) -> torch.Tensor:
    """Concatenate ``[latent | mask grid | registers]`` for the feature path."""
    _check_latent(latent_up)
    B = latent_up.shape[0]
    parts = [latent_up, grid.materialize(B, "feature")]
    if registers is not None:
        parts.append(registers.expand(B, -1, -1))
    return torch.cat(parts, dim=1)


def run_blocks(sequence: torch.Tensor, blocks: Sequence[nn.Module], norm: nn.Module) -> torch.Tensor:
    x = sequence
    for block in blocks:
        x = block(x)
    return norm(x)


def grid_outputs(hidden: torch.Tensor, n_latent: int, grid: MaskTokenGrid) -> torch.Tensor:
    """Mask-grid slice of a transformer output reshaped to ``(B, H, W, D)``."""
    cells = hidden[:, n_latent : n_latent + grid.cells]
    return cells.reshape(hidden.shape[0], grid.height, grid.width, -1)


def decode_image(
    sequence: torch.Tensor,
    n_latent: int,
    grid: MaskTokenGrid,
    blocks: Sequence[nn.Module],
    norm: nn.Module,
    pixel_head: PixelHead,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Run the shared transformer and turn mask-grid outputs into pixels.

    Returns:
        ``(image, hidden)`` where ``hidden`` is the full normalised sequence.

    Raises:
        NumericError: The transformer or the head produced non-finite values.
    """
    hidden = run_blocks(sequence, blocks, norm)
    image = pixel_head(grid_outputs(hidden, n_latent, grid))
    if not torch.isfinite(image).all():
        raise NumericError("Decoder produced non-finite pixels")
    return image, hidden


def predict_features(
    latent_up: torch.Tensor,
    grid: MaskTokenGrid,
    blocks: Sequence[nn.Module],
    norm: nn.Module,
    head: nn.Module,
    registers: torch.Tensor | None = None,
) -> torch.Tensor:
    """Predict the deepest encoder level ``(B, H, W, D_vfm)`` from the latent."""
    sequence = assemble_feature_sequence(latent_up, grid, registers)
    hidden = run_blocks(sequence, blocks, norm)
    return head(grid_outputs(hidden, latent_up.shape[1], grid))


class DualDecoder(nn.Module):
    """Up-projection, mask grid, shared transformer and both heads.

    With ``shared_vit`` the first ``min(d2, d3)`` feature-path blocks are the
    image-path block objects themselves.
    """

    def __init__(
        self,
        config: DecoderConfig,
        *,
        latent_dim: int,
        grid_size: int,
        image_size: int,
        feature_dim: int,
    ) -> None:
        super().__init__()
        self.config = config
        width = config.width
        self.up = UpProjection(latent_dim, width)
        self.mask_grid = MaskTokenGrid(
            grid_size, grid_size, width, shared=config.shared_mask_token
        )
        self.cls_token = nn.Parameter(torch.zeros(1, 1, width))
        self.registers = (
            nn.Parameter(torch.zeros(1, config.register_count, width))
            if config.register_count
            else None
        )
        nn.init.trunc_normal_(self.cls_token, std=0.02)
        if self.registers is not None:
            nn.init.trunc_normal_(self.registers, std=0.02)
        self.image_blocks = nn.ModuleList(
            TransformerBlock(width, config.heads, config.mlp_ratio) for _ in range(config.d2)
        )
        shared = min(config.d2, config.d3) if config.shared_vit else 0
        self.feature_blocks = nn.ModuleList(
            self.image_blocks[i]
            if i < shared
            else TransformerBlock(width, config.heads, config.mlp_ratio)
            for i in range(config.d3)
        )
        self.image_norm = nn.LayerNorm(width)
        self.feature_norm = nn.LayerNorm(width)
        self.pixel_head = PixelHead(
            width, grid_size, image_size, config.pixel_channels, config.pixel_groups
        )
        self.feature_head = nn.Linear(width, feature_dim)
        logger.debug(
            "DualDecoder: d2=%d d3=%d shared_blocks=%d registers=%d",
            config.d2,
            config.d3,
            shared,
            config.register_count,
        )

    @property
    def shared_block_count(self) -> int:
        return sum(
            1
            for a, b in zip(self.image_blocks, self.feature_blocks, strict=False)
            if a is b
        )

    def image_sequence(self, latent_up: torch.Tensor) -> torch.Tensor:
        return assemble_image_sequence(latent_up, self.mask_grid, self.cls_token, self.registers)

    def decode(self, latent_up: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Image ``(B, 3, S, S)`` and CLS output ``(B, D)`` from up-projected tokens."""
        image, hidden = decode_image(
            self.image_sequence(latent_up),
            latent_up.shape[1],
            self.mask_grid,
            self.image_blocks,
            self.image_norm,
            self.pixel_head,
        )
        return image, hidden[:, latent_up.shape[1] + self.mask_grid.cells]

    def features(self, latent_up: torch.Tensor) -> torch.Tensor:
        return predict_features(
            latent_up,
            self.mask_grid,
            self.feature_blocks,
            self.feature_norm,
            self.feature_head,
            self.registers,
        )

    def forward(self, latent: torch.Tensor, *, with_features: bool = True) -> DecoderOutput:
        """Decode latent tokens of width ``latent_dim``.

        Feature prediction is a training-time target; pass
        ``with_features=False`` for plain reconstruction.
        """
        latent_up = self.up(latent)
        image, cls = self.decode(latent_up)
        features = self.features(latent_up) if with_features else None
        return DecoderOutput(image=image, features=features, cls=cls)


__all__ = [
    "DecoderOutput",
    "DualDecoder",
    "assemble_feature_sequence",
    "assemble_image_sequence",
    "decode_image",
    "grid_outputs",
    "predict_features",
    "run_blocks",
]
