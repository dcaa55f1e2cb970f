"""Convolutional head that upsamples decoder grid outputs to pixels."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


class PixelHead(nn.Module):
    """``(B, H, W, D)`` → ``(B, 3, S, S)`` via stride-2 transposed convolutions.

    One upsampling stage per factor of two in ``S / H``; a final bilinear
    resize covers sizes that are not a power-of-two multiple of the grid.
    """

    def __init__(
        self,
        dim: int,
        grid_size: int,
        image_size: int,
        channels: int = 64,
        groups: int = 8,
    ) -> None:
        super().__init__()
        self.image_size = image_size
        stages = max(int(math.floor(math.log2(image_size / grid_size))), 0)
        self.conv_in = nn.Conv2d(dim, channels, kernel_size=3, padding=1)
        self.upsample = nn.Sequential(
            *(
                nn.Sequential(
                    nn.ConvTranspose2d(channels, channels, kernel_size=4, stride=2, padding=1),
                    nn.GroupNorm(groups, channels),
                    nn.SiLU(),
                )
                for _ in range(stages)
            )
        )
        self.conv_out = nn.Conv2d(channels, 3, kernel_size=3, padding=1)

    @torch.no_grad()
    def zero_init_output(self) -> None:
        """Zero the last convolution so the head outputs an all-zero image."""
        self.conv_out.weight.zero_()
        self.conv_out.bias.zero_()

    def forward(self, grid: torch.Tensor) -> torch.Tensor:
        x = self.conv_in(grid.permute(0, 3, 1, 2))
        x = self.conv_out(self.upsample(x))
        if x.shape[-1] != self.image_size:
            x = F.interpolate(
                x, size=(self.image_size, self.image_size), mode="bilinear", align_corners=False
            )
        return x


__all__ = ["PixelHead"]
