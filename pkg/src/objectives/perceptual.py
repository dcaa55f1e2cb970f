"""Perceptual proxy: distance between frozen-encoder activations at shallow taps."""

from __future__ import annotations

from collections.abc import Sequence

import torch
import torch.nn.functional as F

from src.encoder.backbone import FrozenViTEncoder
from src.errors import ConfigurationError, UsageError


def perceptual_proxy(
    image: torch.Tensor,
    recon: torch.Tensor,
    probe: FrozenViTEncoder,
    levels: Sequence[int] = (0, 1),
) -> torch.Tensor:
    """Mean squared activation distance at the probe's designated tap levels.

    *levels* index into the probe's configured tap layers. Gradients reach
    both images; the probe itself must be frozen.
    """
    if not probe.is_frozen:
        raise UsageError("The perceptual probe must be frozen")
    taps = probe.config.tap_layers
    if not levels or any(i < 0 or i >= len(taps) for i in levels):
        raise ConfigurationError(f"perceptual levels {list(levels)} must index taps {taps}")
    selected = sorted({taps[i] for i in levels})
    real = probe.forward_features(image, selected)
    fake = probe.forward_features(recon, selected)
    distances = [
        F.mse_loss(a.grid, b.grid) for a, b in zip(real.levels, fake.levels, strict=True)
    ]
    return torch.stack(distances).mean()


__all__ = ["perceptual_proxy"]
