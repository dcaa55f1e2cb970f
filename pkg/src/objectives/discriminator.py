"""Frozen-feature discriminator and the hinge adversarial objective."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from src.encoder.backbone import FrozenViTEncoder
from src.errors import UsageError


class FeatureDiscriminator(nn.Module):
    """Frozen encoder trunk plus a trainable 2-layer per-patch scoring head."""

    def __init__(self, trunk: FrozenViTEncoder, hidden: int = 128) -> None:
        super().__init__()
        if not trunk.is_frozen:
            raise UsageError("The discriminator trunk must be frozen")
        self.trunk = trunk
        self.head = nn.Sequential(
            nn.Linear(trunk.config.width, hidden),
            nn.LeakyReLU(0.2),
            nn.Linear(hidden, 1),
        )

    def head_parameters(self) -> list[nn.Parameter]:
        return list(self.head.parameters())

    @torch.no_grad()
    def zero_head(self) -> None:
        """Make D ≡ 0."""
        last = self.head[-1]
        last.weight.zero_()
        last.bias.zero_()

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """Per-patch scores ``(B, H·W)``."""
        grid = self.trunk.forward_features(images).deepest.grid
        return self.head(grid).flatten(1)


@dataclass(frozen=True)
class AdversarialLosses:
    gen: torch.Tensor
    disc: torch.Tensor


def adversarial_losses(
    recon: torch.Tensor,
    image: torch.Tensor,
    disc: FeatureDiscriminator,
    *,
    iteration: int,
    gan_start_iter: int,
) -> AdversarialLosses:
    """Hinge losses; both are exactly zero before ``gan_start_iter``.

    ``disc`` sees a detached reconstruction, so only the head learns from it;
    ``gen`` back-propagates into *recon* through the frozen trunk.
    """
    if iteration < gan_start_iter:
        zero = recon.new_zeros(())
        return AdversarialLosses(gen=zero, disc=zero)
    real_scores = disc(image)
    fake_scores = disc(recon.detach())
    disc_loss = F.relu(1.0 - real_scores).mean() + F.relu(1.0 + fake_scores).mean()
    gen_loss = -disc(recon).mean()
    return AdversarialLosses(gen=gen_loss, disc=disc_loss)


__all__ = ["AdversarialLosses", "FeatureDiscriminator", "adversarial_losses"]
