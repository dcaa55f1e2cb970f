"""Tokenizer losses and their composition ``L = α·L_AE + λ·L_sim``.

``L_AE = L2 + L_P + λ_G·L_G``. Discrete tokenizers add the codebook and
commitment terms as a separate latent regulariser; continuous tokenizers add
nothing (no KL term).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from src.bottleneck.quantizer import VQLosses
from src.configs.schemas import LossWeights, TokenizerMode
from src.errors import ConfigurationError, NumericError


BREAKDOWN_COLUMNS = ("l2", "perceptual", "gen", "codebook", "commit", "sim")


def pixel_l2(image: torch.Tensor, recon: torch.Tensor) -> torch.Tensor:
    """Mean squared error over every pixel and channel."""
    if image.shape != recon.shape:
        raise ConfigurationError(
            f"Image shapes differ: {tuple(image.shape)} vs {tuple(recon.shape)}"
        )
    return F.mse_loss(recon, image)


def feature_sim_loss(predicted: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean over grid cells of ``1 − cos(predicted, target)``.

    The target is detached; it is the frozen deepest encoder level.
    """
    if predicted.shape != target.shape:
        raise ConfigurationError(
            f"Feature shapes differ: {tuple(predicted.shape)} vs {tuple(target.shape)}"
        )
    cosine = F.cosine_similarity(predicted, target.detach(), dim=-1)
    return (1.0 - cosine).mean()


def _zero() -> torch.Tensor:
    return torch.zeros(())


@dataclass
class LossParts:
    """Unweighted loss terms of one tokenizer step."""

    l2: torch.Tensor = field(default_factory=_zero)
    perceptual: torch.Tensor = field(default_factory=_zero)
    gen: torch.Tensor = field(default_factory=_zero)
    sim: torch.Tensor = field(default_factory=_zero)
    vq: VQLosses | None = None


def total_tokenizer_loss(
    parts: LossParts,
    weights: LossWeights,
    mode: TokenizerMode,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted sum of all terms plus a per-term breakdown for logging.

    Breakdown values are the weighted contributions and ``breakdown["total"]``
    is ``float(total)``. The sum runs in float64, so the terms recompose to it
    within 1e-9. ``gen`` is already gated by the caller before the GAN starts.

    Raises:
        NumericError: A term is non-finite.
    """
    terms: dict[str, torch.Tensor] = {
        "l2": weights.alpha * parts.l2,
        "perceptual": weights.alpha * parts.perceptual,
        "gen": weights.alpha * weights.lambda_g * parts.gen,
        "sim": weights.lambda_sim * parts.sim,
    }
    if mode == "discrete" and parts.vq is not None:
        terms["codebook"] = parts.vq.codebook
        terms["commit"] = parts.vq.commitment
    total = sum(
        (value.double() for value in terms.values()),
        parts.l2.new_zeros((), dtype=torch.float64),
    )
    breakdown = {name: float(value.detach()) for name, value in terms.items()}
    for name in BREAKDOWN_COLUMNS:
        breakdown.setdefault(name, 0.0)
    bad = [name for name, value in breakdown.items() if not math.isfinite(value)]
    if bad:
        raise NumericError(f"Non-finite loss terms: {bad}")
    breakdown["total"] = float(total.detach())
    return total, breakdown


__all__ = [
    "BREAKDOWN_COLUMNS",
    "LossParts",
    "feature_sim_loss",
    "pixel_l2",
    "total_tokenizer_loss",
]
