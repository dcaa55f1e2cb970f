"""Brief masked-patch regression warm-up for the stand-in encoder.

A fraction of patch embeddings is swapped for a learnable mask token and a
linear head regresses the masked patches' pixels from the last layer. After
``steps`` updates the encoder is frozen for good.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Iterator

import torch
import torch.nn.functional as F
from torch import nn

from src.encoder.backbone import FrozenViTEncoder
from src.errors import UsageError


logger = logging.getLogger(__name__)


def patchify(images: torch.Tensor, patch: int) -> torch.Tensor:
    """``(B, 3, S, S)`` → ``(B, (S/p)², p·p·3)`` in row-major patch order."""
    B, C, H, W = images.shape
    x = images.reshape(B, C, H // patch, patch, W // patch, patch)
    return x.permute(0, 2, 4, 3, 5, 1).reshape(B, (H // patch) * (W // patch), -1)


def _cycle(batches: Iterable[torch.Tensor]) -> Iterator[torch.Tensor]:
    while True:
        empty = True
        for batch in batches:
            empty = False
            yield batch
        if empty:
            raise UsageError("Warm-up received an empty image source")


def masked_patch_warmup(
    encoder: FrozenViTEncoder,
    batches: Iterable[torch.Tensor],
    *,
    steps: int,
    mask_ratio: float = 0.5,
    lr: float = 1e-4,
    generator: torch.Generator | None = None,
) -> FrozenViTEncoder:
    """Train *encoder* briefly by masked patch regression, then freeze it.

    Args:
        encoder: An encoder that has not been frozen yet.
        batches: Re-iterable source of ``(B, 3, S, S)`` image batches in [0, 1].
        steps: Number of optimisation steps (0 freezes immediately).
        mask_ratio: Fraction of patches replaced by the mask token.
        lr: AdamW learning rate.
        generator: RNG for the patch masks.

    Returns:
        The same encoder, frozen.
    """
    if encoder.is_frozen:
        raise UsageError("Encoder is already frozen; warm-up must run before freeze()")
    config = encoder.config
    device = next(encoder.parameters()).device
    mask_token = nn.Parameter(torch.zeros(1, 1, config.width, device=device))
    head = nn.Linear(config.width, config.patch_size**2 * 3).to(device)
    params = [*encoder.parameters(), mask_token, *head.parameters()]
    optimizer = torch.optim.AdamW(params, lr=lr, betas=(0.9, 0.95), weight_decay=0.05)
    skip = 1 + config.register_count
    encoder.train()
    source = _cycle(batches)
    for step in range(steps):
        images = next(source).to(device)
        B = images.shape[0]
        n_patches = config.grid_size**2
        noise = torch.rand(B, n_patches, generator=generator).to(device)
        patch_mask = noise < mask_ratio
        tokens = encoder.embed(images, patch_mask, mask_token)
        for block in encoder.blocks:
            tokens = block(tokens)
        pred = head(encoder.norm(tokens)[:, skip:])
        target = patchify(images, config.patch_size)
        loss = F.mse_loss(pred[patch_mask], target[patch_mask])
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        if step % 50 == 0 or step == steps - 1:
            logger.info("warm-up step %d/%d masked-patch mse=%.5f", step + 1, steps, loss.item())
    return encoder.freeze()


__all__ = ["masked_patch_warmup", "patchify"]
