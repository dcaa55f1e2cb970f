"""Left-to-right sampling with classifier-free guidance.

No key/value cache is kept: every step re-runs the full prefix, so cached
and uncached logits cannot differ.
"""

from __future__ import annotations

import logging

import torch

from src.errors import InputError
from src.generators.ar.model import ARTransformer


logger = logging.getLogger(__name__)


def guided_logits(
    model: ARTransformer,
    class_ids: torch.Tensor,
    tokens: torch.Tensor,
    cfg_scale: float,
) -> torch.Tensor:
    """Next-token logits ``uncond + s·(cond − uncond)`` for the last position.

    ``s == 1`` returns the conditional logits without an unconditional pass.
    """
    cond = model(class_ids, tokens)[:, -1]
    if cfg_scale == 1.0:
        return cond
    null = torch.full_like(class_ids, model.null_class)
    uncond = model(null, tokens)[:, -1]
    return uncond + cfg_scale * (cond - uncond)


def pick_tokens(
    logits: torch.Tensor,
    *,
    temperature: float = 1.0,
    top_k: int | None = None,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Greedy when ``temperature == 0`` or ``top_k == 1``; otherwise top-k sampling."""
    if temperature == 0 or top_k == 1:
        return logits.argmax(dim=-1)
    scaled = logits / temperature
    if top_k is not None and top_k < scaled.shape[-1]:
        kth = torch.topk(scaled, top_k, dim=-1).values[..., -1:]
        scaled = scaled.masked_fill(scaled < kth, float("-inf"))
    probs = torch.softmax(scaled.float(), dim=-1)
    return torch.multinomial(probs.cpu(), 1, generator=generator).squeeze(-1).to(logits.device)


@torch.no_grad()
def ar_sample(
    model: ARTransformer,
    class_ids: torch.Tensor,
    *,
    cfg_scale: float = 1.0,
    top_k: int | None = None,
    temperature: float = 1.0,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Sample ``(B, N)`` codebook ids for each class in *class_ids*.

    Raises:
        InputError: A class id is not a real class or ``cfg_scale < 0``.
    """
    if cfg_scale < 0:
        raise InputError(f"cfg_scale must be ≥ 0, got {cfg_scale}")
    model.check_classes(class_ids, allow_null=False)
    model.eval()
    tokens = class_ids.new_zeros(class_ids.shape[0], 0)
    for _ in range(model.token_count):
        logits = guided_logits(model, class_ids, tokens, cfg_scale)
        step = pick_tokens(logits, temperature=temperature, top_k=top_k, generator=generator)
        tokens = torch.cat([tokens, step[:, None]], dim=1)
    return tokens


__all__ = ["ar_sample", "guided_logits", "pick_tokens"]
