"""Next-token objective with class-condition dropout."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from src.errors import InputError, NumericError
from src.generators.ar.model import ARTransformer


def drop_classes(
    class_ids: torch.Tensor,
    null_class: int,
    prob: float,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Replace each class id by *null_class* with probability *prob*."""
    if prob <= 0:
        return class_ids
    mask = torch.rand(class_ids.shape, generator=generator) < prob
    return torch.where(mask.to(class_ids.device), torch.full_like(class_ids, null_class), class_ids)


def ar_loss(
    model: ARTransformer,
    class_ids: torch.Tensor,
    indices: torch.Tensor,
    *,
    drop_prob: float = 0.0,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Cross-entropy over the ``N`` image positions; the class token is input only."""
    model.check_classes(class_ids, allow_null=False)
    model.check_tokens(indices)
    if indices.shape[-1] != model.token_count:
        raise InputError(f"Expected {model.token_count} ids per sequence, got {indices.shape[-1]}")
    conditions = drop_classes(class_ids, model.null_class, drop_prob, generator)
    logits = model(conditions, indices[:, :-1])
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), indices.reshape(-1))


def ar_train_step(
    model: ARTransformer,
    optimizer: torch.optim.Optimizer,
    class_ids: torch.Tensor,
    indices: torch.Tensor,
    *,
    grad_clip: float = 1.0,
    generator: torch.Generator | None = None,
) -> float:
    """One optimisation step; returns the loss value."""
    model.train()
    loss = ar_loss(
        model,
        class_ids,
        indices,
        drop_prob=model.config.class_drop_prob,
        generator=generator,
    )
    if not torch.isfinite(loss):
        raise NumericError(f"AR loss is not finite: {loss.item()}")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    return loss.item()


__all__ = ["ar_loss", "ar_train_step", "drop_classes"]
