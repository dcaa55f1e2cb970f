"""Linear-path flow-matching objective with shifted uniform timesteps."""

from __future__ import annotations

import torch
from torch import nn

from src.errors import NumericError, UsageError
from src.generators.ar.train import drop_classes
from src.generators.flow.ema import ema_update
from src.generators.flow.model import FlowDenoiser
from src.generators.flow.schedule import shift_timestep
from src.generators.flow.stats import LatentStats, NormalizedLatents


def interpolate(z: torch.Tensor, noise: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    """``z_t = (1 − t)·z + t·ε`` with ``t`` broadcast per sample."""
    t = t.view(-1, *([1] * (z.ndim - 1)))
    return (1 - t) * z + t * noise


def flow_loss(
    model: FlowDenoiser,
    latents: NormalizedLatents,
    class_ids: torch.Tensor,
    stats: LatentStats,
    *,
    drop_prob: float = 0.0,
    noise: torch.Tensor | None = None,
    t: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Mean squared error between predicted and target velocity ``ε − z``.

    ``noise`` and ``t`` (already shifted) may be fixed by the caller; otherwise
    ``t`` is drawn uniformly and shifted with the model's config.

    Raises:
        UsageError: *latents* is not a :class:`NormalizedLatents` made with *stats*.
    """
    if not isinstance(latents, NormalizedLatents):
        raise UsageError("flow_loss needs latents produced by normalize_latents")
    if latents.fingerprint != stats.fingerprint:
        raise UsageError(
            f"Latents were normalised with stats {latents.fingerprint}, "
            f"model expects {stats.fingerprint}"
        )
    z = latents.values
    B = z.shape[0]
    if noise is None:
        noise = torch.randn(z.shape, generator=generator).to(z)
    if t is None:
        uniform = torch.rand(B, generator=generator, dtype=torch.float64)
        t = shift_timestep(uniform, model.config.shift_n, model.config.shift_m).to(z)
    conditions = drop_classes(class_ids, model.null_class, drop_prob, generator)
    prediction = model(interpolate(z, noise, t), t, conditions)
    return (prediction - (noise - z)).pow(2).mean()


def flow_train_step(
    model: FlowDenoiser,
    ema_model: FlowDenoiser | None,
    optimizer: torch.optim.Optimizer,
    latents: NormalizedLatents,
    class_ids: torch.Tensor,
    stats: LatentStats,
    *,
    grad_clip: float = 1.0,
    generator: torch.Generator | None = None,
) -> float:
    """One optimisation step followed by an EMA update; returns the loss value."""
    model.train()
    loss = flow_loss(
        model,
        latents,
        class_ids,
        stats,
        drop_prob=model.config.class_drop_prob,
        generator=generator,
    )
    if not torch.isfinite(loss):
        raise NumericError(f"Flow loss is not finite: {loss.item()}")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    if ema_model is not None:
        ema_update(model, ema_model, model.config.ema_decay)
    return loss.item()


__all__ = ["flow_loss", "flow_train_step", "interpolate"]
