"""Euler integration of the learned velocity field from noise to data."""

from __future__ import annotations

from collections.abc import Callable

import torch

from src.bottleneck.continuous import ContinuousLatent
from src.errors import InputError
from src.generators.flow.model import FlowDenoiser
from src.generators.flow.schedule import euler_timesteps
from src.generators.flow.stats import LatentStats, denormalize_latents


VelocityFn = Callable[[torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]


def guided_velocity(
    model: VelocityFn,
    z: torch.Tensor,
    t: torch.Tensor,
    class_ids: torch.Tensor,
    guidance: float,
    null_class: int,
) -> torch.Tensor:
    """``v_uncond + s·(v_cond − v_uncond)``; ``s == 1`` skips the unconditional pass."""
    cond = model(z, t, class_ids)
    if guidance == 1.0:
        return cond
    uncond = model(z, t, torch.full_like(class_ids, null_class))
    return uncond + guidance * (cond - uncond)


@torch.no_grad()
def euler_integrate(
    model: VelocityFn,
    noise: torch.Tensor,
    class_ids: torch.Tensor,
    *,
    steps: int,
    guidance: float,
    null_class: int,
    shift_n: float,
    shift_m: float,
) -> torch.Tensor:
    """Integrate ``dz/dt = v̂`` from ``t = 1`` to ``t = 0`` on the shifted grid."""
    times = euler_timesteps(steps, shift_n, shift_m, dtype=noise.dtype).to(noise.device)
    z = noise
    for t_now, t_next in zip(times[:-1], times[1:], strict=True):
        t_batch = t_now.expand(z.shape[0])
        velocity = guided_velocity(model, z, t_batch, class_ids, guidance, null_class)
        z = z + (t_next - t_now) * velocity
    return z


def euler_sample(
    model: FlowDenoiser,
    class_ids: torch.Tensor,
    stats: LatentStats,
    *,
    guidance: float = 1.0,
    steps: int | None = None,
    generator: torch.Generator | None = None,
) -> ContinuousLatent:
    """Sample denormalised latents ``(B, N, d_lat)`` for *class_ids*.

    *model* may be the EMA copy.
    """
    if guidance < 0:
        raise InputError(f"guidance must be ≥ 0, got {guidance}")
    if class_ids.numel() and (class_ids.min() < 0 or class_ids.max() >= model.num_classes):
        raise InputError(f"Class id outside [0, {model.num_classes})")
    model.eval()
    config = model.config
    shape = (class_ids.shape[0], model.token_count, model.latent_dim)
    device = class_ids.device
    noise = torch.randn(shape, generator=generator).to(device)
    z = euler_integrate(
        model,
        noise,
        class_ids,
        steps=steps or config.euler_steps,
        guidance=guidance,
        null_class=model.null_class,
        shift_n=config.shift_n,
        shift_m=config.shift_m,
    )
    return ContinuousLatent(denormalize_latents(z, stats))


__all__ = ["euler_integrate", "euler_sample", "guided_velocity"]
