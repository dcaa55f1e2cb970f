from src.generators.flow.ema import ema_update, make_ema
from src.generators.flow.model import FlowDenoiser
from src.generators.flow.sample import euler_integrate, euler_sample, guided_velocity
from src.generators.flow.schedule import euler_timesteps, shift_alpha, shift_timestep
from src.generators.flow.stats import (
    LatentStats,
    NormalizedLatents,
    compute_latent_stats,
    denormalize_latents,
    normalize_latents,
)
from src.generators.flow.train import flow_loss, flow_train_step, interpolate


__all__ = [
    "FlowDenoiser",
    "LatentStats",
    "NormalizedLatents",
    "compute_latent_stats",
    "denormalize_latents",
    "ema_update",
    "euler_integrate",
    "euler_sample",
    "euler_timesteps",
    "flow_loss",
    "flow_train_step",
    "guided_velocity",
    "interpolate",
    "make_ema",
    "normalize_latents",
    "shift_alpha",
    "shift_timestep",
]
