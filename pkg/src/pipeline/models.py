"""Build models from a run config and restore them from checkpoints."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
from torch import nn
from torch.utils.data import DataLoader

from src.configs.loader import validate_config
from src.configs.schemas import OptimizerConfig, RunConfig
from src.encoder.backbone import FrozenViTEncoder, build_encoder
from src.encoder.warmup import masked_patch_warmup
from src.errors import CheckpointError, UsageError
from src.evalsuite.proxy import ProxyExtractor
from src.generators.ar.model import ARTransformer
from src.generators.flow.ema import make_ema
from src.generators.flow.model import FlowDenoiser
from src.generators.flow.stats import LatentStats
from src.pipeline.checkpoint import Checkpoint
from src.pipeline.data import ImageDataset
from src.tokenizer.model import RegionTokenizer


logger = logging.getLogger(__name__)


def build_optimizer(params: list[nn.Parameter], config: OptimizerConfig) -> torch.optim.AdamW:
    """AdamW with decoupled weight decay and the configured betas."""
    return torch.optim.AdamW(
        params,
        lr=config.lr,
        betas=(config.beta1, config.beta2),
        weight_decay=config.weight_decay,
    )


def _warmup_batches(dataset: ImageDataset, batch_size: int) -> list[torch.Tensor]:
    loader = DataLoader(dataset.with_mode(False), batch_size=batch_size, shuffle=False)
    return [images for images, _ in loader]


def build_tokenizer(
    config: RunConfig,
    train_set: ImageDataset | None = None,
    *,
    generator: torch.Generator | None = None,
) -> RegionTokenizer:
    """Fresh tokenizer; ``encoder.init == "warmup"`` needs *train_set*."""
    encoder = build_encoder(config.encoder)
    if config.encoder.init == "warmup":
        if train_set is None:
            raise UsageError("encoder.init='warmup' needs training images")
        masked_patch_warmup(
            encoder,
            _warmup_batches(train_set, config.data.batch_size),
            steps=config.encoder.warmup_steps,
            mask_ratio=config.encoder.warmup_mask_ratio,
            generator=generator,
        )
    return RegionTokenizer(config.tokenizer, encoder, generator=generator)


def config_from_checkpoint(checkpoint: Checkpoint) -> RunConfig:
    return validate_config(checkpoint.config)


def tokenizer_from_checkpoint(checkpoint: Checkpoint) -> RegionTokenizer:
    """Rebuild a tokenizer (frozen encoder included) in eval mode."""
    if checkpoint.kind != "tokenizer":
        raise CheckpointError(f"Expected a tokenizer checkpoint, got {checkpoint.kind!r}")
    config = config_from_checkpoint(checkpoint)
    encoder = FrozenViTEncoder(config.encoder).freeze()
    tokenizer = RegionTokenizer(config.tokenizer, encoder)
    tokenizer.load_state_dict(checkpoint.module_state("tokenizer"))
    tokenizer.requires_grad_(False)
    return tokenizer.eval()


def ar_from_checkpoint(checkpoint: Checkpoint) -> ARTransformer:
    if checkpoint.kind != "ar":
        raise CheckpointError(f"Expected an AR checkpoint, got {checkpoint.kind!r}")
    config = config_from_checkpoint(checkpoint)
    meta = checkpoint.metadata
    model = ARTransformer(
        config.ar,
        codebook_size=meta["codebook_size"],
        num_classes=meta["num_classes"],
        token_count=meta["token_count"],
    )
    model.load_state_dict(checkpoint.module_state("ar"))
    return model.eval()


@dataclass(frozen=True)
class FlowBundle:
    model: FlowDenoiser
    ema: FlowDenoiser | None
    stats: LatentStats

    @property
    def sampler(self) -> FlowDenoiser:
        """EMA weights when present and enabled, raw weights otherwise."""
        if self.ema is not None and self.model.config.use_ema:
            return self.ema
        return self.model


def build_flow(config: RunConfig, *, latent_dim: int, token_count: int, num_classes: int) -> FlowDenoiser:
    return FlowDenoiser(config.flow, latent_dim=latent_dim, token_count=token_count, num_classes=num_classes)


def flow_from_checkpoint(checkpoint: Checkpoint) -> FlowBundle:
    if checkpoint.kind != "flow":
        raise CheckpointError(f"Expected a flow checkpoint, got {checkpoint.kind!r}")
    if checkpoint.latent_stats is None:
        raise CheckpointError("Flow checkpoint carries no latent statistics")
    config = config_from_checkpoint(checkpoint)
    meta = checkpoint.metadata
    model = build_flow(
        config,
        latent_dim=meta["latent_dim"],
        token_count=meta["token_count"],
        num_classes=meta["num_classes"],
    )
    model.load_state_dict(checkpoint.module_state("flow"))
    ema = None
    if checkpoint.has_module("flow_ema"):
        ema = make_ema(model)
        ema.load_state_dict(checkpoint.module_state("flow_ema"))
    return FlowBundle(model.eval(), ema, LatentStats.from_dict(checkpoint.latent_stats))


def proxy_from_checkpoint(checkpoint: Checkpoint) -> ProxyExtractor:
    if checkpoint.kind != "proxy":
        raise CheckpointError(f"Expected a proxy checkpoint, got {checkpoint.kind!r}")
    proxy = ProxyExtractor(checkpoint.metadata["num_classes"])
    proxy.load_state_dict(checkpoint.module_state("proxy"))
    return proxy.freeze()


__all__ = [
    "FlowBundle",
    "ar_from_checkpoint",
    "build_flow",
    "build_optimizer",
    "build_tokenizer",
    "config_from_checkpoint",
    "flow_from_checkpoint",
    "proxy_from_checkpoint",
    "tokenizer_from_checkpoint",
]
