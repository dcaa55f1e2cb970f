"""Pydantic schemas for every configurable part of the project.

- Centralizes configuration models to be imported by modules, CLI and tests.
- Every model forbids unknown keys, so a typo in a YAML file is a hard error.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, Field, field_validator, model_validator


TokenizerMode = Literal["discrete", "continuous"]
SamplerMode = Literal["region", "grid"]
RunMode = Literal[
    "tokenizer-discrete",
    "tokenizer-continuous",
    "ar",
    "flow",
    "eval",
    "sample",
    "probe",
]

_STRICT = {"extra": "forbid"}


def is_perfect_square(value: int) -> bool:
    """Return True when *value* is a positive perfect square."""
    return value > 0 and math.isqrt(value) ** 2 == value


class EncoderConfig(BaseModel):
    """Frozen ViT encoder plus the per-level projector that follows it."""

    image_size: int = Field(default=32, gt=0)
    patch_size: int = Field(default=4, gt=0)
    depth: int = Field(default=8, ge=1)
    width: int = Field(default=128, gt=0)
    heads: int = Field(default=4, ge=1)
    mlp_ratio: float = Field(default=4.0, gt=0)
    tap_layers: list[int] = Field(default_factory=lambda: [2, 4, 6, 8])
    register_count: int = Field(default=0, ge=0)
    pixel_mean: tuple[float, float, float] = (0.485, 0.456, 0.406)
    pixel_std: tuple[float, float, float] = (0.229, 0.224, 0.225)
    init: Literal["random", "warmup", "external"] = "random"
    warmup_steps: int = Field(default=200, ge=0)
    warmup_mask_ratio: float = Field(default=0.5, gt=0, lt=1)
    weights_manifest: Path | None = None
    projector_dim: int = Field(default=128, gt=0)
    shared_projector: bool = False
    projector_activation: Literal["gelu", "identity"] = "gelu"

    model_config = _STRICT

    @property
    def grid_size(self) -> int:
        """Patches per side of the feature grid."""
        return self.image_size // self.patch_size

    @field_validator("pixel_std")
    @classmethod
    def _positive_std(cls, value: tuple[float, float, float]) -> tuple[float, ...]:
        if any(s <= 0 for s in value):
            raise ValueError(f"pixel_std must be positive, got {value}")
        return value

    @model_validator(mode="after")
    def _check_shapes(self) -> EncoderConfig:
        if self.image_size % self.patch_size:
            raise ValueError(
                f"image_size {self.image_size} is not divisible by "
                f"patch_size {self.patch_size}"
            )
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")
        taps = self.tap_layers
        if not taps:
            raise ValueError("tap_layers must name at least one layer")
        if any(b <= a for a, b in zip(taps, taps[1:], strict=False)):
            raise ValueError(f"tap_layers must be strictly increasing, got {taps}")
        if taps[0] < 1 or taps[-1] > self.depth:
            raise ValueError(f"tap_layers {taps} must lie in [1, {self.depth}]")
        if taps[-1] != self.depth:
            raise ValueError(
                f"last tap {taps[-1]} must equal encoder depth {self.depth}"
            )
        if self.init == "external" and self.weights_manifest is None:
            raise ValueError("init='external' requires weights_manifest")
        return self


class SamplerConfig(BaseModel):
    """Region-adaptive deformable sampler (or the plain-grid pilot mode)."""

    mode: SamplerMode = "region"
    token_count: int = Field(default=64, gt=0)
    depth: int = Field(default=6, ge=1)
    heads: int = Field(default=2, ge=1)
    points: int = Field(default=4, ge=0)
    ffn_ratio: float = Field(default=4.0, gt=0)
    levels: list[int] | None = None

    model_config = _STRICT

    @field_validator("token_count")
    @classmethod
    def _square_token_count(cls, value: int) -> int:
        if not is_perfect_square(value):
            raise ValueError(f"token_count must be a perfect square, got {value}")
        return value


class BottleneckConfig(BaseModel):
    """Discrete codebook or continuous projection bottleneck."""

    kind: TokenizerMode = "discrete"
    codebook_size: int = Field(default=512, ge=1)
    code_dim: int = Field(default=12, ge=1)
    latent_dim: int = Field(default=32, ge=1)
    beta: float = Field(default=0.25, ge=0)

    model_config = _STRICT


class DecoderConfig(BaseModel):
    """Shared lightweight transformer, pixel head and feature head."""

    width: int = Field(default=128, gt=0)
    heads: int = Field(default=4, ge=1)
    mlp_ratio: float = Field(default=4.0, gt=0)
    d2: int = Field(default=6, ge=1)
    d3: int = Field(default=6, ge=1)
    register_count: int = Field(default=4, ge=0)
    shared_mask_token: bool = True
    shared_vit: bool = True
    pixel_channels: int = Field(default=64, gt=0)
    pixel_groups: int = Field(default=8, ge=1)

    model_config = _STRICT

    @model_validator(mode="after")
    def _check_heads(self) -> DecoderConfig:
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")
        if self.pixel_channels % self.pixel_groups:
            raise ValueError("pixel_channels must be divisible by pixel_groups")
        return self


class LossWeights(BaseModel):
    """Weights of L = α·L_AE + λ·L_sim and of the terms inside L_AE."""

    alpha: float = Field(default=1.0, ge=0)
    lambda_sim: float = Field(default=1.0, ge=0)
    lambda_g: float = Field(default=0.5, ge=0)
    beta: float = Field(default=0.25, ge=0)
    gan_start_iter: int = Field(default=2000, ge=0)
    perceptual: bool = True
    perceptual_levels: list[int] = Field(default_factory=lambda: [0, 1])

    model_config = _STRICT


class OptimizerConfig(BaseModel):
    """AdamW with decoupled weight decay and global-norm clipping."""

    lr: float = Field(default=1e-4, gt=0)
    weight_decay: float = Field(default=0.05, ge=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.95, ge=0, lt=1)
    grad_clip: float = Field(default=1.0, gt=0)

    model_config = _STRICT


class ARConfig(BaseModel):
    """Class-conditional causal transformer over codebook indices."""

    depth: int = Field(default=6, ge=1)
    width: int = Field(default=256, gt=0)
    heads: int = Field(default=4, ge=1)
    mlp_ratio: float = Field(default=4.0, gt=0)
    dropout: float = Field(default=0.1, ge=0, lt=1)
    class_drop_prob: float = Field(default=0.1, ge=0, le=1)
    rope_base: float = Field(default=10000.0, gt=0)
    cfg_scale: float = Field(default=1.0, ge=0)
    top_k: int | None = Field(default=None, ge=1)
    temperature: float = Field(default=1.0, ge=0)

    model_config = _STRICT

    @model_validator(mode="after")
    def _check_head_dim(self) -> ARConfig:
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")
        if (self.width // self.heads) % 4:
            raise ValueError(
                f"head dim {self.width // self.heads} must be divisible by 4 "
                "for 2D rotary embeddings"
            )
        return self


class FlowConfig(BaseModel):
    """Flow-matching denoiser, timestep shift and Euler sampler settings."""

    shift_n: float = Field(default=4096.0, gt=0)
    shift_m: float = Field(default=65536.0, gt=0)
    euler_steps: int = Field(default=100, ge=1)
    ema_decay: float = Field(default=0.9995, ge=0, le=1)
    class_drop_prob: float = Field(default=0.1, ge=0, le=1)
    depth: int = Field(default=6, ge=1)
    width: int = Field(default=256, gt=0)
    heads: int = Field(default=4, ge=1)
    mlp_ratio: float = Field(default=4.0, gt=0)
    guidance: float = Field(default=1.0, ge=0)
    use_ema: bool = True

    model_config = _STRICT


class DataConfig(BaseModel):
    """Dataset location, resolution and loader settings."""

    path: Path | None = None
    resolution: int = Field(default=32, gt=0)
    batch_size: int = Field(default=64, ge=1)
    num_workers: int = Field(default=0, ge=0)
    eval_fraction: float = Field(default=0.1, ge=0, lt=1)

    model_config = _STRICT


class RunSection(BaseModel):
    """What to run, how long, and where outputs go."""

    mode: RunMode = "tokenizer-discrete"
    seed: int = 0
    deterministic: bool = False
    device: str = "auto"
    epochs: int = Field(default=5, ge=0)
    max_steps: int | None = Field(default=None, ge=0)
    checkpoint_every: int = Field(default=1, ge=1)
    log_every: int = Field(default=50, ge=1)
    output_root: Path | None = None
    tokenizer_checkpoint: Path | None = None
    generator_checkpoint: Path | None = None
    resume: Path | None = None

    model_config = _STRICT


class EvalConfig(BaseModel):
    """Evaluation, proxy extractor and linear-probe settings."""

    pr_k: int = Field(default=3, ge=1)
    proxy_checkpoint: Path | None = None
    proxy_epochs: int = Field(default=5, ge=1)
    probe_epochs: int = Field(default=200, ge=1)
    probe_lr: float = Field(default=1e-2, gt=0)
    samples_per_class: int = Field(default=10, ge=1)

    model_config = _STRICT


class SweepConfig(BaseModel):
    """Token-count sweep driver settings."""

    token_counts: list[int] = Field(default_factory=lambda: [36, 64, 144, 256])
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2])

    model_config = _STRICT

    @field_validator("token_counts")
    @classmethod
    def _all_square(cls, value: list[int]) -> list[int]:
        bad = [n for n in value if not is_perfect_square(n)]
        if bad:
            raise ValueError(f"sweep token counts must be perfect squares: {bad}")
        return value


class TokenizerConfig(BaseModel):
    """The four sections that fully determine a tokenizer's architecture."""

    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    bottleneck: BottleneckConfig = Field(default_factory=BottleneckConfig)
    decoder: DecoderConfig = Field(default_factory=DecoderConfig)

    model_config = _STRICT

    @property
    def mode(self) -> TokenizerMode:
        """Discrete (codebook) or continuous (projection) bottleneck."""
        return self.bottleneck.kind

    @property
    def token_count(self) -> int:
        """Latent tokens per image: anchors in region mode, grid cells in pilot."""
        if self.sampler.mode == "grid":
            return self.encoder.grid_size**2
        return self.sampler.token_count

    @model_validator(mode="after")
    def _check_levels(self) -> TokenizerConfig:
        levels = self.sampler.levels
        n_taps = len(self.encoder.tap_layers)
        if levels is not None:
            if not levels or any(i < 0 or i >= n_taps for i in levels):
                raise ValueError(f"sampler.levels {levels} must index {n_taps} taps")
            if len(set(levels)) != len(levels):
                raise ValueError(f"sampler.levels {levels} contains duplicates")
        return self


class RunConfig(BaseModel):
    """Complete, validated configuration for one CLI invocation."""

    run: RunSection = Field(default_factory=RunSection)
    data: DataConfig = Field(default_factory=DataConfig)
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    bottleneck: BottleneckConfig = Field(default_factory=BottleneckConfig)
    decoder: DecoderConfig = Field(default_factory=DecoderConfig)
    loss: LossWeights = Field(default_factory=LossWeights)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    ar: ARConfig = Field(default_factory=ARConfig)
    flow: FlowConfig = Field(default_factory=FlowConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)

    model_config = _STRICT

    @model_validator(mode="after")
    def _apply_mode_defaults(self) -> RunConfig:
        if self.run.mode == "tokenizer-continuous":
            self.bottleneck.kind = "continuous"
        elif self.run.mode == "tokenizer-discrete":
            self.bottleneck.kind = "discrete"
        if self.bottleneck.kind == "continuous":
            # Continuous tokenizers use a single feature-path block and no
            # registers unless the file says otherwise.
            explicit = self.decoder.model_fields_set
            if "d3" not in explicit:
                self.decoder.d3 = 1
            if "register_count" not in explicit:
                self.decoder.register_count = 0
        if self.encoder.image_size != self.data.resolution:
            raise ValueError(
                f"encoder.image_size {self.encoder.image_size} must equal "
                f"data.resolution {self.data.resolution}"
            )
        self._sync_beta()
        # Building the view runs the cross-section level checks.
        _ = self.tokenizer
        return self

    def _sync_beta(self) -> None:
        """Keep the commitment weight identical in loss and bottleneck sections."""
        if "beta" in self.loss.model_fields_set:
            self.bottleneck.beta = self.loss.beta
        else:
            self.loss.beta = self.bottleneck.beta

    @property
    def tokenizer(self) -> TokenizerConfig:
        """Architecture sub-config used to build or rebuild a tokenizer."""
        return TokenizerConfig(
            encoder=self.encoder,
            sampler=self.sampler,
            bottleneck=self.bottleneck,
            decoder=self.decoder,
        )


__all__ = [
    "ARConfig",
    "BottleneckConfig",
    "DataConfig",
    "DecoderConfig",
    "EncoderConfig",
    "EvalConfig",
    "FlowConfig",
    "LossWeights",
    "OptimizerConfig",
    "RunConfig",
    "RunMode",
    "RunSection",
    "SamplerConfig",
    "SamplerMode",
    "SweepConfig",
    "TokenizerConfig",
    "TokenizerMode",
    "is_perfect_square",
]
