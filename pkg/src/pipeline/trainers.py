"""Training loops for the tokenizer, the AR generator and the flow generator.

All three share :class:`LoopTrainer`: epochs over a loader whose order depends
only on ``(seed, epoch)``, a per-step CSV log, checkpoints every
``run.checkpoint_every`` epochs and at the end, and resume from any
checkpoint (mid-epoch included) with bit-identical continuation on a fixed
device and thread count.

Usage:
    uv run -m src.cli.tok train --config src/configs/desk.yaml
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import pandas as pd
import torch
from torch import nn
from torch.utils.data import DataLoader, Dataset, TensorDataset

from src.bottleneck.quantizer import UsageTracker
from src.configs.loader import dump_config
from src.configs.schemas import RunConfig
from src.errors import ModeError, NumericError, TrainingDivergedError
from src.generators.ar.model import ARTransformer
from src.generators.ar.train import ar_train_step
from src.generators.flow.ema import make_ema
from src.generators.flow.stats import NormalizedLatents, compute_latent_stats, normalize_latents
from src.generators.flow.train import flow_train_step
from src.objectives.discriminator import FeatureDiscriminator, adversarial_losses
from src.objectives.losses import BREAKDOWN_COLUMNS, LossParts, feature_sim_loss, pixel_l2, total_tokenizer_loss
from src.objectives.perceptual import perceptual_proxy
from src.pipeline.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from src.pipeline.data import ImageDataset, make_loader, set_loader_epoch
from src.pipeline.models import build_flow, build_optimizer, build_tokenizer
from src.pipeline.plots import write_loss_plot
from src.pipeline.token_io import write_tokens
from src.tokenizer.model import RegionTokenizer
from src.utils import get_device, seed_everything


logger = logging.getLogger(__name__)

TOKENIZER_LOG_COLUMNS = ("step", "epoch", *BREAKDOWN_COLUMNS, "total", "disc", "usage")
GENERATOR_LOG_COLUMNS = ("step", "epoch", "loss")


@dataclass(frozen=True)
class TrainResult:
    run_dir: Path
    checkpoint: Path
    log_path: Path
    losses: list[float]
    steps: int


class StepLog:
    """Per-step rows kept in memory, written with pandas."""

    def __init__(self, columns: Sequence[str], path: Path, loss_column: str) -> None:
        self.columns = list(columns)
        self.path = path
        self.loss_column = loss_column
        self.rows: list[dict[str, Any]] = []

    def append(self, row: dict[str, Any]) -> None:
        self.rows.append(row)

    @property
    def losses(self) -> list[float]:
        return [row[self.loss_column] for row in self.rows]

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=self.columns)

    def flush(self) -> Path:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.frame().to_csv(self.path, index=False, float_format="%.17g")
        return self.path


class LoopTrainer:
    """Shared epoch loop, logging, checkpointing and resume."""

    kind: str = ""
    log_columns: Sequence[str] = GENERATOR_LOG_COLUMNS
    loss_column: str = "loss"

    def __init__(self, config: RunConfig, run_dir: Path, *, device: torch.device | None = None) -> None:
        self.config = config
        self.run_dir = Path(run_dir)
        self.device = device or get_device(config.run.device)
        self.generator = seed_everything(config.run.seed)
        self.step = 0
        self.epoch = 0
        self.batch_in_epoch = 0
        self.last_checkpoint: Path | None = None
        self.log = StepLog(self.log_columns, self.run_dir / f"{self.kind}_log.csv", self.loss_column)

    # Subclass hooks.
    def dataset(self) -> Dataset:
        raise NotImplementedError

    def train_batch(self, batch: Sequence[torch.Tensor]) -> dict[str, Any]:
        raise NotImplementedError

    def modules(self) -> dict[str, nn.Module]:
        raise NotImplementedError

    def optimizers(self) -> dict[str, torch.optim.Optimizer]:
        raise NotImplementedError

    def checkpoint_metadata(self) -> dict[str, Any]:
        return {}

    def latent_stats(self) -> dict[str, Any] | None:
        return None

    def on_epoch_start(self) -> None:
        """Hook run before the first batch of every epoch."""

    # Checkpointing.
    def save(self, name: str | None = None) -> Path:
        path = self.run_dir / "checkpoints" / (name or f"{self.kind}-step{self.step:07d}.rtck")
        self.last_checkpoint = save_checkpoint(
            path,
            kind=self.kind,
            config=dump_config(self.config),
            modules=self.modules(),
            optimizers=self.optimizers(),
            iteration=self.step,
            epoch=self.epoch,
            batch_in_epoch=self.batch_in_epoch,
            latent_stats=self.latent_stats(),
            rng={"torch": torch.get_rng_state(), "trainer": self.generator.get_state()},
            metadata=self.checkpoint_metadata(),
        )
        return self.last_checkpoint

    def restore(self, checkpoint: Checkpoint | str | Path) -> None:
        """Load model, optimizer, counter and RNG state from a checkpoint."""
        if not isinstance(checkpoint, Checkpoint):
            checkpoint = load_checkpoint(checkpoint, expected_kind=self.kind)
        for name, module in self.modules().items():
            module.load_state_dict(checkpoint.module_state(name))
        for name, optimizer in self.optimizers().items():
            optimizer.load_state_dict(checkpoint.optimizer_state(name))
        torch_state = checkpoint.rng_state("torch")
        if torch_state is not None:
            torch.set_rng_state(torch_state)
        trainer_state = checkpoint.rng_state("trainer")
        if trainer_state is not None:
            self.generator.set_state(trainer_state)
        self.step = checkpoint.iteration
        self.epoch = checkpoint.epoch
        self.batch_in_epoch = checkpoint.batch_in_epoch
        logger.info(
            "Resumed %s at step %d (epoch %d, batch %d)",
            self.kind,
            self.step,
            self.epoch,
            self.batch_in_epoch,
        )

    # Loop.
    def _done(self) -> bool:
        max_steps = self.config.run.max_steps
        return max_steps is not None and self.step >= max_steps

    def _run_step(self, batch: Sequence[torch.Tensor]) -> None:
        try:
            row = self.train_batch(batch)
        except NumericError as exc:
            raise TrainingDivergedError(self.step + 1, self.last_checkpoint) from exc
        self.step += 1
        self.batch_in_epoch += 1
        self.log.append({"step": self.step, "epoch": self.epoch, **row})
        if self.step % self.config.run.log_every == 0:
            logger.info(
                "%s step %d epoch %d: %s %.5f",
                self.kind,
                self.step,
                self.epoch,
                self.loss_column,
                row[self.loss_column],
            )

    def fit(self) -> TrainResult:
        run = self.config.run
        loader: DataLoader = make_loader(
            self.dataset(),
            self.config.data.batch_size,
            shuffle=True,
            seed=run.seed,
            num_workers=0 if run.deterministic else self.config.data.num_workers,
        )
        batches_per_epoch = math.ceil(len(loader.dataset) / self.config.data.batch_size)
        logger.info(
            "🚀 Training %s: %d epochs × %d batches, starting at step %d",
            self.kind,
            run.epochs,
            batches_per_epoch,
            self.step,
        )
        while self.epoch < run.epochs and not self._done():
            set_loader_epoch(loader, self.epoch, self.batch_in_epoch)
            if self.batch_in_epoch == 0:
                self.on_epoch_start()
            for batch in loader:
                self._run_step(batch)
                if self._done():
                    break
            if self.batch_in_epoch >= batches_per_epoch:
                self.epoch += 1
                self.batch_in_epoch = 0
                if self.epoch % run.checkpoint_every == 0 and self.epoch < run.epochs:
                    self.save()
        final = self.save(f"{self.kind}.rtck")
        log_path = self.log.flush()
        if self.log.rows:
            write_loss_plot(
                self.log.frame(),
                [c for c in self.log_columns if c not in ("step", "epoch", "usage")],
                self.run_dir / f"{self.kind}_loss.html",
                title=f"{self.kind} training loss",
            )
        logger.info("✅ %s training finished at step %d", self.kind, self.step)
        return TrainResult(self.run_dir, final, log_path, self.log.losses, self.step)


class TokenizerTrainer(LoopTrainer):
    """Tokenizer loop with the generator/discriminator alternation."""

    kind = "tokenizer"
    log_columns = TOKENIZER_LOG_COLUMNS
    loss_column = "total"

    def __init__(
        self,
        config: RunConfig,
        train_set: ImageDataset,
        run_dir: Path,
        *,
        device: torch.device | None = None,
    ) -> None:
        super().__init__(config, run_dir, device=device)
        self.train_set = train_set.with_mode(True)
        self.tokenizer = build_tokenizer(config, train_set, generator=self.generator).to(self.device)
        self.discriminator = FeatureDiscriminator(self.tokenizer.encoder).to(self.device)
        self.optimizer = build_optimizer(self.tokenizer.trainable_parameters(), config.optimizer)
        self.disc_optimizer = build_optimizer(self.discriminator.head_parameters(), config.optimizer)
        self.usage = (
            UsageTracker(self.tokenizer.codebook_size) if self.tokenizer.mode == "discrete" else None
        )

    def dataset(self) -> Dataset:
        return self.train_set

    def modules(self) -> dict[str, nn.Module]:
        return {"tokenizer": self.tokenizer, "discriminator_head": self.discriminator.head}

    def optimizers(self) -> dict[str, torch.optim.Optimizer]:
        return {"tokenizer": self.optimizer, "discriminator": self.disc_optimizer}

    def checkpoint_metadata(self) -> dict[str, Any]:
        return {
            "mode": self.tokenizer.mode,
            "token_count": self.tokenizer.token_count,
            "num_classes": self.train_set.num_classes,
        }

    def on_epoch_start(self) -> None:
        if self.usage is not None:
            self.usage = UsageTracker(self.tokenizer.codebook_size)

    def loss_parts(self, images: torch.Tensor) -> tuple[LossParts, torch.Tensor]:
        """Unweighted terms of one step plus the discriminator loss."""
        weights = self.config.loss
        out = self.tokenizer(images)
        adversarial = adversarial_losses(
            out.recon,
            images,
            self.discriminator,
            iteration=self.step,
            gan_start_iter=weights.gan_start_iter,
        )
        perceptual = (
            perceptual_proxy(images, out.recon, self.tokenizer.encoder, weights.perceptual_levels)
            if weights.perceptual
            else images.new_zeros(())
        )
        if self.usage is not None:
            self.usage.update(out.encoded.indices)
        parts = LossParts(
            l2=pixel_l2(images, out.recon),
            perceptual=perceptual,
            gen=adversarial.gen,
            sim=feature_sim_loss(out.features, out.target),
            vq=out.encoded.vq,
        )
        return parts, adversarial.disc

    def train_batch(self, batch: Sequence[torch.Tensor]) -> dict[str, Any]:
        images = batch[0].to(self.device)
        clip = self.config.optimizer.grad_clip
        self.tokenizer.train()
        parts, disc_loss = self.loss_parts(images)
        total, breakdown = total_tokenizer_loss(parts, self.config.loss, self.tokenizer.mode)
        self.optimizer.zero_grad(set_to_none=True)
        total.backward()
        nn.utils.clip_grad_norm_(self.tokenizer.trainable_parameters(), clip)
        self.optimizer.step()

        disc_value = 0.0
        if self.step >= self.config.loss.gan_start_iter:
            self.disc_optimizer.zero_grad(set_to_none=True)
            disc_loss.backward()
            nn.utils.clip_grad_norm_(self.discriminator.head_parameters(), clip)
            self.disc_optimizer.step()
            disc_value = disc_loss.item()
            if not math.isfinite(disc_value):
                raise NumericError(f"Discriminator loss is not finite: {disc_value}")
        return {
            **breakdown,
            "disc": disc_value,
            "usage": self.usage.fraction if self.usage is not None else None,
        }


@torch.no_grad()
def encode_dataset(
    tokenizer: RegionTokenizer,
    dataset: ImageDataset,
    batch_size: int,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Tokenize un-augmented images: ``(ids or latents, labels)``."""
    tokenizer.eval()
    device = next(tokenizer.parameters()).device
    loader = DataLoader(dataset.with_mode(False), batch_size=batch_size, shuffle=False)
    outputs, labels = [], []
    for images, target in loader:
        encoded = tokenizer.encode(images.to(device))
        outputs.append((encoded.indices if tokenizer.mode == "discrete" else encoded.latent).cpu())
        labels.append(target)
    return torch.cat(outputs), torch.cat(labels)


class ARTrainer(LoopTrainer):
    """Next-token training on the frozen tokenizer's codebook ids."""

    kind = "ar"

    def __init__(
        self,
        config: RunConfig,
        train_set: ImageDataset,
        run_dir: Path,
        *,
        tokenizer: RegionTokenizer,
        tokenizer_hash: str,
        device: torch.device | None = None,
    ) -> None:
        if tokenizer.mode != "discrete":
            raise ModeError("AR training needs a discrete tokenizer checkpoint")
        super().__init__(config, run_dir, device=device)
        self.tokenizer = tokenizer.requires_grad_(False).eval().to(self.device)
        self.tokenizer_hash = tokenizer_hash
        self.num_classes = train_set.num_classes
        indices, labels = encode_dataset(self.tokenizer, train_set, config.data.batch_size)
        write_tokens(self.run_dir / "train_tokens.u32", labels, indices, self.tokenizer.codebook_size)
        self.tokens = TensorDataset(labels, indices)
        self.model = ARTransformer(
            config.ar,
            codebook_size=self.tokenizer.codebook_size,
            num_classes=self.num_classes,
            token_count=self.tokenizer.token_count,
        ).to(self.device)
        self.optimizer = build_optimizer(list(self.model.parameters()), config.optimizer)

    def dataset(self) -> Dataset:
        return self.tokens

    def modules(self) -> dict[str, nn.Module]:
        return {"ar": self.model}

    def optimizers(self) -> dict[str, torch.optim.Optimizer]:
        return {"ar": self.optimizer}

    def checkpoint_metadata(self) -> dict[str, Any]:
        return {
            "tokenizer_hash": self.tokenizer_hash,
            "codebook_size": self.tokenizer.codebook_size,
            "num_classes": self.num_classes,
            "token_count": self.tokenizer.token_count,
        }

    def train_batch(self, batch: Sequence[torch.Tensor]) -> dict[str, Any]:
        class_ids, indices = (t.to(self.device) for t in batch)
        loss = ar_train_step(
            self.model,
            self.optimizer,
            class_ids,
            indices,
            grad_clip=self.config.optimizer.grad_clip,
            generator=self.generator,
        )
        return {"loss": loss}


class FlowTrainer(LoopTrainer):
    """Velocity-prediction training on normalised continuous latents."""

    kind = "flow"

    def __init__(
        self,
        config: RunConfig,
        train_set: ImageDataset,
        run_dir: Path,
        *,
        tokenizer: RegionTokenizer,
        tokenizer_hash: str,
        device: torch.device | None = None,
    ) -> None:
        if tokenizer.mode != "continuous":
            raise ModeError("Flow training needs a continuous tokenizer checkpoint")
        super().__init__(config, run_dir, device=device)
        self.tokenizer = tokenizer.requires_grad_(False).eval().to(self.device)
        self.tokenizer_hash = tokenizer_hash
        self.num_classes = train_set.num_classes
        latents, labels = encode_dataset(self.tokenizer, train_set, config.data.batch_size)
        self.stats = compute_latent_stats(latents)
        self.latents = TensorDataset(normalize_latents(latents, self.stats).values, labels)
        self.model = build_flow(
            config,
            latent_dim=self.tokenizer.latent_dim,
            token_count=self.tokenizer.token_count,
            num_classes=self.num_classes,
        ).to(self.device)
        self.ema = make_ema(self.model) if config.flow.use_ema else None
        self.optimizer = build_optimizer(list(self.model.parameters()), config.optimizer)

    def dataset(self) -> Dataset:
        return self.latents

    def modules(self) -> dict[str, nn.Module]:
        modules: dict[str, nn.Module] = {"flow": self.model}
        if self.ema is not None:
            modules["flow_ema"] = self.ema
        return modules

    def optimizers(self) -> dict[str, torch.optim.Optimizer]:
        return {"flow": self.optimizer}

    def latent_stats(self) -> dict[str, Any] | None:
        return self.stats.to_dict()

    def checkpoint_metadata(self) -> dict[str, Any]:
        return {
            "tokenizer_hash": self.tokenizer_hash,
            "latent_dim": self.tokenizer.latent_dim,
            "num_classes": self.num_classes,
            "token_count": self.tokenizer.token_count,
        }

    def train_batch(self, batch: Sequence[torch.Tensor]) -> dict[str, Any]:
        values, class_ids = (t.to(self.device) for t in batch)
        loss = flow_train_step(
            self.model,
            self.ema,
            self.optimizer,
            NormalizedLatents(values, self.stats.fingerprint),
            class_ids,
            self.stats,
            grad_clip=self.config.optimizer.grad_clip,
            generator=self.generator,
        )
        return {"loss": loss}


__all__ = [
    "ARTrainer",
    "FlowTrainer",
    "GENERATOR_LOG_COLUMNS",
    "LoopTrainer",
    "StepLog",
    "TOKENIZER_LOG_COLUMNS",
    "TokenizerTrainer",
    "TrainResult",
    "encode_dataset",
]
