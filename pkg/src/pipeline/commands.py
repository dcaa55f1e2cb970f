"""Subcommand implementations behind ``tok``.

Each command takes a validated :class:`RunConfig`, writes its outputs into a
fresh run directory and records the exact command line in ``metadata.json``.
Checkpoints loaded for inference are only read, never rewritten.
"""

from __future__ import annotations

import logging
import statistics
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import pandas as pd
import torch
from torchvision.io import write_png
from torchvision.utils import make_grid, save_image

from src.config import DATA_DIR_ENV_VAR
from src.configs.loader import dump_config, with_overrides
from src.configs.schemas import RunConfig
from src.errors import CheckpointError, ConfigurationError, InputError, ModeError
from src.evalsuite.metrics import (
    classifier_score_from_logits,
    frechet_distance_from_features,
    precision_recall,
    psnr,
    ssim,
)
from src.evalsuite.probe import linear_probe, probe_representation, split_for_probe
from src.evalsuite.proxy import ProxyExtractor, extract_proxy_outputs, train_proxy_extractor
from src.evalsuite.reports import MetricReport
from src.evalsuite.usage import usage_report
from src.generators.ar.sample import ar_sample
from src.generators.flow.sample import euler_sample
from src.pipeline.checkpoint import Checkpoint, checkpoint_hash, load_checkpoint, save_checkpoint
from src.pipeline.data import ImageDataset, ingest_dataset, split_dataset
from src.pipeline.models import (
    ar_from_checkpoint,
    config_from_checkpoint,
    flow_from_checkpoint,
    proxy_from_checkpoint,
    tokenizer_from_checkpoint,
)
from src.pipeline.run_dir import create_run_dir, write_metadata
from src.pipeline.token_io import write_latents, write_tokens
from src.pipeline.trainers import ARTrainer, FlowTrainer, TokenizerTrainer, TrainResult
from src.tokenizer.model import RegionTokenizer
from src.utils import get_device, seed_everything


logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ("token_count", "psnr", "ssim", "usage", "seeds")
_TOKENIZER_MODES = {"tokenizer-discrete", "tokenizer-continuous"}


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def load_training_data(config: RunConfig) -> tuple[ImageDataset, ImageDataset]:
    """(train, held-out) views of the configured dataset."""
    if config.data.path is None:
        raise ConfigurationError(
            f"No dataset path: set data.path in the config or {DATA_DIR_ENV_VAR} in the environment"
        )
    dataset = ingest_dataset(config.data.path, config.data.resolution, seed=config.run.seed)
    if config.data.eval_fraction == 0:
        return dataset.with_mode(True), dataset.with_mode(False)
    train, held_out = split_dataset(dataset, config.data.eval_fraction, config.run.seed)
    return train.with_mode(True), held_out


def _read_tokenizer(path: Path | None) -> tuple[RegionTokenizer, str]:
    if path is None:
        raise ConfigurationError("run.tokenizer_checkpoint is required for this mode")
    checkpoint = load_checkpoint(path, expected_kind="tokenizer")
    return tokenizer_from_checkpoint(checkpoint), checkpoint_hash(path)


@torch.no_grad()
def reconstruct_images(
    tokenizer: RegionTokenizer,
    images: torch.Tensor,
    batch_size: int,
) -> tuple[torch.Tensor, torch.Tensor | None]:
    """Reconstructions in [0, 1] plus the codebook ids used (discrete mode)."""
    tokenizer.eval()
    device = next(tokenizer.parameters()).device
    recons, ids = [], []
    for start in range(0, images.shape[0], batch_size):
        batch = images[start : start + batch_size].to(device)
        out = tokenizer(batch, with_features=False)
        recons.append(out.recon.clamp(0, 1).cpu())
        if out.encoded.indices is not None:
            ids.append(out.encoded.indices.cpu())
    return torch.cat(recons), (torch.cat(ids) if ids else None)


def reconstruction_metrics(
    tokenizer: RegionTokenizer,
    images: torch.Tensor,
    batch_size: int,
) -> tuple[dict[str, float], torch.Tensor, torch.Tensor | None]:
    """PSNR, SSIM and (discrete) codebook usage on *images*, plus recons and ids."""
    recon, ids = reconstruct_images(tokenizer, images, batch_size)
    metrics = {"psnr": psnr(images, recon), "ssim": ssim(images, recon)}
    if ids is not None:
        metrics["usage"] = usage_report(ids, tokenizer.codebook_size).fraction
    return metrics, recon, ids


def resolve_proxy(config: RunConfig, dataset: ImageDataset, run_dir: Path) -> ProxyExtractor:
    """Load ``eval.proxy_checkpoint`` or train one on *dataset* and save it in *run_dir*."""
    if config.eval.proxy_checkpoint is not None:
        return proxy_from_checkpoint(load_checkpoint(config.eval.proxy_checkpoint, expected_kind="proxy"))
    images, labels = dataset.tensors()
    # Proxy weight init reads the global RNG.
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.run.seed)
        proxy = train_proxy_extractor(
            images,
            labels,
            dataset.num_classes,
            epochs=config.eval.proxy_epochs,
            generator=torch.Generator().manual_seed(config.run.seed),
        )
    save_checkpoint(
        run_dir / "proxy.rtck",
        kind="proxy",
        config=dump_config(config),
        modules={"proxy": proxy},
        metadata={"num_classes": dataset.num_classes, "version_hash": proxy.version_hash},
    )
    return proxy


def distribution_metrics(
    proxy: ProxyExtractor,
    real: torch.Tensor,
    fake: torch.Tensor,
    k: int,
) -> dict[str, float]:
    """Proxy Fréchet distance, classifier score and k-NN precision/recall."""
    real_feats, _ = extract_proxy_outputs(proxy, real)
    fake_feats, fake_logits = extract_proxy_outputs(proxy, fake)
    pr = precision_recall(real_feats, fake_feats, k=k)
    return {
        "frechet_distance": frechet_distance_from_features(real_feats, fake_feats),
        "inception_style_score": classifier_score_from_logits(fake_logits),
        "precision": pr.precision,
        "recall": pr.recall,
    }


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def train(config: RunConfig, *, command: list[str] | None = None, run_dir: Path | None = None) -> TrainResult:
    """Run the training loop selected by ``run.mode``."""
    mode = config.run.mode
    if mode not in _TOKENIZER_MODES and mode not in ("ar", "flow"):
        raise ConfigurationError(f"run.mode {mode!r} is not a training mode")
    device = get_device(config.run.device)
    run_dir = run_dir or create_run_dir(config, label=mode)
    run_dir.mkdir(parents=True, exist_ok=True)
    train_set, _ = load_training_data(config)
    if mode in _TOKENIZER_MODES:
        trainer = TokenizerTrainer(config, train_set, run_dir, device=device)
        sources: dict[str, str] = {}
    else:
        tokenizer, tok_hash = _read_tokenizer(config.run.tokenizer_checkpoint)
        trainer_cls = ARTrainer if mode == "ar" else FlowTrainer
        trainer = trainer_cls(
            config, train_set, run_dir, tokenizer=tokenizer, tokenizer_hash=tok_hash, device=device
        )
        sources = {"tokenizer": tok_hash}
    if config.run.resume is not None:
        trainer.restore(config.run.resume)
        sources["resumed_from"] = checkpoint_hash(config.run.resume)
    result = trainer.fit()
    write_metadata(
        run_dir,
        config,
        command=command,
        checkpoints={**sources, "output": checkpoint_hash(result.checkpoint)},
        extra={"steps": result.steps},
    )
    return result


# ---------------------------------------------------------------------------
# reconstruct
# ---------------------------------------------------------------------------


def reconstruct(
    config: RunConfig,
    checkpoint_path: Path,
    *,
    command: list[str] | None = None,
    run_dir: Path | None = None,
    grid_images: int = 16,
) -> Path:
    """Side-by-side grids plus reconstruction metrics on the held-out split."""
    checkpoint = load_checkpoint(checkpoint_path, expected_kind="tokenizer")
    tokenizer = tokenizer_from_checkpoint(checkpoint).to(get_device(config.run.device))
    ckpt_hash = checkpoint_hash(checkpoint_path)
    run_dir = run_dir or create_run_dir(config, label="reconstruct")
    run_dir.mkdir(parents=True, exist_ok=True)
    _, held_out = load_training_data(config)
    images, _ = held_out.tensors()

    metrics, recon, ids = reconstruction_metrics(tokenizer, images, config.data.batch_size)
    shown = min(grid_images, images.shape[0])
    pairs = torch.stack([images[:shown], recon[:shown]], dim=1).flatten(0, 1)
    save_image(make_grid(pairs, nrow=2 * min(shown, 4), padding=1), run_dir / "reconstructions.png")

    proxy = resolve_proxy(config, held_out, run_dir)
    report = MetricReport(ckpt_hash, proxy.version_hash, config.run.seed)
    report.extend(metrics, "heldout")
    report.extend(distribution_metrics(proxy, images, recon, config.eval.pr_k), "heldout")
    report.write_csv(run_dir / "reconstruction_metrics.csv")
    if ids is not None:
        usage_report(ids, tokenizer.codebook_size).write_csv(run_dir / "codebook_usage.csv")
    write_metadata(run_dir, config, command=command, checkpoints={"tokenizer": ckpt_hash})
    logger.info("✅ Reconstruction PSNR %.2f dB, SSIM %.4f", metrics["psnr"], metrics["ssim"])
    return run_dir


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GenerationResult:
    run_dir: Path
    images: torch.Tensor
    class_ids: torch.Tensor
    images_per_second: float


def _paired_tokenizer(config: RunConfig, generator_ckpt: Checkpoint) -> tuple[RegionTokenizer, str]:
    path = config_from_checkpoint(generator_ckpt).run.tokenizer_checkpoint or config.run.tokenizer_checkpoint
    tokenizer, tok_hash = _read_tokenizer(path)
    expected = generator_ckpt.metadata.get("tokenizer_hash")
    if expected is not None and expected != tok_hash:
        raise CheckpointError(
            f"Tokenizer checkpoint {path} (hash {tok_hash}) is not the one the generator "
            f"was trained on (hash {expected})"
        )
    return tokenizer, tok_hash


def _write_image_folder(root: Path, images: torch.Tensor, class_ids: torch.Tensor) -> None:
    pixels = (images.clamp(0, 1) * 255).round().to(torch.uint8).cpu()
    counters: dict[int, int] = {}
    for image, label in zip(pixels, class_ids.tolist(), strict=True):
        folder = root / f"{label:04d}"
        folder.mkdir(parents=True, exist_ok=True)
        index = counters.get(label, 0)
        write_png(image, str(folder / f"{index:05d}.png"))
        counters[label] = index + 1


@torch.no_grad()
def generate(
    config: RunConfig,
    checkpoint_path: Path,
    *,
    classes: list[int],
    count: int,
    guidance: float | None = None,
    command: list[str] | None = None,
    run_dir: Path | None = None,
) -> GenerationResult:
    """Sample *count* images per class from an AR or flow checkpoint."""
    if count < 1 or not classes:
        raise InputError(f"Need at least one class and count ≥ 1, got {classes} × {count}")
    checkpoint = load_checkpoint(checkpoint_path)
    if checkpoint.kind not in ("ar", "flow"):
        raise CheckpointError(
            f"generate needs an 'ar' or 'flow' checkpoint, {checkpoint_path} is {checkpoint.kind!r}"
        )
    device = get_device(config.run.device)
    tokenizer, tok_hash = _paired_tokenizer(config, checkpoint)
    tokenizer = tokenizer.to(device)
    expected_mode = "discrete" if checkpoint.kind == "ar" else "continuous"
    if tokenizer.mode != expected_mode:
        raise ModeError(
            f"{checkpoint.kind} sampling needs a {expected_mode} tokenizer, got a {tokenizer.mode} one"
        )
    run_dir = run_dir or create_run_dir(config, label="generate")
    run_dir.mkdir(parents=True, exist_ok=True)
    generator = seed_everything(config.run.seed)
    class_ids = torch.tensor(classes, dtype=torch.long).repeat_interleave(count).to(device)

    started = time.perf_counter()
    if checkpoint.kind == "ar":
        model = ar_from_checkpoint(checkpoint).to(device)
        scale = config.ar.cfg_scale if guidance is None else guidance
        logger.info("AR sampling, %s (s=%.3f)", "cfg:off" if scale == 1 else "cfg:on", scale)
        indices = ar_sample(
            model,
            class_ids,
            cfg_scale=scale,
            top_k=config.ar.top_k,
            temperature=config.ar.temperature,
            generator=generator,
        )
        images = tokenizer.decode_indices(indices)
        write_tokens(run_dir / "tokens.u32", class_ids.cpu(), indices.cpu(), tokenizer.codebook_size)
    else:
        bundle = flow_from_checkpoint(checkpoint)
        scale = config.flow.guidance if guidance is None else guidance
        logger.info("Flow sampling, %s (s=%.3f)", "cfg:off" if scale == 1 else "cfg:on", scale)
        latents = euler_sample(
            bundle.sampler.to(device),
            class_ids,
            bundle.stats,
            guidance=scale,
            steps=config.flow.euler_steps,
            generator=generator,
        )
        images = tokenizer.decode_latents(latents.tokens)
        write_latents(run_dir / "latents.npz", latents.tokens, class_ids)
    elapsed = time.perf_counter() - started
    throughput = class_ids.shape[0] / elapsed if elapsed > 0 else float("inf")

    _write_image_folder(run_dir / "images", images, class_ids.cpu())
    write_metadata(
        run_dir,
        config,
        command=command,
        checkpoints={checkpoint.kind: checkpoint_hash(checkpoint_path), "tokenizer": tok_hash},
        extra={
            "classes": classes,
            "count": count,
            "guidance": scale,
            "cfg": "off" if scale == 1 else "on",
            "images_per_second": throughput,
        },
    )
    logger.info("✅ Generated %d images at %.1f images/s", class_ids.shape[0], throughput)
    return GenerationResult(run_dir, images.cpu(), class_ids.cpu(), throughput)


# ---------------------------------------------------------------------------
# evaluate / probe
# ---------------------------------------------------------------------------


def evaluate(
    config: RunConfig,
    real: Path,
    fake: Path,
    *,
    command: list[str] | None = None,
    run_dir: Path | None = None,
) -> Path:
    """Distribution metrics between two image folders (or packed files)."""
    resolution = config.data.resolution
    real_set = ingest_dataset(real, resolution)
    fake_set = ingest_dataset(fake, resolution)
    run_dir = run_dir or create_run_dir(config, label="evaluate")
    run_dir.mkdir(parents=True, exist_ok=True)
    proxy = resolve_proxy(config, real_set, run_dir)
    source = config.run.generator_checkpoint
    source_hash = checkpoint_hash(source) if source is not None else "none"
    report = MetricReport(source_hash, proxy.version_hash, config.run.seed)
    metrics = distribution_metrics(proxy, real_set.tensors()[0], fake_set.tensors()[0], config.eval.pr_k)
    report.extend(metrics, "generated")
    path = report.write_csv(run_dir / "metrics.csv")
    write_metadata(
        run_dir,
        config,
        command=command,
        checkpoints={"generator": source_hash},
        extra={"real": str(real), "fake": str(fake), "proxy_hash": proxy.version_hash},
    )
    logger.info("✅ Proxy Fréchet distance %.6f", metrics["frechet_distance"])
    return path


def probe(
    config: RunConfig,
    checkpoint_path: Path,
    *,
    command: list[str] | None = None,
    run_dir: Path | None = None,
) -> Path:
    """Linear-probe accuracy of the tokenizer representation and of raw pixels."""
    checkpoint = load_checkpoint(checkpoint_path, expected_kind="tokenizer")
    tokenizer = tokenizer_from_checkpoint(checkpoint).to(get_device(config.run.device))
    ckpt_hash = checkpoint_hash(checkpoint_path)
    run_dir = run_dir or create_run_dir(config, label="probe")
    run_dir.mkdir(parents=True, exist_ok=True)
    if config.data.path is None:
        raise ConfigurationError(
            f"No dataset path: set data.path in the config or {DATA_DIR_ENV_VAR} in the environment"
        )
    dataset = ingest_dataset(config.data.path, config.data.resolution, seed=config.run.seed)
    images, labels = dataset.tensors()
    train_idx, test_idx = split_for_probe(
        dataset.count,
        config.data.eval_fraction or 0.2,
        torch.Generator().manual_seed(config.run.seed),
    )
    candidates = {
        "tokenizer": probe_representation(tokenizer, images, config.data.batch_size),
        "pixels": images.flatten(1),
    }
    report = MetricReport(ckpt_hash, "none", config.run.seed)
    for name, feats in candidates.items():
        result = linear_probe(
            feats[train_idx],
            labels[train_idx],
            feats[test_idx],
            labels[test_idx],
            num_classes=dataset.num_classes,
            epochs=config.eval.probe_epochs,
            lr=config.eval.probe_lr,
            generator=torch.Generator().manual_seed(config.run.seed),
        )
        report.add("linear_probe_top1", result.accuracy, name)
    path = report.write_csv(run_dir / "probe.csv")
    write_metadata(run_dir, config, command=command, checkpoints={"tokenizer": ckpt_hash})
    return path


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def sweep(config: RunConfig, *, command: list[str] | None = None, run_dir: Path | None = None) -> Path:
    """Train one tokenizer per (token count, seed) and tabulate held-out medians."""
    if config.run.mode not in _TOKENIZER_MODES:
        raise ConfigurationError(f"sweep trains tokenizers, run.mode is {config.run.mode!r}")
    if config.sampler.mode != "region":
        raise ConfigurationError("sweep varies sampler.token_count, which needs sampler.mode='region'")
    run_dir = run_dir or create_run_dir(config, label="sweep")
    run_dir.mkdir(parents=True, exist_ok=True)
    rows: list[dict[str, Any]] = []
    for token_count in config.sweep.token_counts:
        per_seed: list[dict[str, float]] = []
        for seed in config.sweep.seeds:
            cell = with_overrides(
                config,
                {"sampler": {"token_count": token_count}, "run": {"seed": seed, "resume": None}},
            )
            cell_dir = run_dir / f"n{token_count:04d}-seed{seed}"
            result = train(cell, command=command, run_dir=cell_dir)
            tokenizer = tokenizer_from_checkpoint(load_checkpoint(result.checkpoint))
            tokenizer = tokenizer.to(get_device(cell.run.device))
            _, held_out = load_training_data(cell)
            metrics, _, _ = reconstruction_metrics(tokenizer, held_out.tensors()[0], cell.data.batch_size)
            per_seed.append(metrics)
            logger.info("sweep N=%d seed=%d: PSNR %.3f", token_count, seed, metrics["psnr"])
        rows.append(
            {
                "token_count": token_count,
                "psnr": statistics.median(m["psnr"] for m in per_seed),
                "ssim": statistics.median(m["ssim"] for m in per_seed),
                "usage": (
                    statistics.median(m["usage"] for m in per_seed) if "usage" in per_seed[0] else None
                ),
                "seeds": len(per_seed),
            }
        )
    path = run_dir / "sweep.csv"
    pd.DataFrame(rows, columns=list(SWEEP_COLUMNS)).to_csv(path, index=False, float_format="%.17g")
    write_metadata(run_dir, config, command=command, extra={"cells": len(rows) * len(config.sweep.seeds)})
    logger.info("✅ Sweep table written to %s", path)
    return path


__all__ = [
    "GenerationResult",
    "SWEEP_COLUMNS",
    "distribution_metrics",
    "evaluate",
    "generate",
    "load_training_data",
    "probe",
    "reconstruct",
    "reconstruct_images",
    "reconstruction_metrics",
    "resolve_proxy",
    "sweep",
    "train",
]
