"""Tests for ingestion, checkpoints, token dumps, run directories and training loops.

Usage:
    uv run -m pytest src/pipeline/test_pipeline.py -v
"""

import json
import logging
import struct
from datetime import datetime
from pathlib import Path

import pandas as pd
import pytest
import torch
from torchvision.io import write_png

from src.configs.loader import validate_config
from src.configs.schemas import RunConfig
from src.errors import (
    CheckpointError,
    CheckpointVersionError,
    ConfigurationError,
    InputError,
    ModeError,
    TrainingDivergedError,
)
from src.pipeline import commands
from src.pipeline.checkpoint import checkpoint_hash, load_checkpoint, save_checkpoint
from src.pipeline.data import (
    EpochSampler,
    ingest_dataset,
    make_loader,
    split_dataset,
)
from src.pipeline.models import (
    build_tokenizer,
    flow_from_checkpoint,
    tokenizer_from_checkpoint,
)
from src.pipeline.plots import write_loss_plot
from src.pipeline.run_dir import create_run_dir, write_metadata
from src.pipeline.synthetic import make_smoke_dataset, make_smoke_images
from src.pipeline.token_io import read_tokens, write_tokens
from src.pipeline.trainers import (
    TOKENIZER_LOG_COLUMNS,
    ARTrainer,
    FlowTrainer,
    TokenizerTrainer,
)


def tiny_run_config(data_path: Path | None, tmp_path: Path, **run) -> RunConfig:
    """Small enough to train a few steps on CPU in well under a second each."""
    return validate_config(
        {
            "run": {
                "mode": "tokenizer-discrete",
                "seed": 0,
                "epochs": 1,
                "device": "cpu",
                "log_every": 1,
                "output_root": str(tmp_path / "runs"),
                **run,
            },
            "data": {
                "path": str(data_path) if data_path is not None else None,
                "batch_size": 8,
                "eval_fraction": 0.2,
            },
            "encoder": {"width": 32, "heads": 2, "depth": 4, "tap_layers": [1, 2, 3, 4], "projector_dim": 32},
            "sampler": {"token_count": 16, "depth": 1, "heads": 2, "points": 2},
            "bottleneck": {"codebook_size": 32, "code_dim": 8, "latent_dim": 16},
            "decoder": {
                "width": 32,
                "heads": 2,
                "d2": 1,
                "d3": 1,
                "register_count": 0,
                "pixel_channels": 8,
                "pixel_groups": 4,
            },
            "loss": {"gan_start_iter": 2},
            "ar": {"depth": 1, "width": 32, "heads": 2},
            "flow": {"depth": 1, "width": 32, "heads": 2, "euler_steps": 4},
            "eval": {"proxy_epochs": 1, "probe_epochs": 20},
            "sweep": {"token_counts": [4, 9], "seeds": [0]},
        }
    )


@pytest.fixture(scope="module")
def smoke_dir(tmp_path_factory):
    return make_smoke_dataset(tmp_path_factory.mktemp("smoke"), 4, num_classes=10, seed=0)


@pytest.fixture
def train_set(smoke_dir):
    dataset = ingest_dataset(smoke_dir, 32)
    train, _ = split_dataset(dataset, 0.2, seed=0)
    return train.with_mode(True)


class TestIngestion:
    """Folder and packed ingestion, determinism and rejections."""

    def test_count_contract(self, tmp_path):
        root = make_smoke_dataset(tmp_path / "big", 100, num_classes=10)
        dataset = ingest_dataset(root, 32)
        assert (dataset.count, dataset.num_classes) == (1000, 10)

    def test_eval_mode_order_is_stable(self, smoke_dir):
        dataset = ingest_dataset(smoke_dir, 32)
        loader = make_loader(dataset, 8, shuffle=False)
        first = torch.cat([images for images, _ in loader])
        second = torch.cat([images for images, _ in loader])
        assert torch.equal(first, second)

    def test_packed_matches_folder(self, tmp_path):
        folder = make_smoke_dataset(tmp_path / "folder", 3, num_classes=10, seed=5)
        packed = make_smoke_dataset(tmp_path / "packed", 3, num_classes=10, seed=5, packed=True)
        a = ingest_dataset(folder, 32)
        b = ingest_dataset(packed, 32)
        assert torch.equal(a.images, b.images)
        assert torch.equal(a.labels, b.labels)

    def test_rejections_are_itemized(self, tmp_path, caplog):
        root = make_smoke_dataset(tmp_path / "data", 2, num_classes=2)
        class_dir = sorted(p for p in root.iterdir() if p.is_dir())[0]
        (class_dir / "broken.png").write_bytes(b"not an image")
        images, _ = make_smoke_images(1, num_classes=1, size=16)
        write_png(images[0], str(class_dir / "tiny.png"))
        with caplog.at_level(logging.WARNING):
            dataset = ingest_dataset(root, 32)
        assert dataset.count == 4
        reasons = {Path(r.path).name: r.reason for r in dataset.rejections}
        assert reasons["broken.png"].startswith("unreadable")
        assert reasons["tiny.png"].startswith("undersized")
        assert "broken.png" in caplog.text

    def test_missing_path(self, tmp_path):
        with pytest.raises(InputError):
            ingest_dataset(tmp_path / "nowhere", 32)

    def test_augmentation_is_reproducible_per_epoch(self, smoke_dir):
        dataset = ingest_dataset(smoke_dir, 32, train=True, seed=3)
        dataset.set_epoch(2)
        first = dataset[5][0]
        again = dataset.with_mode(True)[5][0]
        assert torch.equal(first, again)
        assert torch.equal(dataset.with_mode(False)[5][0], dataset.images[5].float() / 255)

    def test_split_is_disjoint(self, smoke_dir):
        dataset = ingest_dataset(smoke_dir, 32)
        train, held_out = split_dataset(dataset, 0.25, seed=1)
        assert train.count + held_out.count == dataset.count
        assert not held_out.train


class TestEpochSampler:
    def test_resume_continues_the_same_permutation(self):
        full = list(EpochSampler(20, seed=4, epoch=1))
        resumed = EpochSampler(20, seed=4)
        resumed.set_epoch(1, start_index=8)
        assert list(resumed) == full[8:]

    def test_epochs_differ(self):
        sampler = EpochSampler(50, seed=0)
        first = sampler.order()
        sampler.set_epoch(1)
        assert sampler.order() != first


class TestCheckpoint:
    """Container round trip and explicit failures."""

    def test_forward_is_bit_identical_after_reload(self, tmp_path):
        config = tiny_run_config(None, tmp_path)
        torch.manual_seed(0)
        tokenizer = build_tokenizer(config).eval()
        path = save_checkpoint(
            tmp_path / "tok.rtck",
            kind="tokenizer",
            config=config.model_dump(mode="json"),
            modules={"tokenizer": tokenizer},
            iteration=7,
        )
        restored = tokenizer_from_checkpoint(load_checkpoint(path))
        images = torch.rand(2, 3, 32, 32, generator=torch.Generator().manual_seed(1))
        assert torch.equal(tokenizer.reconstruct(images), restored.reconstruct(images))
        assert load_checkpoint(path).iteration == 7

    def test_optimizer_state_round_trip(self, tmp_path):
        model = torch.nn.Linear(3, 2)
        optimizer = torch.optim.AdamW(model.parameters(), lr=1e-3)
        model(torch.ones(4, 3)).sum().backward()
        optimizer.step()
        path = save_checkpoint(
            tmp_path / "m.rtck", kind="test", config={}, modules={"m": model}, optimizers={"opt": optimizer}
        )
        clone = torch.optim.AdamW(torch.nn.Linear(3, 2).parameters(), lr=5.0)
        clone.load_state_dict(load_checkpoint(path).optimizer_state("opt"))
        assert clone.param_groups[0]["lr"] == 1e-3
        for key in ("exp_avg", "exp_avg_sq"):
            assert torch.equal(clone.state_dict()["state"][0][key], optimizer.state_dict()["state"][0][key])

    def test_version_mismatch_is_explicit(self, tmp_path):
        path = save_checkpoint(tmp_path / "v.rtck", kind="test", config={}, modules={"m": torch.nn.Linear(1, 1)})
        raw = bytearray(path.read_bytes())
        struct.pack_into("<I", raw, 4, 99)
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointVersionError) as info:
            load_checkpoint(path)
        assert info.value.found == 99

    def test_bad_magic_and_wrong_kind(self, tmp_path):
        path = save_checkpoint(tmp_path / "k.rtck", kind="ar", config={}, modules={"m": torch.nn.Linear(1, 1)})
        with pytest.raises(CheckpointError):
            load_checkpoint(path, expected_kind="tokenizer")
        (tmp_path / "junk.rtck").write_bytes(b"JUNK" + bytes(20))
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "junk.rtck")


class TestTokenFiles:
    def test_round_trip(self, tmp_path):
        gen = torch.Generator().manual_seed(0)
        indices = torch.randint(0, 512, (5, 64), generator=gen)
        classes = torch.arange(5)
        tokens = read_tokens(write_tokens(tmp_path / "t.u32", classes, indices, 512))
        assert torch.equal(tokens.indices, indices)
        assert torch.equal(tokens.class_ids, classes)
        assert (tokens.codebook_size, tokens.token_count) == (512, 64)
        assert (tmp_path / "t.u32").stat().st_size == 4 * (3 + 5 * 65)

    def test_out_of_range_ids(self, tmp_path):
        with pytest.raises(InputError):
            write_tokens(tmp_path / "t.u32", torch.zeros(1, dtype=torch.long), torch.full((1, 4), 8), 8)


class TestRunDirectory:
    def test_name_and_metadata(self, tmp_path):
        config = tiny_run_config(None, tmp_path)
        now = datetime(2026, 1, 2, 3, 4, 5)
        first = create_run_dir(config, root=tmp_path, now=now)
        second = create_run_dir(config, root=tmp_path, now=now)
        assert first.name.endswith("-20260102-030405")
        assert second.name == f"{first.name}.1"
        path = write_metadata(first, config, command=["tok", "train", "--seed", "0"])
        meta = json.loads(path.read_text())
        assert meta["command"] == "tok train --seed 0"
        assert first.name.startswith(meta["config_hash"][:12])
        assert meta["seed"] == 0

    def test_loss_plot_written(self, tmp_path):
        log = pd.DataFrame({"step": [1, 2], "total": [1.0, 0.5], "disc": [None, None]})
        out = write_loss_plot(log, ["total", "disc"], tmp_path / "loss.html", title="t")
        assert out.read_text().count("<html") == 1


class TestTokenizerTrainer:
    """Loop bookkeeping, GAN gating, resume and divergence."""

    def test_zero_epochs_keeps_initialization(self, tmp_path, train_set):
        config = tiny_run_config(None, tmp_path, epochs=0)
        trainer = TokenizerTrainer(config, train_set, tmp_path / "run")
        initial = {k: v.clone() for k, v in trainer.tokenizer.state_dict().items()}
        result = trainer.fit()
        saved = load_checkpoint(result.checkpoint).module_state("tokenizer")
        assert all(torch.equal(initial[k], saved[k]) for k in initial)
        log = pd.read_csv(result.log_path)
        assert list(log.columns) == list(TOKENIZER_LOG_COLUMNS)
        assert len(log) == 0
        assert result.steps == 0

    def test_gan_terms_zero_before_start(self, tmp_path, train_set):
        config = tiny_run_config(None, tmp_path, max_steps=4)
        result = TokenizerTrainer(config, train_set, tmp_path / "run").fit()
        log = pd.read_csv(result.log_path)
        assert (log.loc[log.step <= 2, ["gen", "disc"]] == 0).all().all()
        assert (log.loc[log.step > 2, "disc"] > 0).all()
        recomposed = log[["l2", "perceptual", "gen", "codebook", "commit", "sim"]].sum(axis=1)
        assert (recomposed - log.total).abs().max() < 1e-9

    def test_resume_matches_uninterrupted_run(self, tmp_path, train_set):
        full = TokenizerTrainer(tiny_run_config(None, tmp_path, epochs=2), train_set, tmp_path / "full")
        full_result = full.fit()

        head = TokenizerTrainer(tiny_run_config(None, tmp_path, epochs=2, max_steps=3), train_set, tmp_path / "a")
        partial = head.fit()
        tail = TokenizerTrainer(tiny_run_config(None, tmp_path, epochs=2), train_set, tmp_path / "b")
        tail.restore(partial.checkpoint)
        resumed = tail.fit()

        assert resumed.steps == full_result.steps
        assert resumed.losses == full_result.losses[3:]
        a = full.tokenizer.state_dict()
        b = tail.tokenizer.state_dict()
        assert all(torch.equal(a[k], b[k]) for k in a)

    def test_nan_loss_reports_last_checkpoint(self, tmp_path, train_set):
        trainer = TokenizerTrainer(tiny_run_config(None, tmp_path), train_set, tmp_path / "run")
        good = trainer.save()
        with torch.no_grad():
            for param in trainer.tokenizer.decoder.parameters():
                param.fill_(float("nan"))
        with pytest.raises(TrainingDivergedError) as info:
            trainer.fit()
        assert info.value.last_good == good
        assert info.value.step == 1


@pytest.fixture(scope="module")
def trained(tmp_path_factory, smoke_dir):
    """Discrete and continuous tokenizers plus an AR model, trained for one epoch."""
    root = tmp_path_factory.mktemp("trained")
    discrete = commands.train(tiny_run_config(smoke_dir, root), run_dir=root / "tok-d")
    continuous = commands.train(
        tiny_run_config(smoke_dir, root, mode="tokenizer-continuous"), run_dir=root / "tok-c"
    )
    ar = commands.train(
        tiny_run_config(smoke_dir, root, mode="ar", tokenizer_checkpoint=str(discrete.checkpoint)),
        run_dir=root / "ar",
    )
    return {"root": root, "discrete": discrete, "continuous": continuous, "ar": ar}


class TestGeneratorTrainers:
    def test_ar_training_leaves_tokenizer_untouched(self, tmp_path, trained, train_set):
        config = tiny_run_config(None, tmp_path, mode="ar")
        tokenizer = tokenizer_from_checkpoint(load_checkpoint(trained["discrete"].checkpoint))
        before = {k: v.clone() for k, v in tokenizer.state_dict().items()}
        trainer = ARTrainer(config, train_set, tmp_path / "ar", tokenizer=tokenizer, tokenizer_hash="x")
        trainer.fit()
        after = tokenizer.state_dict()
        assert all(torch.equal(before[k], after[k]) for k in before)
        tokens = read_tokens(tmp_path / "ar" / "train_tokens.u32")
        assert tokens.indices.shape == (train_set.count, 16)

    def test_ar_needs_discrete_tokenizer(self, tmp_path, trained, train_set):
        tokenizer = tokenizer_from_checkpoint(load_checkpoint(trained["continuous"].checkpoint))
        with pytest.raises(ModeError):
            ARTrainer(tiny_run_config(None, tmp_path, mode="ar"), train_set, tmp_path, tokenizer=tokenizer, tokenizer_hash="x")

    def test_flow_checkpoint_carries_latent_stats(self, tmp_path, trained, train_set):
        tokenizer = tokenizer_from_checkpoint(load_checkpoint(trained["continuous"].checkpoint))
        config = tiny_run_config(None, tmp_path, mode="flow")
        result = FlowTrainer(config, train_set, tmp_path / "flow", tokenizer=tokenizer, tokenizer_hash="x").fit()
        bundle = flow_from_checkpoint(load_checkpoint(result.checkpoint))
        assert bundle.stats.dim == tokenizer.latent_dim
        assert bundle.ema is not None
        assert bundle.sampler is bundle.ema


class TestCommands:
    """Subcommands on the tiny trained checkpoints."""

    def test_missing_dataset_path_names_env_var(self, tmp_path, monkeypatch):
        monkeypatch.delenv("TOK_DATA_DIR", raising=False)
        with pytest.raises(ConfigurationError, match="TOK_DATA_DIR"):
            commands.train(tiny_run_config(None, tmp_path), run_dir=tmp_path / "r")

    def test_generate_without_guidance_takes_fast_path(self, tmp_path, trained, caplog):
        config = tiny_run_config(None, tmp_path)
        with caplog.at_level(logging.INFO):
            result = commands.generate(
                config, trained["ar"].checkpoint, classes=[0, 3], count=2, guidance=1.0, run_dir=tmp_path / "g"
            )
        assert "cfg:off" in caplog.text
        assert result.images.shape == (4, 3, 32, 32)
        tokens = read_tokens(tmp_path / "g" / "tokens.u32")
        assert tokens.class_ids.tolist() == [0, 0, 3, 3]
        assert len(list((tmp_path / "g" / "images").rglob("*.png"))) == 4
        meta = json.loads((tmp_path / "g" / "metadata.json").read_text())
        assert meta["cfg"] == "off"
        assert meta["images_per_second"] > 0

    def test_generate_rejects_tokenizer_checkpoint(self, tmp_path, trained):
        with pytest.raises(CheckpointError):
            commands.generate(
                tiny_run_config(None, tmp_path), trained["discrete"].checkpoint, classes=[0], count=1
            )

    def test_inference_does_not_touch_checkpoint(self, tmp_path, trained):
        path = trained["discrete"].checkpoint
        before = checkpoint_hash(path)
        config = tiny_run_config(make_smoke_dataset(tmp_path / "data", 3, num_classes=10), tmp_path)
        commands.reconstruct(config, path, run_dir=tmp_path / "rec")
        assert checkpoint_hash(path) == before
        metrics = pd.read_csv(tmp_path / "rec" / "reconstruction_metrics.csv")
        assert {"psnr", "ssim", "usage", "frechet_distance"} <= set(metrics.metric)
        assert (tmp_path / "rec" / "reconstructions.png").is_file()
        usage = pd.read_csv(tmp_path / "rec" / "codebook_usage.csv")
        assert len(usage) == 32

    def test_evaluate_identical_folders(self, tmp_path):
        real = make_smoke_dataset(tmp_path / "real", 20, num_classes=10, seed=1)
        config = tiny_run_config(None, tmp_path)
        path = commands.evaluate(config, real, real, run_dir=tmp_path / "ev")
        frame = pd.read_csv(path).set_index("metric")
        assert abs(frame.loc["frechet_distance", "value"]) < 1e-6
        assert frame.loc["precision", "value"] == 1.0
        assert frame.loc["recall", "value"] == 1.0

    def test_evaluate_ignores_global_rng_state(self, tmp_path):
        """Same config and folders give byte-identical metrics whatever the caller seeded."""
        real = make_smoke_dataset(tmp_path / "real", 6, num_classes=10, seed=1)
        fake = make_smoke_dataset(tmp_path / "fake", 6, num_classes=10, seed=2)
        config = tiny_run_config(None, tmp_path)
        torch.manual_seed(11)
        first = commands.evaluate(config, real, fake, run_dir=tmp_path / "ev1")
        torch.manual_seed(22)
        second = commands.evaluate(config, real, fake, run_dir=tmp_path / "ev2")
        assert first.read_bytes() == second.read_bytes()
        hashes = {json.loads((tmp_path / d / "metadata.json").read_text())["proxy_hash"] for d in ("ev1", "ev2")}
        assert len(hashes) == 1

    def test_given_run_dirs_are_created(self, tmp_path, trained, smoke_dir):
        config = tiny_run_config(smoke_dir, tmp_path)
        nested = tmp_path / "a" / "b"
        commands.probe(config, trained["discrete"].checkpoint, run_dir=nested / "probe")
        commands.generate(config, trained["ar"].checkpoint, classes=[1], count=1, run_dir=nested / "gen")
        commands.evaluate(config, smoke_dir, smoke_dir, run_dir=nested / "eval")
        assert (nested / "probe" / "probe.csv").is_file()
        assert (nested / "gen" / "metadata.json").is_file()
        assert (nested / "eval" / "metrics.csv").is_file()

    def test_probe_rows(self, tmp_path, trained, smoke_dir):
        config = tiny_run_config(smoke_dir, tmp_path)
        frame = pd.read_csv(commands.probe(config, trained["discrete"].checkpoint, run_dir=tmp_path / "p"))
        assert sorted(frame.split) == ["pixels", "tokenizer"]
        assert frame.value.between(0, 1).all()

    def test_sweep_schema(self, tmp_path, smoke_dir):
        config = tiny_run_config(smoke_dir, tmp_path)
        frame = pd.read_csv(commands.sweep(config, run_dir=tmp_path / "sw"))
        assert list(frame.columns) == list(commands.SWEEP_COLUMNS)
        assert frame.token_count.tolist() == [4, 9]
        assert (frame.seeds == 1).all()
