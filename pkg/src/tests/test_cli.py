"""End-to-end tests of the ``tok`` command line.

They drive :func:`src.cli.tok.main` with real argv lists against a tiny config
written to a temporary YAML file.

Usage:
    uv run -m pytest src/tests/test_cli.py -v
"""

from __future__ import annotations

import json

import pytest
import torch
import yaml

from src.cli import tok
from src.configs.loader import dump_config
from src.pipeline.synthetic import make_smoke_dataset
from src.pipeline.test_pipeline import tiny_run_config


@pytest.fixture
def restore_torch_globals():
    """``--deterministic`` flips process-wide torch switches; undo them after the test."""
    threads = torch.get_num_threads()
    yield
    torch.use_deterministic_algorithms(False)
    torch.set_num_threads(threads)


@pytest.fixture
def config_file(tmp_path):
    data = make_smoke_dataset(tmp_path / "data", 4, num_classes=10)
    path = tmp_path / "tiny.yaml"
    raw = dump_config(tiny_run_config(data, tmp_path))
    path.write_text(yaml.safe_dump(raw), encoding="utf-8")
    return path


def _only(pattern: str, root):
    matches = sorted(root.glob(pattern))
    assert len(matches) == 1, matches
    return matches[0]


def test_train_writes_checkpoint_log_and_metadata(config_file, tmp_path):
    """``tok train`` leaves a checkpoint, a CSV log, a plot and the exact command."""
    argv = ["train", "--config", str(config_file), "--seed", "2"]
    assert tok.main(argv) == 0
    run_dir = _only("runs/*", tmp_path)
    assert (run_dir / "checkpoints" / "tokenizer.rtck").is_file()
    assert (run_dir / "tokenizer_log.csv").is_file()
    assert (run_dir / "tokenizer_loss.html").is_file()
    meta = json.loads((run_dir / "metadata.json").read_text())
    assert meta["command"] == "tok " + " ".join(argv)
    assert meta["seed"] == 2
    assert run_dir.name.startswith(meta["config_hash"][:12])


def test_library_errors_become_exit_code(config_file, tmp_path, caplog):
    """A checkpoint of the wrong kind is reported, not raised."""
    bogus = tmp_path / "bogus.rtck"
    bogus.write_bytes(b"RTCK")
    code = tok.main(["reconstruct", "--config", str(config_file), "--checkpoint", str(bogus)])
    assert code == 1
    assert "CheckpointError" in caplog.text


def test_unknown_config_key_is_rejected(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("run:\n  sede: 3\n", encoding="utf-8")
    assert tok.main(["train", "--config", str(path)]) == 1


def test_deterministic_evaluate_is_byte_identical(config_file, tmp_path, restore_torch_globals):
    """Two ``--deterministic`` runs write the same metric CSV bytes."""
    real = make_smoke_dataset(tmp_path / "real", 6, num_classes=10, seed=1)
    fake = make_smoke_dataset(tmp_path / "fake", 6, num_classes=10, seed=2)
    argv = [
        "evaluate",
        "--config",
        str(config_file),
        "--real",
        str(real),
        "--fake",
        str(fake),
        "--deterministic",
    ]
    assert tok.main(argv) == 0
    assert tok.main(argv) == 0
    first, second = sorted((tmp_path / "runs").glob("*/metrics.csv"))
    assert first.read_bytes() == second.read_bytes()
