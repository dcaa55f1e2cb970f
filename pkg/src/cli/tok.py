#!/usr/bin/env python
"""Command-line entry point: ``tok train|reconstruct|generate|evaluate|probe|sweep``.

Every subcommand reads one YAML config, applies ``--seed`` /
``--deterministic`` on top of it, and writes into a run directory named by
config hash and timestamp.

Usage:
    uv run -m src.cli.tok train --config src/configs/desk.yaml --seed 1
    uv run -m src.cli.tok generate --config src/configs/desk.yaml \\
        --checkpoint runs/<run>/checkpoints/ar.rtck --classes 0 3 --count 8 --guidance 1.5
"""

# %%
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any

from dotenv import load_dotenv

from src.config import DESK_CONFIG_PATH
from src.configs.loader import load_run_config
from src.configs.schemas import RunConfig
from src.errors import TokenizerError
from src.pipeline import commands
from src.utils import enable_determinism


load_dotenv(override=True)

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tok",
        description="Train, sample and evaluate region-adaptive image tokenizers.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        type=Path,
        default=DESK_CONFIG_PATH,
        help="YAML run configuration (default: the desk preset).",
    )
    common.add_argument("--seed", type=int, default=None, help="Overrides run.seed.")
    common.add_argument(
        "--deterministic",
        action="store_true",
        help="Single-threaded data order and deterministic kernels.",
    )
    common.add_argument("--data", type=Path, default=None, help="Overrides data.path.")
    common.add_argument("-v", "--verbose", action="store_true", help="DEBUG logging.")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="Run the loop selected by run.mode.")
    sub.add_parser("sweep", parents=[common], help="Token-count sweep over sweep.token_counts.")

    for name, help_text in (
        ("reconstruct", "Reconstruction grids and PSNR/SSIM/usage CSVs."),
        ("probe", "Linear-probe accuracy CSV for a tokenizer checkpoint."),
    ):
        cmd = sub.add_parser(name, parents=[common], help=help_text)
        cmd.add_argument("--checkpoint", type=Path, required=True, help="Tokenizer checkpoint.")

    gen = sub.add_parser("generate", parents=[common], help="Sample images from an AR or flow checkpoint.")
    gen.add_argument("--checkpoint", type=Path, required=True, help="AR or flow checkpoint.")
    gen.add_argument("--classes", type=int, nargs="+", required=True, help="Class ids to sample.")
    gen.add_argument("--count", type=int, default=1, help="Images per class.")
    gen.add_argument("--guidance", type=float, default=None, help="CFG scale s (1 disables CFG).")

    ev = sub.add_parser("evaluate", parents=[common], help="Proxy FD / IS / precision-recall between folders.")
    ev.add_argument("--real", type=Path, required=True)
    ev.add_argument("--fake", type=Path, required=True)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides: dict[str, Any] = {"run": {}}
    if args.seed is not None:
        overrides["run"]["seed"] = args.seed
    if args.deterministic:
        overrides["run"]["deterministic"] = True
    if args.data is not None:
        overrides["data"] = {"path": str(args.data)}
    return load_run_config(args.config, overrides)


def run(args: argparse.Namespace, argv: list[str]) -> Any:
    config = config_from_args(args)
    enable_determinism(config.run.deterministic)
    command = ["tok", *argv]
    match args.command:
        case "train":
            return commands.train(config, command=command)
        case "sweep":
            return commands.sweep(config, command=command)
        case "reconstruct":
            return commands.reconstruct(config, args.checkpoint, command=command)
        case "probe":
            return commands.probe(config, args.checkpoint, command=command)
        case "generate":
            return commands.generate(
                config,
                args.checkpoint,
                classes=args.classes,
                count=args.count,
                guidance=args.guidance,
                command=command,
            )
        case "evaluate":
            return commands.evaluate(config, args.real, args.fake, command=command)
    raise ValueError(f"Unknown command: {args.command}")


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s - %(levelname)s - %(message)s",
    )
    try:
        run(args, argv)
    except TokenizerError as exc:
        logger.error("❌ %s: %s", type(exc).__name__, exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
