"""Procedural smoke dataset: ten shape/colour classes at 32×32.

Every class pairs one shape family with one palette colour; position, scale,
phase and colours are jittered per image from a seeded generator, so the set
is reproducible from ``(count_per_class, seed)`` alone.

Usage:
    uv run -m src.pipeline.synthetic /tmp/smoke --per-class 500
"""

from __future__ import annotations

import argparse
import logging
import math
from pathlib import Path

import torch
from torchvision.io import write_png

from src.pipeline.data import write_packed


logger = logging.getLogger(__name__)

PALETTE = torch.tensor(
    [
        [0.90, 0.20, 0.20],
        [0.20, 0.75, 0.25],
        [0.20, 0.35, 0.90],
        [0.95, 0.80, 0.15],
        [0.80, 0.25, 0.85],
        [0.15, 0.80, 0.85],
        [0.95, 0.55, 0.15],
        [0.55, 0.55, 0.55],
        [0.95, 0.95, 0.95],
        [0.45, 0.25, 0.10],
    ]
)
SHAPES = (
    "disk",
    "square",
    "hstripes",
    "vstripes",
    "diagonal",
    "ring",
    "cross",
    "checker",
    "triangle",
    "diamond",
)


def _shape_mask(shape: str, size: int, gen: torch.Generator) -> torch.Tensor:
    coords = torch.linspace(-1, 1, size)
    yy, xx = torch.meshgrid(coords, coords, indexing="ij")
    center = (torch.rand(2, generator=gen) - 0.5) * 0.6
    scale = 0.35 + 0.3 * torch.rand((), generator=gen).item()
    phase = 2 * math.pi * torch.rand((), generator=gen).item()
    freq = 2.0 + 2.0 * torch.rand((), generator=gen).item()
    dx, dy = xx - center[0], yy - center[1]
    radius = torch.sqrt(dx**2 + dy**2)
    masks = {
        "disk": radius < scale,
        "square": torch.maximum(dx.abs(), dy.abs()) < scale * 0.8,
        "hstripes": torch.sin(yy * freq * math.pi + phase) > 0,
        "vstripes": torch.sin(xx * freq * math.pi + phase) > 0,
        "diagonal": torch.sin((xx + yy) * freq * math.pi + phase) > 0,
        "ring": (radius - scale).abs() < 0.12,
        "cross": ((dx.abs() < 0.12) | (dy.abs() < 0.12)) & (torch.maximum(dx.abs(), dy.abs()) < scale),
        "checker": torch.sin(xx * freq * math.pi + phase) * torch.sin(yy * freq * math.pi + phase) > 0,
        "triangle": (dy < scale) & (dx.abs() < (dy + scale) / 2),
        "diamond": dx.abs() + dy.abs() < scale,
    }
    return masks[shape]


def make_smoke_images(
    count_per_class: int,
    *,
    num_classes: int = 10,
    size: int = 32,
    seed: int = 0,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Return ``(images uint8 (n, 3, size, size), labels int64 (n,))``, class-major."""
    if not 1 <= num_classes <= len(SHAPES):
        raise ValueError(f"num_classes must lie in [1, {len(SHAPES)}], got {num_classes}")
    gen = torch.Generator().manual_seed(seed)
    images, labels = [], []
    for label in range(num_classes):
        for _ in range(count_per_class):
            mask = _shape_mask(SHAPES[label], size, gen)
            fg = (PALETTE[label] + 0.1 * torch.randn(3, generator=gen)).clamp(0, 1)
            bg = 0.25 * torch.rand(3, generator=gen)
            image = torch.where(mask[None], fg[:, None, None], bg[:, None, None])
            image = (image + 0.03 * torch.randn(image.shape, generator=gen)).clamp(0, 1)
            images.append((image * 255).round().to(torch.uint8))
            labels.append(label)
    return torch.stack(images), torch.tensor(labels, dtype=torch.long)


def class_name(label: int) -> str:
    return f"{label:02d}_{SHAPES[label]}"


def make_smoke_dataset(
    root: str | Path,
    count_per_class: int,
    *,
    num_classes: int = 10,
    size: int = 32,
    seed: int = 0,
    packed: bool = False,
) -> Path:
    """Write the smoke set as class sub-folders of PNGs or as one packed file.

    Returns the folder (or, with ``packed=True``, the ``.rtpk`` file) path.
    """
    images, labels = make_smoke_images(
        count_per_class, num_classes=num_classes, size=size, seed=seed
    )
    root = Path(root)
    if packed:
        return write_packed(root / "smoke.rtpk", images, labels, num_classes)
    for label in range(num_classes):
        (root / class_name(label)).mkdir(parents=True, exist_ok=True)
    counters = [0] * num_classes
    for image, label in zip(images, labels.tolist(), strict=True):
        write_png(image, str(root / class_name(label) / f"{counters[label]:05d}.png"))
        counters[label] += 1
    logger.info("Wrote %d smoke images in %d classes to %s", len(labels), num_classes, root)
    return root


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(description="Write the procedural smoke dataset.")
    parser.add_argument("root", type=Path)
    parser.add_argument("--per-class", type=int, default=500)
    parser.add_argument("--classes", type=int, default=10)
    parser.add_argument("--size", type=int, default=32)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--packed", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s")
    make_smoke_dataset(
        args.root,
        args.per_class,
        num_classes=args.classes,
        size=args.size,
        seed=args.seed,
        packed=args.packed,
    )


if __name__ == "__main__":
    main()
