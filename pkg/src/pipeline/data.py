"""Dataset ingestion, augmentation and deterministic batching.

Two sources are accepted and produce identical in-memory datasets:

- a directory whose sub-folders are classes (sorted by name) holding image
  files (sorted by name);
- a packed ``RTPK`` file: ``magic, u32 count, H, W, C, dtype, num_classes``,
  then ``count·H·W·C`` uint8 pixels in HWC order, then ``count`` u32 labels.

Images are stored as uint8 ``(n, 3, R, R)`` tensors. Training-mode items are
augmented (reflect-pad random crop, horizontal flip) from a generator seeded
by ``(seed, epoch, index)``, so an item's augmentation does not depend on
batch order, worker count or where a run was resumed.
"""

from __future__ import annotations

import logging
import struct
from collections.abc import Iterator
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader, Dataset, Sampler
from torchvision.io import ImageReadMode, decode_image
from torchvision.transforms.v2 import functional as TF

from src.config import PACKED_DATASET_MAGIC
from src.errors import InputError


logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
_PACKED_HEADER = struct.Struct("<4sIIIIII")
_UINT8_CODE = 1


@dataclass(frozen=True)
class Rejection:
    path: str
    reason: str


def _to_resolution(image: torch.Tensor, resolution: int) -> torch.Tensor:
    """Resize the shorter side to *resolution* and center-crop to a square."""
    h, w = image.shape[-2:]
    if min(h, w) != resolution:
        image = TF.resize(image, [resolution], antialias=True)
    return TF.center_crop(image, [resolution, resolution])


class ImageDataset(Dataset):
    """Uniform-size image set yielding ``(float image in [0,1], label)``."""

    def __init__(
        self,
        images: torch.Tensor,
        labels: torch.Tensor,
        class_names: list[str],
        *,
        train: bool = False,
        seed: int = 0,
        crop_padding: int | None = None,
        rejections: list[Rejection] | None = None,
    ) -> None:
        if images.dtype != torch.uint8 or images.ndim != 4 or images.shape[1] != 3:
            raise InputError(f"Expected uint8 (n, 3, H, W) images, got {images.dtype} {tuple(images.shape)}")
        if images.shape[0] != labels.shape[0]:
            raise InputError("Image and label counts differ")
        self.images = images
        self.labels = labels.long()
        self.class_names = class_names
        self.train = train
        self.seed = seed
        self.epoch = 0
        self.crop_padding = images.shape[-1] // 8 if crop_padding is None else crop_padding
        self.rejections = rejections or []

    @property
    def count(self) -> int:
        return int(self.images.shape[0])

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def resolution(self) -> int:
        return int(self.images.shape[-1])

    def __len__(self) -> int:
        return self.count

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def _item_generator(self, index: int) -> torch.Generator:
        key = (self.seed * 1_000_003 + self.epoch) * 10_000_019 + index
        return torch.Generator().manual_seed(key % (2**63 - 1))

    def augment(self, image: torch.Tensor, index: int) -> torch.Tensor:
        gen = self._item_generator(index)
        pad = self.crop_padding
        size = self.resolution
        if pad:
            padded = F.pad(image[None].float(), (pad, pad, pad, pad), mode="reflect")[0]
            top, left = torch.randint(0, 2 * pad + 1, (2,), generator=gen).tolist()
            image = TF.crop(padded, top, left, size, size).round().to(torch.uint8)
        if torch.rand((), generator=gen).item() < 0.5:
            image = TF.horizontal_flip(image)
        return image

    def __getitem__(self, index: int) -> tuple[torch.Tensor, int]:
        image = self.images[index]
        if self.train:
            image = self.augment(image, index)
        return image.float() / 255.0, int(self.labels[index])

    def with_mode(self, train: bool) -> ImageDataset:
        """Same pixels, augmentation switched on or off."""
        view = ImageDataset(
            self.images,
            self.labels,
            self.class_names,
            train=train,
            seed=self.seed,
            crop_padding=self.crop_padding,
            rejections=self.rejections,
        )
        view.epoch = self.epoch
        return view

    def subset(self, indices: torch.Tensor) -> ImageDataset:
        return ImageDataset(
            self.images[indices],
            self.labels[indices],
            self.class_names,
            train=self.train,
            seed=self.seed,
            crop_padding=self.crop_padding,
        )

    def tensors(self) -> tuple[torch.Tensor, torch.Tensor]:
        """All images as float ``(n, 3, R, R)`` without augmentation, plus labels."""
        return self.images.float() / 255.0, self.labels.clone()


def _read_image(path: Path, resolution: int) -> tuple[torch.Tensor | None, str | None]:
    try:
        data = torch.frombuffer(bytearray(path.read_bytes()), dtype=torch.uint8)
        image = decode_image(data, mode=ImageReadMode.RGB)
    except (OSError, RuntimeError, ValueError) as exc:
        return None, f"unreadable: {exc}"
    h, w = image.shape[-2:]
    if min(h, w) < resolution:
        return None, f"undersized: {h}×{w} < {resolution}"
    return _to_resolution(image, resolution), None


def ingest_folder(root: Path, resolution: int) -> ImageDataset:
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    if not class_dirs:
        raise InputError(f"{root} has no class sub-folders")
    images, labels, rejections = [], [], []
    for label, class_dir in enumerate(class_dirs):
        for path in sorted(class_dir.iterdir()):
            if path.name.startswith(".") or not path.is_file():
                continue
            if path.suffix.lower() not in IMAGE_SUFFIXES:
                rejections.append(Rejection(str(path), f"unsupported suffix {path.suffix!r}"))
                continue
            image, reason = _read_image(path, resolution)
            if image is None:
                rejections.append(Rejection(str(path), reason))
                continue
            images.append(image)
            labels.append(label)
    for rejection in rejections:
        logger.warning("Rejected %s (%s)", rejection.path, rejection.reason)
    if not images:
        raise InputError(f"No usable images under {root}; {len(rejections)} rejected")
    return ImageDataset(
        torch.stack(images),
        torch.tensor(labels, dtype=torch.long),
        [d.name for d in class_dirs],
        rejections=rejections,
    )


def write_packed(path: str | Path, images: torch.Tensor, labels: torch.Tensor, num_classes: int) -> Path:
    """Write uint8 ``(n, 3, H, W)`` images and their labels as an ``RTPK`` file."""
    if images.dtype != torch.uint8 or images.ndim != 4:
        raise InputError("write_packed expects uint8 (n, C, H, W) images")
    n, c, h, w = images.shape
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("wb") as fp:
        fp.write(_PACKED_HEADER.pack(PACKED_DATASET_MAGIC, n, h, w, c, _UINT8_CODE, num_classes))
        fp.write(images.permute(0, 2, 3, 1).contiguous().numpy().tobytes())
        fp.write(labels.numpy().astype("<u4").tobytes())
    logger.info("Packed %d images (%d×%d×%d) into %s", n, h, w, c, out)
    return out


def read_packed(path: Path, resolution: int) -> ImageDataset:
    raw = path.read_bytes()
    if len(raw) < _PACKED_HEADER.size:
        raise InputError(f"{path} is too short to be a packed dataset")
    magic, n, h, w, c, dtype_code, num_classes = _PACKED_HEADER.unpack_from(raw)
    if magic != PACKED_DATASET_MAGIC:
        raise InputError(f"{path} is not a packed dataset (magic {magic!r})")
    if dtype_code != _UINT8_CODE or c != 3:
        raise InputError(f"{path}: only 3-channel uint8 payloads are supported (dtype={dtype_code}, C={c})")
    if min(h, w) < resolution:
        raise InputError(f"{path}: images are {h}×{w}, smaller than resolution {resolution}")
    pixel_bytes = n * h * w * c
    expected = _PACKED_HEADER.size + pixel_bytes + 4 * n
    if len(raw) != expected:
        raise InputError(f"{path}: expected {expected} bytes, found {len(raw)}")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=pixel_bytes, offset=_PACKED_HEADER.size)
    labels = np.frombuffer(raw, dtype="<u4", count=n, offset=_PACKED_HEADER.size + pixel_bytes)
    images = torch.from_numpy(pixels.reshape(n, h, w, c).copy()).permute(0, 3, 1, 2).contiguous()
    if (h, w) != (resolution, resolution):
        images = torch.stack([_to_resolution(img, resolution) for img in images])
    label_tensor = torch.from_numpy(labels.astype(np.int64))
    if n and label_tensor.max() >= num_classes:
        raise InputError(f"{path}: label {int(label_tensor.max())} ≥ num_classes {num_classes}")
    return ImageDataset(images, label_tensor, [str(i) for i in range(num_classes)])


def ingest_dataset(
    path: str | Path,
    resolution: int,
    *,
    train: bool = False,
    seed: int = 0,
) -> ImageDataset:
    """Load a class-folder tree or a packed file at *resolution*.

    Enumeration order is deterministic (sorted classes, sorted files).
    Unreadable or undersized files are listed in ``dataset.rejections`` and
    logged one by one.
    """
    source = Path(path)
    if source.is_dir():
        dataset = ingest_folder(source, resolution)
    elif source.is_file():
        dataset = read_packed(source, resolution)
    else:
        raise InputError(f"Dataset path does not exist: {source}")
    dataset.seed = seed
    logger.info(
        "Ingested %s: %d images, %d classes, %d rejected",
        source,
        dataset.count,
        dataset.num_classes,
        len(dataset.rejections),
    )
    return dataset.with_mode(train)


def split_dataset(
    dataset: ImageDataset,
    eval_fraction: float,
    seed: int,
) -> tuple[ImageDataset, ImageDataset]:
    """Deterministic (train, held-out) split; the held-out part is never augmented."""
    order = torch.randperm(dataset.count, generator=torch.Generator().manual_seed(seed))
    n_eval = round(dataset.count * eval_fraction)
    if eval_fraction > 0 and n_eval == 0:
        n_eval = 1
    if n_eval >= dataset.count:
        raise InputError(f"eval_fraction {eval_fraction} leaves no training images")
    train_idx, eval_idx = order[n_eval:].sort().values, order[:n_eval].sort().values
    return dataset.subset(train_idx), dataset.subset(eval_idx).with_mode(False)


@dataclass
class EpochSampler(Sampler[int]):
    """Per-epoch permutation from ``seed + epoch``, resumable mid-epoch."""

    size: int
    seed: int = 0
    shuffle: bool = True
    epoch: int = 0
    start: int = 0

    def set_epoch(self, epoch: int, start_index: int = 0) -> None:
        self.epoch = epoch
        self.start = start_index

    def order(self) -> list[int]:
        if not self.shuffle:
            return list(range(self.size))
        gen = torch.Generator().manual_seed(self.seed + self.epoch)
        return torch.randperm(self.size, generator=gen).tolist()

    def __iter__(self) -> Iterator[int]:
        return iter(self.order()[self.start :])

    def __len__(self) -> int:
        return max(0, self.size - self.start)


def make_loader(
    dataset: Dataset,
    batch_size: int,
    *,
    shuffle: bool = True,
    seed: int = 0,
    num_workers: int = 0,
) -> DataLoader:
    """Loader whose order depends only on ``(seed, epoch)``; see :class:`EpochSampler`."""
    sampler = EpochSampler(len(dataset), seed=seed, shuffle=shuffle)
    return DataLoader(
        dataset,
        batch_size=batch_size,
        sampler=sampler,
        num_workers=num_workers,
        drop_last=False,
        generator=torch.Generator().manual_seed(seed),
    )


def set_loader_epoch(loader: DataLoader, epoch: int, start_batch: int = 0) -> None:
    """Point *loader* (and its dataset's augmentation) at *epoch*."""
    loader.sampler.set_epoch(epoch, start_batch * loader.batch_size)
    if isinstance(loader.dataset, ImageDataset):
        loader.dataset.set_epoch(epoch)


__all__ = [
    "EpochSampler",
    "ImageDataset",
    "Rejection",
    "ingest_dataset",
    "ingest_folder",
    "make_loader",
    "read_packed",
    "set_loader_epoch",
    "split_dataset",
    "write_packed",
]
