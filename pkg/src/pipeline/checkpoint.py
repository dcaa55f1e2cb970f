"""Single-file checkpoint container.

Layout (all integers little-endian)::

    magic  b"RTCK"
    u32    container version
    u64    header length in bytes
    bytes  UTF-8 JSON header
    bytes  tensor records, back to back

The header holds the checkpoint kind, the run config snapshot, counters,
optimizer hyper-parameters, latent statistics, free-form metadata and the
record index (name, dtype, shape, offset, nbytes). Record names are
``module/<module>/<key>``, ``optim/<optimizer>/<param>/<key>`` and
``rng/<stream>``.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
from torch import nn

from src.config import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from src.errors import CheckpointError, CheckpointVersionError
from src.utils import file_sha256


logger = logging.getLogger(__name__)

_PREAMBLE = struct.Struct("<4sIQ")

_DTYPES: dict[str, tuple[torch.dtype, str]] = {
    "float32": (torch.float32, "<f4"),
    "float64": (torch.float64, "<f8"),
    "float16": (torch.float16, "<f2"),
    "int64": (torch.int64, "<i8"),
    "int32": (torch.int32, "<i4"),
    "uint8": (torch.uint8, "|u1"),
    "bool": (torch.bool, "|b1"),
}
_DTYPE_NAMES = {torch_dtype: name for name, (torch_dtype, _) in _DTYPES.items()}


@dataclass
class Checkpoint:
    """In-memory view of a checkpoint file."""

    kind: str
    config: dict[str, Any]
    iteration: int = 0
    epoch: int = 0
    batch_in_epoch: int = 0
    tensors: dict[str, torch.Tensor] = field(default_factory=dict)
    optimizer_groups: dict[str, list[dict[str, Any]]] = field(default_factory=dict)
    optimizer_scalars: dict[str, dict[str, Any]] = field(default_factory=dict)
    latent_stats: dict[str, Any] | None = None
    metadata: dict[str, Any] = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION

    def module_names(self) -> list[str]:
        return sorted({name.split("/")[1] for name in self.tensors if name.startswith("module/")})

    def has_module(self, name: str) -> bool:
        return name in self.module_names()

    def module_state(self, name: str) -> dict[str, torch.Tensor]:
        prefix = f"module/{name}/"
        state = {k[len(prefix) :]: v for k, v in self.tensors.items() if k.startswith(prefix)}
        if not state:
            raise CheckpointError(
                f"Checkpoint of kind {self.kind!r} holds no module {name!r}; "
                f"available: {self.module_names()}"
            )
        return state

    def optimizer_state(self, name: str) -> dict[str, Any]:
        """Rebuild a ``torch.optim`` state dict."""
        if name not in self.optimizer_groups:
            raise CheckpointError(f"Checkpoint holds no optimizer {name!r}")
        prefix = f"optim/{name}/"
        state: dict[int, dict[str, Any]] = {}
        for key, tensor in self.tensors.items():
            if key.startswith(prefix):
                param, entry = key[len(prefix) :].split("/", 1)
                state.setdefault(int(param), {})[entry] = tensor
        for key, value in self.optimizer_scalars.get(name, {}).items():
            param, entry = key.split("/", 1)
            state.setdefault(int(param), {})[entry] = value
        return {"state": state, "param_groups": self.optimizer_groups[name]}

    def rng_state(self, name: str) -> torch.Tensor | None:
        return self.tensors.get(f"rng/{name}")


def _optimizer_records(
    name: str, optimizer: torch.optim.Optimizer
) -> tuple[dict[str, torch.Tensor], list[dict[str, Any]], dict[str, Any]]:
    state_dict = optimizer.state_dict()
    tensors: dict[str, torch.Tensor] = {}
    scalars: dict[str, Any] = {}
    for param, entries in state_dict["state"].items():
        for entry, value in entries.items():
            if isinstance(value, torch.Tensor):
                tensors[f"optim/{name}/{param}/{entry}"] = value
            else:
                scalars[f"{param}/{entry}"] = value
    return tensors, state_dict["param_groups"], scalars


def _tensor_bytes(tensor: torch.Tensor) -> tuple[str, bytes]:
    tensor = tensor.detach().cpu().contiguous()
    dtype_name = _DTYPE_NAMES.get(tensor.dtype)
    if dtype_name is None:
        raise CheckpointError(f"Unsupported tensor dtype for checkpointing: {tensor.dtype}")
    array = tensor.numpy().astype(_DTYPES[dtype_name][1], copy=False)
    return dtype_name, array.tobytes()


def save_checkpoint(
    path: str | Path,
    *,
    kind: str,
    config: Mapping[str, Any],
    modules: Mapping[str, nn.Module],
    optimizers: Mapping[str, torch.optim.Optimizer] | None = None,
    iteration: int = 0,
    epoch: int = 0,
    batch_in_epoch: int = 0,
    latent_stats: Mapping[str, Any] | None = None,
    rng: Mapping[str, torch.Tensor] | None = None,
    metadata: Mapping[str, Any] | None = None,
) -> Path:
    """Write a checkpoint atomically and return its path."""
    tensors: dict[str, torch.Tensor] = {}
    for module_name, module in modules.items():
        for key, value in module.state_dict().items():
            tensors[f"module/{module_name}/{key}"] = value
    groups: dict[str, list[dict[str, Any]]] = {}
    scalars: dict[str, dict[str, Any]] = {}
    for opt_name, optimizer in (optimizers or {}).items():
        opt_tensors, groups[opt_name], scalars[opt_name] = _optimizer_records(opt_name, optimizer)
        tensors.update(opt_tensors)
    for stream, state in (rng or {}).items():
        tensors[f"rng/{stream}"] = state

    records, blobs, offset = [], [], 0
    for name in sorted(tensors):
        dtype_name, blob = _tensor_bytes(tensors[name])
        records.append(
            {
                "name": name,
                "dtype": dtype_name,
                "shape": list(tensors[name].shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = {
        "kind": kind,
        "config": dict(config),
        "iteration": iteration,
        "epoch": epoch,
        "batch_in_epoch": batch_in_epoch,
        "optimizer_groups": groups,
        "optimizer_scalars": scalars,
        "latent_stats": dict(latent_stats) if latent_stats is not None else None,
        "metadata": dict(metadata or {}),
        "records": records,
    }
    header_bytes = json.dumps(header, sort_keys=True, default=str).encode("utf-8")

    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_suffix(out.suffix + ".tmp")
    with tmp.open("wb") as fp:
        fp.write(_PREAMBLE.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header_bytes)))
        fp.write(header_bytes)
        for blob in blobs:
            fp.write(blob)
    tmp.replace(out)
    logger.info("Saved %s checkpoint (%d records, step %d) to %s", kind, len(records), iteration, out)
    return out


def _read_record(data: memoryview, record: dict[str, Any], base: int) -> torch.Tensor:
    dtype_name = record["dtype"]
    if dtype_name not in _DTYPES:
        raise CheckpointError(f"Record {record['name']!r} has unknown dtype {dtype_name!r}")
    shape = tuple(record["shape"])
    np_dtype = np.dtype(_DTYPES[dtype_name][1])
    count = math.prod(shape)
    start = base + record["offset"]
    if count * np_dtype.itemsize != record["nbytes"] or start + record["nbytes"] > len(data):
        raise CheckpointError(f"Record {record['name']!r} is truncated or inconsistent")
    if count == 0:
        return torch.empty(shape, dtype=_DTYPES[dtype_name][0])
    array = np.frombuffer(data, dtype=np_dtype, count=count, offset=start).reshape(shape)
    return torch.from_numpy(array.copy())


def load_checkpoint(path: str | Path, *, expected_kind: str | None = None) -> Checkpoint:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises:
        CheckpointError: Missing file, bad magic, truncation or wrong kind.
        CheckpointVersionError: Written by another container version.
    """
    source = Path(path)
    if not source.is_file():
        raise CheckpointError(f"Checkpoint not found: {source}")
    raw = source.read_bytes()
    if len(raw) < _PREAMBLE.size:
        raise CheckpointError(f"{source} is too short to be a checkpoint")
    magic, version, header_len = _PREAMBLE.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{source} is not a checkpoint (magic {magic!r})")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(version, CHECKPOINT_VERSION)
    base = _PREAMBLE.size + header_len
    if base > len(raw):
        raise CheckpointError(f"{source} has a truncated header")
    try:
        header = json.loads(raw[_PREAMBLE.size : base].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source} has a corrupt header") from exc
    data = memoryview(raw)
    tensors = {record["name"]: _read_record(data, record, base) for record in header["records"]}
    checkpoint = Checkpoint(
        kind=header["kind"],
        config=header["config"],
        iteration=header["iteration"],
        epoch=header["epoch"],
        batch_in_epoch=header["batch_in_epoch"],
        tensors=tensors,
        optimizer_groups=header["optimizer_groups"],
        optimizer_scalars=header["optimizer_scalars"],
        latent_stats=header["latent_stats"],
        metadata=header["metadata"],
        version=version,
    )
    if expected_kind is not None and checkpoint.kind != expected_kind:
        raise CheckpointError(
            f"Expected a {expected_kind!r} checkpoint, {source} holds {checkpoint.kind!r}"
        )
    return checkpoint


def checkpoint_hash(path: str | Path) -> str:
    """Short content hash used to label artifacts derived from a checkpoint."""
    return file_sha256(path)[:16]


__all__ = ["Checkpoint", "checkpoint_hash", "load_checkpoint", "save_checkpoint"]
