"""Adapter for externally supplied encoder weights.

Layout on disk:

- ``<name>.yaml`` manifest: ``layer_count``, ``width``, ``patch_size``,
  ``heads``, ``image_size``, ``tap_layers``, ``byte_order: little``,
  ``dtype: float32`` and a ``records`` list of ``{name, shape, offset, nbytes}``.
- ``<name>.bin`` blob: the records' float32 values, little-endian, concatenated
  at the declared offsets in state-dict order.

A manifest that disagrees with the encoder on layer count, width or patch
size is rejected; shapes are never reshaped to fit.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
import torch
import yaml

from src.errors import WeightManifestError


if TYPE_CHECKING:
    from src.encoder.backbone import FrozenViTEncoder


logger = logging.getLogger(__name__)

_DTYPE = np.dtype("<f4")


def export_encoder_weights(encoder: FrozenViTEncoder, manifest_path: str | Path) -> Path:
    """Write *encoder*'s parameters as a manifest + blob pair.

    Returns:
        Path of the written blob.
    """
    manifest_path = Path(manifest_path)
    blob_path = manifest_path.with_suffix(".bin")
    config = encoder.config
    records: list[dict[str, Any]] = []
    offset = 0
    with blob_path.open("wb") as fp:
        for name, tensor in encoder.state_dict().items():
            data = tensor.detach().cpu().numpy().astype(_DTYPE).tobytes()
            fp.write(data)
            records.append(
                {
                    "name": name,
                    "shape": list(tensor.shape),
                    "offset": offset,
                    "nbytes": len(data),
                }
            )
            offset += len(data)
    manifest = {
        "layer_count": config.depth,
        "width": config.width,
        "patch_size": config.patch_size,
        "heads": config.heads,
        "image_size": config.image_size,
        "tap_layers": list(config.tap_layers),
        "byte_order": "little",
        "dtype": "float32",
        "blob": blob_path.name,
        "records": records,
    }
    manifest_path.write_text(yaml.safe_dump(manifest, sort_keys=False), encoding="utf-8")
    logger.info("Exported %d encoder tensors to %s", len(records), blob_path)
    return blob_path


def _check_manifest(manifest: dict[str, Any], encoder: FrozenViTEncoder) -> None:
    config = encoder.config
    declared = {
        "layer_count": config.depth,
        "width": config.width,
        "patch_size": config.patch_size,
    }
    for key, expected in declared.items():
        if manifest.get(key) != expected:
            raise WeightManifestError(
                f"Manifest {key}={manifest.get(key)!r} does not match encoder "
                f"{key}={expected}"
            )
    if manifest.get("byte_order") != "little" or manifest.get("dtype") != "float32":
        raise WeightManifestError(
            "Only little-endian float32 blobs are supported, got "
            f"byte_order={manifest.get('byte_order')!r} dtype={manifest.get('dtype')!r}"
        )


def load_encoder_weights(encoder: FrozenViTEncoder, manifest_path: str | Path) -> None:
    """Load a manifest + blob pair into *encoder* in place.

    Raises:
        WeightManifestError: Header mismatch, missing/unexpected tensors, or a
            record whose shape differs from the encoder parameter.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise WeightManifestError(f"Weight manifest not found: {manifest_path}")
    manifest = yaml.safe_load(manifest_path.read_text(encoding="utf-8"))
    _check_manifest(manifest, encoder)
    blob = np.fromfile(manifest_path.parent / manifest["blob"], dtype=np.uint8)

    expected = encoder.state_dict()
    names = {record["name"] for record in manifest["records"]}
    missing = sorted(set(expected) - names)
    unexpected = sorted(names - set(expected))
    if missing or unexpected:
        raise WeightManifestError(
            f"Manifest tensors differ from encoder: missing={missing} "
            f"unexpected={unexpected}"
        )
    loaded: dict[str, torch.Tensor] = {}
    for record in manifest["records"]:
        shape = tuple(record["shape"])
        target = expected[record["name"]]
        if shape != tuple(target.shape):
            raise WeightManifestError(
                f"Tensor {record['name']} has shape {shape}, encoder expects "
                f"{tuple(target.shape)}"
            )
        start, stop = record["offset"], record["offset"] + record["nbytes"]
        if stop > blob.size:
            raise WeightManifestError(f"Record {record['name']} overruns the blob")
        values = blob[start:stop].view(_DTYPE).reshape(shape)
        loaded[record["name"]] = torch.from_numpy(values.astype(np.float32))
    encoder.load_state_dict(loaded)
    logger.info("Loaded %d encoder tensors from %s", len(loaded), manifest_path)


__all__ = ["export_encoder_weights", "load_encoder_weights"]
