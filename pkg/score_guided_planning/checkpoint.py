"""
Checkpoint files: a JSON manifest plus a raw little-endian float64 weight blob.

``<name>.manifest.json`` lists every array by name and shape in storage order
along with whatever model metadata the caller supplies (widths, activation,
noise schedule, normalization stats...). ``<name>.weights.bin`` is the
arrays' values concatenated in that same order. Loading checks the blob size
against the manifest before reshaping anything.
"""

import json
import logging
import os
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError
from .reports import sanitize_for_json, write_json_atomic

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "sgp-checkpoint"
CHECKPOINT_VERSION = 1
_DTYPE = np.dtype("<f8")


def checkpoint_paths(prefix: str | os.PathLike) -> tuple[Path, Path]:
    prefix = Path(prefix)
    return (
        prefix.with_name(prefix.name + ".manifest.json"),
        prefix.with_name(prefix.name + ".weights.bin"),
    )


def save_checkpoint(
    prefix: str | os.PathLike,
    kind: str,
    arrays: Sequence[tuple[str, np.ndarray]],
    metadata: dict | None = None,
) -> tuple[Path, Path]:
    """Write ``arrays`` (name, value) and ``metadata`` under ``prefix``."""
    manifest_path, weights_path = checkpoint_paths(prefix)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)

    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "dtype": "float64-le",
        "arrays": [{"name": name, "shape": list(np.shape(a))} for name, a in arrays],
        "metadata": sanitize_for_json(metadata or {}),
    }

    if arrays:
        blob = np.concatenate([np.asarray(a, dtype=np.float64).ravel() for _, a in arrays])
    else:
        blob = np.zeros(0)
    tmp = weights_path.with_name(weights_path.name + ".tmp")
    tmp.write_bytes(blob.astype(_DTYPE).tobytes())
    os.replace(tmp, weights_path)
    write_json_atomic(manifest_path, manifest)
    logger.debug(f"Saved {kind} checkpoint with {len(arrays)} arrays to {manifest_path}")
    return manifest_path, weights_path


def load_checkpoint(
    prefix: str | os.PathLike, kind: str | None = None
) -> tuple[dict, dict[str, np.ndarray]]:
    """
    Read a checkpoint written by ``save_checkpoint``.

    Returns:
        (metadata, arrays) where ``arrays`` maps name to array in manifest order.

    Raises:
        FormatError: missing files, wrong format tag or version, kind mismatch,
            or a weight blob whose size disagrees with the manifest.
    """
    manifest_path, weights_path = checkpoint_paths(prefix)
    if not manifest_path.exists():
        raise FormatError(f"Checkpoint manifest not found: {manifest_path}")
    if not weights_path.exists():
        raise FormatError(f"Checkpoint weights not found: {weights_path}")

    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(
            f"Malformed checkpoint manifest {manifest_path}: {e.msg}", offset=e.pos
        ) from e

    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{manifest_path} is not a checkpoint manifest")
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise FormatError(
            f"Unsupported checkpoint version {manifest.get('version')} in {manifest_path}"
        )
    if kind is not None and manifest.get("kind") != kind:
        raise FormatError(
            f"Expected a {kind} checkpoint, {manifest_path} holds {manifest.get('kind')}"
        )

    raw = weights_path.read_bytes()
    if len(raw) % _DTYPE.itemsize:
        raise FormatError(
            f"Weight blob {weights_path} is not a whole number of float64 values",
            offset=len(raw),
        )
    blob = np.frombuffer(raw, dtype=_DTYPE).astype(np.float64)

    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape, dtype=np.int64))
        if offset + size > blob.size:
            raise FormatError(
                f"Weight blob {weights_path} ends before array {entry['name']!r}",
                offset=blob.size * _DTYPE.itemsize,
            )
        arrays[entry["name"]] = blob[offset : offset + size].reshape(shape).copy()
        offset += size
    if offset != blob.size:
        raise FormatError(
            f"Weight blob {weights_path} has trailing data", offset=offset * _DTYPE.itemsize
        )
    return manifest["metadata"], arrays
