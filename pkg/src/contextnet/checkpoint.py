"""Versioned binary model checkpoints with a human-readable sidecar manifest.

Layout: 8-byte magic, uint32 version, uint32 header length, JSON header
(model config, per-field cardinalities, field names/kinds, training seed,
tensor names and shapes), then the tensors as little-endian float64 in
declaration order. The sidecar `<path>.manifest` lists tensor shapes and
checksums plus a creation timestamp; the binary file itself is byte-stable
for identical parameters.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict
from datetime import datetime, timezone

import numpy as np

from contextnet.model import ModelConfig, Parameters

MAGIC = b"CNETCKPT"
VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


def save_checkpoint(
    path: str,
    params: Parameters,
    config: ModelConfig,
    cardinalities: list[int],
    fields: list[tuple[str, str]],
    seed: int,
) -> None:
    named = params.named_tensors()
    header = {
        "config": asdict(config),
        "cardinalities": list(map(int, cardinalities)),
        "fields": [[name, kind] for name, kind in fields],
        "seed": int(seed),
        "tensors": [[name, list(arr.shape)] for name, arr in named],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    manifest_lines = [f"checkpoint-manifest\t{VERSION}"]
    manifest_lines.append(f"created\t{datetime.now(timezone.utc).isoformat()}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for name, arr in named:
            blob = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            fh.write(blob)
            digest = hashlib.sha256(blob).hexdigest()
            shape = "x".join(map(str, arr.shape)) or "scalar"
            manifest_lines.append(f"tensor\t{name}\t{shape}\t{digest}")
    with open(path + ".manifest", "w", encoding="utf-8") as fh:
        fh.write("\n".join(manifest_lines) + "\n")


def load_checkpoint(path: str) -> tuple[Parameters, ModelConfig, dict]:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc}") from None
    with fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad checkpoint magic {magic!r}")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        try:
            header = json.loads(fh.read(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt header: {exc}") from None
        config = ModelConfig(**header["config"])
        params = Parameters(embed=[])
        for name, shape in header["tensors"]:
            n_items = int(np.prod(shape)) if shape else 1
            blob = fh.read(8 * n_items)
            if len(blob) != 8 * n_items:
                raise CheckpointError(f"{path}: truncated tensor {name}")
            arr = np.frombuffer(blob, dtype="<f8").astype(np.float64).reshape(shape)
            group, _, idx = name.partition(".")
            if group in Parameters._GROUPS:
                getattr(params, group).append(arr)
            elif name == "head_w":
                params.head_w = arr
            elif name == "head_b":
                params.head_b = arr
            else:
                raise CheckpointError(f"{path}: unknown tensor {name!r}")
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after tensors")
    if params.head_w is None or params.head_b is None:
        raise CheckpointError(f"{path}: missing head tensors")
    return params, config, header
