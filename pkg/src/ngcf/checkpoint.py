"""Checkpoint files: 8-byte magic, one JSON header line, raw little-endian arrays."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError, CheckpointVersionError
from .model import ModelConfig, ModelParams

MAGIC = b"NGCFCKPT"
VERSION = 1


@dataclass
class Checkpoint:
    params: ModelParams
    config: dict = field(default_factory=dict)
    epoch: int = 0
    rng_state: dict | None = None

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.config.get("model", self.config))


def save_checkpoint(
    params: ModelParams,
    path: str | Path,
    config: dict | None = None,
    epoch: int = 0,
    rng_state: dict | None = None,
) -> None:
    tensors = params.tensors()
    header = {
        "version": VERSION,
        "epoch": int(epoch),
        "config": config or {},
        "rng_state": rng_state,
        "tensors": [{"name": k, "shape": list(v.shape), "dtype": v.dtype.str.lstrip("<>=|")} for k, v in tensors.items()],
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for v in tensors.values():
            fh.write(np.ascontiguousarray(v).astype(v.dtype.newbyteorder("<"), copy=False).tobytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic bytes)")
    end = blob.find(b"\n", len(MAGIC))
    if end < 0:
        raise CheckpointFormatError(f"{path}: missing header line")
    try:
        header = json.loads(blob[len(MAGIC) : end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: corrupt header ({exc})") from None
    if header.get("version") != VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {header.get('version')!r}, this build reads {VERSION}")
    offset = end + 1
    tensors = {}
    for spec in header["tensors"]:
        dtype = np.dtype("<" + spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(blob):
            raise CheckpointFormatError(f"{path}: truncated tensor {spec['name']}")
        arr = np.frombuffer(blob, dtype, count, offset).reshape(spec["shape"])
        tensors[spec["name"]] = arr.astype(dtype.newbyteorder("="))
        offset += nbytes
    if offset != len(blob):
        raise CheckpointFormatError(f"{path}: {len(blob) - offset} trailing bytes")
    return Checkpoint(ModelParams.from_tensors(tensors), header["config"], header["epoch"], header.get("rng_state"))
