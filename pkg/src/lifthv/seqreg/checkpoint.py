"""Binary checkpoints: model config, provenance, and raw parameter tensors.

Layout: magic ``LTCK``, little-endian u16 version and u32 header length,
a canonical JSON header, then each tensor's bytes in header order.  The
header lists tensors as (name, shape, dtype) sorted by name, so a
checkpoint written twice from the same parameters is byte-identical.
"""

import dataclasses
import json
import struct

import numpy as np

from ..errors import LengthMismatch, SchemaViolation
from .model import ModelConfig

CHECKPOINT_MAGIC = b"LTCK"
CHECKPOINT_VERSION = 1
_ALLOWED_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(path, cfg: ModelConfig, params: dict, header_extra: dict | None = None) -> None:
    cfg.validate()
    header = dict(header_extra or {})
    header["kind"] = "checkpoint"
    header["config"] = dataclasses.asdict(cfg)
    tensors = []
    names = sorted(params)
    for name in names:
        arr = np.ascontiguousarray(params[name])
        dtype_name = str(arr.dtype)
        if dtype_name not in _ALLOWED_DTYPES:
            raise SchemaViolation(f"tensor {name} has unsupported dtype {dtype_name}")
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": dtype_name})
    header["tensors"] = tensors
    blob = json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in names:
            arr = np.ascontiguousarray(params[name])
            fh.write(arr.astype(_ALLOWED_DTYPES[str(arr.dtype)], copy=False).tobytes(order="C"))


def load_checkpoint(path):
    """Read a checkpoint, returning (ModelConfig, params, header)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 10 or raw[:4] != CHECKPOINT_MAGIC:
        raise SchemaViolation(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise SchemaViolation(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<I", raw, 6)
    if len(raw) < 10 + hlen:
        raise SchemaViolation(f"{path}: truncated header")
    try:
        header = json.loads(raw[10 : 10 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaViolation(f"{path}: unreadable checkpoint header") from exc
    if header.get("kind") != "checkpoint":
        raise SchemaViolation(f"{path}: wrong header kind {header.get('kind')!r}")
    try:
        cfg = ModelConfig(**header["config"])
    except (KeyError, TypeError) as exc:
        raise SchemaViolation(f"{path}: bad model config in header") from exc
    cfg.validate()
    params = {}
    offset = 10 + hlen
    for entry in header["tensors"]:
        name = entry["name"]
        shape = tuple(int(s) for s in entry["shape"])
        dtype_name = entry["dtype"]
        if dtype_name not in _ALLOWED_DTYPES:
            raise SchemaViolation(f"{path}: tensor {name} has unsupported dtype")
        dt = np.dtype(_ALLOWED_DTYPES[dtype_name])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if offset + nbytes > len(raw):
            raise LengthMismatch(f"{path}: tensor {name} runs past end of file")
        params[name] = (
            np.frombuffer(raw, dtype=dt, count=nbytes // dt.itemsize, offset=offset)
            .reshape(shape)
            .copy()
        )
        offset += nbytes
    if offset != len(raw):
        raise LengthMismatch(f"{path}: {len(raw) - offset} trailing bytes")
    return cfg, params, header
