"""Binary parameter container.

Layout (all integers little-endian)::

    magic  b"BXTPARAM"            8 bytes
    version                       u32
    n_records                     u32
    n_records x (key, value)      each a u32-length-prefixed UTF-8 string
    n_tensors                     u32
    n_tensors x tensor:
        name                      u32-length-prefixed UTF-8
        dtype                     u32-length-prefixed ASCII ("float32", ...)
        ndim                      u32
        shape                     ndim x u64
        data                      prod(shape) x itemsize bytes, little-endian

Config values are stored as JSON text so nested configs survive.
"""

from __future__ import annotations

import io
import json
import struct
from typing import Dict, Tuple

import numpy as np
import torch

from .errors import CheckpointError

MAGIC = b"BXTPARAM"
VERSION = 1
_DTYPES = {"float32": np.float32, "float64": np.float64, "int64": np.int64}


def _put_str(buf, s: str):
    raw = s.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def _get_str(buf) -> str:
    (n,) = struct.unpack("<I", _read(buf, 4))
    return _read(buf, n).decode("utf-8")


def _read(buf, n: int) -> bytes:
    raw = buf.read(n)
    if len(raw) != n:
        raise CheckpointError("truncated parameter container")
    return raw


def dumps(records: Dict[str, object], tensors: Dict[str, torch.Tensor]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(records)))
    for key, value in records.items():
        _put_str(buf, key)
        _put_str(buf, json.dumps(value, sort_keys=True))
    buf.write(struct.pack("<I", len(tensors)))
    for name, t in tensors.items():
        arr = t.detach().cpu().numpy()
        dtype = arr.dtype.name
        if dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {dtype} for {name}")
        _put_str(buf, name)
        _put_str(buf, dtype)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
    return buf.getvalue()


def loads(raw: bytes) -> Tuple[Dict[str, object], Dict[str, torch.Tensor]]:
    buf = io.BytesIO(raw)
    if _read(buf, 8) != MAGIC:
        raise CheckpointError("not a parameter container (bad magic)")
    version, n_records = struct.unpack("<II", _read(buf, 8))
    if version != VERSION:
        raise CheckpointError(f"unsupported container version {version}")
    records = {}
    for _ in range(n_records):
        key = _get_str(buf)
        records[key] = json.loads(_get_str(buf))
    (n_tensors,) = struct.unpack("<I", _read(buf, 4))
    tensors = {}
    for _ in range(n_tensors):
        name = _get_str(buf)
        dtype = _get_str(buf)
        if dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {dtype}")
        (ndim,) = struct.unpack("<I", _read(buf, 4))
        shape = struct.unpack(f"<{ndim}Q", _read(buf, 8 * ndim))
        np_dtype = np.dtype(_DTYPES[dtype]).newbyteorder("<")
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(_read(buf, count * np_dtype.itemsize), dtype=np_dtype)
        tensors[name] = torch.from_numpy(arr.astype(_DTYPES[dtype]).reshape(shape))
    if buf.read(1):
        raise CheckpointError("trailing bytes after the last tensor")
    return records, tensors


def save_checkpoint(path, model, optimizer_state=None, extra=None):
    records = {"model_config": model.config.to_dict()}
    records.update(extra or {})
    tensors = {n: p for n, p in model.state_dict().items()}
    for key, value in (optimizer_state or {}).items():
        if isinstance(value, dict):
            for name, t in value.items():
                tensors[f"optim/{key}/{name}"] = t
        else:
            records[f"optim/{key}"] = value
    with open(path, "wb") as fh:
        fh.write(dumps(records, tensors))


def load_checkpoint(path):
    """Rebuild a model from a container; returns (model, optimizer_state, records)."""
    from .model import ByteTransformer, ModelConfig

    with open(path, "rb") as fh:
        records, tensors = loads(fh.read())
    if "model_config" not in records:
        raise CheckpointError("container has no model_config record")
    config = ModelConfig(**records["model_config"])
    model = ByteTransformer(config)
    expected = model.state_dict()
    params = {n: t for n, t in tensors.items() if not n.startswith("optim/")}
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise CheckpointError(f"tensor names mismatch (missing={missing}, unexpected={extra})")
    for name, t in params.items():
        if tuple(t.shape) != tuple(expected[name].shape):
            raise CheckpointError(f"{name}: shape {tuple(t.shape)} != {tuple(expected[name].shape)}")
    dtype = next(iter(params.values())).dtype
    model.to(dtype)
    model.load_state_dict(params)
    optim: Dict[str, object] = {}
    for name, t in tensors.items():
        if name.startswith("optim/"):
            _, key, pname = name.split("/", 2)
            optim.setdefault(key, {})[pname] = t
    for key, value in records.items():
        if key.startswith("optim/"):
            optim[key.split("/", 1)[1]] = value
    return model, optim, records
