"""Binary weight store.

Layout (little-endian throughout)::

    b"WVML1" | version:u8
    repeated until EOF:
        name_len:u32 | name:utf-8 | rank:u32 | dims:u32*rank | payload:f32*prod(dims)

Trainable parameters are written first, in model order, followed by
batchnorm running statistics.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .errors import MagicError, MissingTensorError, PayloadError, ShapeMismatchError

MAGIC = b"WVML1"
VERSION = 1
HEADER_SIZE = len(MAGIC) + 1


def _tensors(model):
    for p in model.parameters():
        yield p.name, p.data
    yield from model.buffers()


def save_weights(model, path) -> int:
    """Write every tensor of ``model`` to ``path``; returns bytes written."""
    path = os.fspath(path)
    written = 0
    with open(path, "wb") as fh:
        fh.write(MAGIC + bytes([VERSION]))
        written += HEADER_SIZE
        for name, arr in _tensors(model):
            raw = name.encode("utf-8")
            fh.write(struct.pack(f"<I{len(raw)}sI{arr.ndim}I", len(raw), raw, arr.ndim, *arr.shape))
            payload = np.ascontiguousarray(arr, dtype="<f4")
            fh.write(memoryview(payload).cast("B"))
            written += 8 + len(raw) + 4 * arr.ndim + payload.nbytes
    return written


def read_records(path) -> dict[str, np.ndarray]:
    """Parse a weight file into ``{name: float32 array}`` without touching a model."""
    with open(os.fspath(path), "rb") as fh:
        buf = fh.read()
    if len(buf) < HEADER_SIZE or buf[:len(MAGIC)] != MAGIC:
        raise MagicError(f"{path}: not a weight file (bad magic)")
    if buf[len(MAGIC)] != VERSION:
        raise MagicError(f"{path}: unsupported version {buf[len(MAGIC)]}")
    view = memoryview(buf)
    pos, out = HEADER_SIZE, {}

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise PayloadError(f"{path}: truncated while reading {what} at byte {pos}")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    while pos < len(buf):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = bytes(take(name_len, "name")).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, f"rank of {name!r}"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"dims of {name!r}"))
        count = int(np.prod(dims)) if rank else 1
        payload = take(4 * count, f"payload of {name!r}")
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    return out


def load_weights(model, path):
    """Populate ``model`` from ``path``; the model is untouched on any error."""
    records = read_records(path)
    for name, arr in _tensors(model):
        if name not in records:
            raise MissingTensorError(f"{path}: tensor {name!r} missing")
        if records[name].shape != arr.shape:
            raise ShapeMismatchError(
                f"{path}: tensor {name!r} has shape {records[name].shape}, model expects {arr.shape}"
            )
    model.load_state_dict({name: records[name] for name, _ in _tensors(model)})
    return model


def expected_file_size(model) -> int:
    return HEADER_SIZE + sum(8 + len(n.encode()) + 4 * a.ndim + 4 * a.size for n, a in _tensors(model))
