"""Binary PGM (P5, maxval 255) reading and writing."""
from __future__ import annotations

import os

import numpy as np

from .errors import MissingFileError, PGMFormatError, UnsupportedFormatError

_WS = b" \t\r\n\v\f"


def encode_pgm(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError(f"expected a 2-D uint8 image, got {img.dtype} {img.shape}")
    h, w = img.shape
    return b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes()


def write_pgm(path, img: np.ndarray):
    with open(os.fspath(path), "wb") as fh:
        fh.write(encode_pgm(img))


def _tokens(buf: bytes, count: int, where: str):
    """Pull ``count`` whitespace separated header tokens, skipping # comments.

    Returns the tokens and the offset of the single whitespace byte that ends
    the header.
    """
    out, pos, n = [], 0, len(buf)
    while len(out) < count:
        while pos < n and buf[pos] in _WS:
            pos += 1
        if pos < n and buf[pos] == ord("#"):
            while pos < n and buf[pos] not in b"\r\n":
                pos += 1
            continue
        start = pos
        while pos < n and buf[pos] not in _WS and buf[pos] != ord("#"):
            pos += 1
        if start == pos:
            raise PGMFormatError(f"{where}: header ends after {len(out)} fields")
        out.append(buf[start:pos])
    if pos >= n or buf[pos] not in _WS:
        raise PGMFormatError(f"{where}: missing whitespace after header")
    return out, pos


def decode_pgm(buf: bytes, where: str = "<bytes>") -> np.ndarray:
    if buf[:2] in (b"P2", b"P1", b"P3", b"P4", b"P6"):
        raise UnsupportedFormatError(f"{where}: only binary P5 graymaps are supported, got {buf[:2]!r}")
    if buf[:2] != b"P5":
        raise PGMFormatError(f"{where}: not a PGM file (magic {buf[:2]!r})")
    fields, end = _tokens(buf[2:], 3, where)
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError:
        raise PGMFormatError(f"{where}: non-integer header field in {fields}") from None
    if w <= 0 or h <= 0:
        raise PGMFormatError(f"{where}: bad dimensions {w}x{h}")
    if maxval != 255:
        raise UnsupportedFormatError(f"{where}: maxval {maxval} unsupported (need 255)")
    start = 2 + end + 1
    data = buf[start:]
    if len(data) < w * h:
        raise PGMFormatError(f"{where}: pixel data truncated ({len(data)} of {w * h} bytes)")
    return np.frombuffer(data, dtype=np.uint8, count=w * h).reshape(h, w).copy()


def read_pgm(path) -> np.ndarray:
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except FileNotFoundError:
        raise MissingFileError(f"image file not found: {path}") from None
    return decode_pgm(buf, path)
