"""Dense tensors, label maps and the TNS on-disk format.

Tensors are plain ``numpy`` arrays. Feature tensors are float32 and use the
channels-first layout ``(c, t, h, w)``; a 2D image is the ``t == 1`` case.
Label maps are ``(h, w)`` uint16 arrays where :data:`IGNORE_INDEX` marks
unlabeled pixels.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .errors import FormatError, ShapeError

IGNORE_INDEX = 65535
MAX_RANK = 5

MAGIC = b"TNS1"
_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<u2")}
_CODE_FOR = {np.dtype("float32"): 1, np.dtype("uint16"): 2}
_HEADER = struct.Struct("<4sBBH")


def check_shape(shape) -> tuple[int, ...]:
    shape = tuple(int(n) for n in shape)
    if not 1 <= len(shape) <= MAX_RANK:
        raise ShapeError(f"rank must be 1..{MAX_RANK}, got {len(shape)}")
    if any(n < 1 for n in shape):
        raise ShapeError(f"all extents must be >= 1, got {shape}")
    return shape


def tensor_fill(shape, value, dtype=np.float32) -> np.ndarray:
    return np.full(check_shape(shape), value, dtype=dtype)


def concat_channels(a: np.ndarray, b: np.ndarray, axis: int = 0) -> np.ndarray:
    """Concatenate along the channel axis; ``a``'s channels come first.

    ``axis`` is 0 for a single ``(c, t, h, w)`` tensor and 1 for batches.
    """
    if a.ndim != b.ndim:
        raise ShapeError(f"rank mismatch: {a.shape} vs {b.shape}")
    rest_a = a.shape[:axis] + a.shape[axis + 1:]
    rest_b = b.shape[:axis] + b.shape[axis + 1:]
    if rest_a != rest_b:
        raise ShapeError(f"non-channel extents differ: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=axis)


def pad_spatial_zero(x: np.ndarray, target_h: int, target_w: int, fill=0) -> np.ndarray:
    """Pad the last two axes up to ``(target_h, target_w)``.

    Content stays in the top-left corner. ``fill`` defaults to zero; label maps
    are padded with :data:`IGNORE_INDEX` by the tiling code.
    """
    h, w = x.shape[-2:]
    if target_h < h or target_w < w:
        raise ShapeError(f"target {(target_h, target_w)} smaller than source {(h, w)}")
    if (target_h, target_w) == (h, w):
        return x.copy()
    out = np.full(x.shape[:-2] + (target_h, target_w), fill, dtype=x.dtype)
    out[..., :h, :w] = x
    return out


def save_tensor(x: np.ndarray, path) -> None:
    x = np.asarray(x)
    code = _CODE_FOR.get(x.dtype)
    if code is None:
        raise FormatError("dtype", f"unsupported dtype {x.dtype}")
    shape = check_shape(x.shape)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, code, len(shape), 0))
        fh.write(struct.pack(f"<{len(shape)}I", *shape))
        fh.write(np.ascontiguousarray(x, dtype=_DTYPE_CODES[code]).tobytes())


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    return decode_tensor(raw, name=os.fspath(path))


def decode_tensor(raw: bytes, name: str = "<bytes>") -> np.ndarray:
    if len(raw) < _HEADER.size:
        raise FormatError("header", f"{name}: truncated header ({len(raw)} bytes)")
    magic, code, rank, reserved = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError("magic", f"{name}: expected {MAGIC!r}, got {magic!r}")
    if code not in _DTYPE_CODES:
        raise FormatError("dtype", f"{name}: unknown dtype code {code}")
    if not 1 <= rank <= MAX_RANK:
        raise FormatError("rank", f"{name}: rank {rank} outside 1..{MAX_RANK}")
    if reserved != 0:
        raise FormatError("reserved", f"{name}: reserved bytes must be zero")
    offset = _HEADER.size + 4 * rank
    if len(raw) < offset:
        raise FormatError("extents", f"{name}: truncated extents")
    shape = struct.unpack_from(f"<{rank}I", raw, _HEADER.size)
    if any(n < 1 for n in shape):
        raise FormatError("extents", f"{name}: zero extent in {shape}")
    dtype = _DTYPE_CODES[code]
    expected = int(np.prod(shape)) * dtype.itemsize
    payload = len(raw) - offset
    if payload < expected:
        raise FormatError("payload", f"{name}: truncated payload ({payload} of {expected} bytes)")
    if payload > expected:
        raise FormatError("payload", f"{name}: {payload - expected} trailing bytes")
    data = np.frombuffer(raw, dtype=dtype, offset=offset).reshape(shape)
    return data.astype(dtype.newbyteorder("="), copy=True)
