"""Binary file formats: WLCP checkpoints, WLFT feature files, WLFG frame grids.

All integers are little-endian. WLCP layout:
  magic "WLCP", u32 version, u32 entry count, then per entry
  {u32 name length, utf-8 name bytes, u8 rank, u64 dims..., f32 payload}.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict

import numpy as np

from .errors import InputError

CHECKPOINT_MAGIC = b"WLCP"
FEATURE_MAGIC = b"WLFT"
FRAMEGRID_MAGIC = b"WLFG"
FORMAT_VERSION = 1


def write_checkpoint(path, entries: Dict[str, np.ndarray]) -> None:
    buf = bytearray()
    buf += CHECKPOINT_MAGIC
    buf += struct.pack("<II", FORMAT_VERSION, len(entries))
    for name, arr in entries.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        nb = name.encode("utf-8")
        buf += struct.pack("<I", len(nb))
        buf += nb
        buf += struct.pack("<B", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        buf += arr.tobytes()
    Path(path).write_bytes(bytes(buf))


def read_checkpoint(path) -> Dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise InputError(f"{path}: bad checkpoint magic")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != FORMAT_VERSION:
        raise InputError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    out: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<B", raw, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}Q", raw, off)
        off += 8 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=off).reshape(dims)
        off += 4 * n
        out[name] = arr.copy()
    if off != len(raw):
        raise InputError(f"{path}: trailing bytes in checkpoint")
    return out


def write_features(path, features: np.ndarray) -> None:
    """One video's [L, D] float32 feature matrix."""
    features = np.ascontiguousarray(features, dtype="<f4")
    if features.ndim != 2:
        raise InputError("features must be [L, D]")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<IQQ", FORMAT_VERSION, *features.shape))
        fh.write(features.tobytes())


def read_features(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != FEATURE_MAGIC:
        raise InputError(f"{path}: bad feature-file magic")
    version, length, dim = struct.unpack_from("<IQQ", raw, 4)
    if version != FORMAT_VERSION:
        raise InputError(f"{path}: unsupported feature version {version}")
    expect = 24 + 4 * length * dim
    if len(raw) != expect:
        raise InputError(f"{path}: feature payload length mismatch")
    return np.frombuffer(raw, dtype="<f4", offset=24).reshape(length, dim).copy()


def write_frame_grid(path, frames: np.ndarray) -> None:
    """Raw [T, H, W, C] frame grid of unit-interval float32 intensities."""
    frames = np.ascontiguousarray(frames, dtype="<f4")
    if frames.ndim != 4:
        raise InputError("frame grid must be [T, H, W, C]")
    with open(path, "wb") as fh:
        fh.write(FRAMEGRID_MAGIC)
        fh.write(struct.pack("<QQQQ", *frames.shape))
        fh.write(frames.tobytes())


def read_frame_grid(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != FRAMEGRID_MAGIC:
        raise InputError(f"{path}: bad frame-grid magic")
    t, h, w, c = struct.unpack_from("<QQQQ", raw, 4)
    expect = 36 + 4 * t * h * w * c
    if len(raw) != expect:
        raise InputError(f"{path}: frame-grid payload length mismatch")
    return np.frombuffer(raw, dtype="<f4", offset=36).reshape(t, h, w, c).copy()
