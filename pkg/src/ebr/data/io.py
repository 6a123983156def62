"""Binary tensor files.

EBR1 layout (little-endian)::

    b"EBR1" | u8 dtype (0=f32, 1=f64, 2=u8) | u8 rank r | r x u32 dims | payload

IDX is the big-endian MNIST container (magic 0x00000803 images,
0x00000801 labels); gzip-compressed files are accepted.
"""
from __future__ import annotations

import gzip
import os
import struct
from pathlib import Path

import numpy as np

__all__ = ["FormatError", "tensor_io_write", "tensor_io_read", "load_idx", "write_idx",
           "encode_ebr", "decode_ebr"]

MAGIC = b"EBR1"
_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_KINDS = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("uint8"): 2}


class FormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def encode_ebr(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype not in _KINDS:
        raise TypeError(f"EBR1 stores float32, float64 or uint8, not {arr.dtype}")
    if arr.ndim > 255:
        raise ValueError("rank above 255")
    code = _KINDS[arr.dtype]
    head = MAGIC + struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes()


def decode_ebr(buf: bytes) -> np.ndarray:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError("bad magic, expected b'EBR1'", 0)
    if len(buf) < 6:
        raise FormatError("truncated header", len(buf))
    code, rank = buf[4], buf[5]
    if code not in _CODES:
        raise FormatError(f"unknown dtype code {code}", 4)
    end = 6 + 4 * rank
    if len(buf) < end:
        raise FormatError("truncated dimension list", len(buf))
    dims = struct.unpack(f"<{rank}I", buf[6:end])
    dt = _CODES[code]
    need = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
    if len(buf) - end < need:
        raise FormatError(f"truncated payload, expected {need} bytes", len(buf))
    if len(buf) - end > need:
        raise FormatError("trailing bytes after payload", end + need)
    arr = np.frombuffer(buf, dtype=dt, count=need // dt.itemsize, offset=end)
    return arr.astype(dt.newbyteorder("="), copy=True).reshape(dims)


def tensor_io_write(path, arr: np.ndarray) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_ebr(arr))
    os.replace(tmp, path)


def tensor_io_read(path) -> np.ndarray:
    return decode_ebr(Path(path).read_bytes())


def _read_maybe_gz(path) -> bytes:
    raw = Path(path).read_bytes()
    return gzip.decompress(raw) if raw[:2] == b"\x1f\x8b" else raw


def load_idx(path) -> np.ndarray:
    """Images as float32 in [0, 1] (``(n, rows, cols)``); labels as int64."""
    buf = _read_maybe_gz(path)
    if len(buf) < 4:
        raise FormatError("truncated IDX header", len(buf))
    magic = struct.unpack(">I", buf[:4])[0]
    if magic == 0x00000803:
        rank = 3
    elif magic == 0x00000801:
        rank = 1
    else:
        raise FormatError(f"bad IDX magic 0x{magic:08x}", 0)
    end = 4 + 4 * rank
    if len(buf) < end:
        raise FormatError("truncated IDX dimensions", len(buf))
    dims = struct.unpack(f">{rank}I", buf[4:end])
    n = int(np.prod(dims))
    if len(buf) - end < n:
        raise FormatError(f"truncated IDX payload, expected {n} bytes", len(buf))
    data = np.frombuffer(buf, dtype=np.uint8, count=n, offset=end).reshape(dims)
    if rank == 1:
        return data.astype(np.int64)
    return data.astype(np.float32) / np.float32(255.0)


def write_idx(path, arr: np.ndarray) -> None:
    """Write uint8 images ``(n, rows, cols)`` or labels ``(n,)`` as IDX."""
    arr = np.asarray(arr)
    if arr.dtype != np.uint8 and arr.ndim == 3:
        raise TypeError("IDX images must be uint8")
    if arr.ndim == 3:
        head = struct.pack(">I3I", 0x00000803, *arr.shape)
    elif arr.ndim == 1:
        head = struct.pack(">II", 0x00000801, arr.shape[0])
    else:
        raise ValueError(f"IDX writer handles rank 1 or 3, got {arr.ndim}")
    Path(path).write_bytes(head + arr.astype(np.uint8).tobytes())
