"""Checkpoint serialization: named float32 tensors in a flat binary file.

Layout (all integers little-endian, no alignment padding):

    magic "VCTW" | u16 version | u32 tensor count
    per tensor: u16 name length | name (UTF-8) | u8 rank | u32 dims...
                | raw float32 payload (little-endian, row-major)
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"VCTW"
VERSION = 1


class CheckpointError(Exception):
    pass


def dump_weights(weights: dict[str, np.ndarray]) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HI", VERSION, len(weights))
    for name, arr in weights.items():
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        enc = name.encode("utf-8")
        out += struct.pack("<H", len(enc))
        out += enc
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.astype("<f4").tobytes()
    return bytes(out)


def parse_weights(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 10
    weights: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        dims = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        end = pos + 4 * n
        if end > len(blob):
            raise CheckpointError("truncated checkpoint")
        arr = np.frombuffer(blob[pos:end], dtype="<f4").reshape(dims)
        pos = end
        weights[name] = np.ascontiguousarray(arr)
    if pos != len(blob):
        raise CheckpointError("trailing bytes after last tensor")
    return weights


def save_weights(path, weights: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(dump_weights(weights))


def load_weights(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return parse_weights(f.read())
