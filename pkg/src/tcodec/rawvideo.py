"""Raw video file format shared by the CLI, the synthesizer and tests.

    magic "VCTY" | u32 frames | u32 height | u32 width | u8 channels
    | float32 little-endian pixels, frame-major (frames, h, w, c)

Pixel values are expected in [0, 1].
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"VCTY"
_HEADER = "<4sIIIB"
_HEADER_SIZE = struct.calcsize(_HEADER)


class RawVideoError(Exception):
    pass


def dump_video(frames: np.ndarray) -> bytes:
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 4:
        raise RawVideoError("video must be (frames, h, w, channels)")
    f, h, w, c = frames.shape
    head = struct.pack(_HEADER, MAGIC, f, h, w, c)
    return head + np.ascontiguousarray(frames).astype("<f4").tobytes()


def parse_video(blob: bytes) -> np.ndarray:
    if len(blob) < _HEADER_SIZE:
        raise RawVideoError("truncated raw video header")
    magic, f, h, w, c = struct.unpack_from(_HEADER, blob, 0)
    if magic != MAGIC:
        raise RawVideoError("bad magic: not a raw video file")
    need = _HEADER_SIZE + 4 * f * h * w * c
    if len(blob) != need:
        raise RawVideoError(
            f"raw video size mismatch: expected {need} bytes, got {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", offset=_HEADER_SIZE)
    return np.ascontiguousarray(data.reshape(f, h, w, c))


def save_video(path, frames: np.ndarray) -> None:
    with open(path, "wb") as fp:
        fp.write(dump_video(frames))


def load_video(path) -> np.ndarray:
    with open(path, "rb") as fp:
        return parse_video(fp.read())
