"""Bitstream container: versioned header plus per-frame coded payloads.

Layout (all integers little-endian):

    magic "VCT1" | u16 version | u32 frame count | u32 width | u32 height
    | u16 d_c | u16 latent bound L | u16 w_c | u16 w_p
    | 8-byte model hash | u8 flags (bit 0: latent residual on)
    | u16 gop size (0 = context never reset)
    then per frame: u32 payload length | payload bytes

Width/height are the original frame dimensions before padding. The model
hash binds a stream to the exact checkpoint that produced it; decoding
with any other model is rejected up front.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

MAGIC = b"VCT1"
VERSION = 1
FLAG_LRP = 1


class ContainerError(Exception):
    pass


@dataclass
class BitstreamHeader:
    frame_count: int
    width: int
    height: int
    d_c: int
    latent_bound_l: int
    w_c: int
    w_p: int
    model_hash: bytes
    lrp: bool
    gop_size: int = 0
    version: int = VERSION

    def __post_init__(self):
        if len(self.model_hash) != 8:
            raise ContainerError("model hash must be exactly 8 bytes")


_FIXED = "<4sHIII4H8sBH"
_FIXED_SIZE = struct.calcsize(_FIXED)


def write_container(header: BitstreamHeader, payloads: list[bytes]) -> bytes:
    if len(payloads) != header.frame_count:
        raise ContainerError("payload count does not match header frame count")
    flags = FLAG_LRP if header.lrp else 0
    out = bytearray(struct.pack(
        _FIXED, MAGIC, header.version, header.frame_count, header.width,
        header.height, header.d_c, header.latent_bound_l, header.w_c,
        header.w_p, header.model_hash, flags, header.gop_size))
    for payload in payloads:
        out += struct.pack("<I", len(payload))
        out += payload
    return bytes(out)


def read_container(blob: bytes) -> tuple[BitstreamHeader, list[bytes]]:
    if len(blob) < _FIXED_SIZE:
        raise ContainerError("truncated container header")
    (magic, version, frame_count, width, height, d_c, bound, w_c, w_p,
     model_hash, flags, gop) = struct.unpack_from(_FIXED, blob, 0)
    if magic != MAGIC:
        raise ContainerError("bad magic: not a coded video stream")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    header = BitstreamHeader(
        frame_count=frame_count, width=width, height=height, d_c=d_c,
        latent_bound_l=bound, w_c=w_c, w_p=w_p, model_hash=model_hash,
        lrp=bool(flags & FLAG_LRP), gop_size=gop, version=version)
    payloads = []
    pos = _FIXED_SIZE
    for _ in range(frame_count):
        if pos + 4 > len(blob):
            raise ContainerError("truncated payload table")
        (n,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        if pos + n > len(blob):
            raise ContainerError("truncated frame payload")
        payloads.append(blob[pos:pos + n])
        pos += n
    if pos != len(blob):
        raise ContainerError("trailing bytes after last payload")
    return header, payloads
