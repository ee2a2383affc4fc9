"""Byte-oriented range coder over 16-bit quantized cumulative tables.

Carry-counting construction: 32-bit range, 64-bit low accumulator,
byte-wise renormalization whenever range drops below 2^24, so the range
always holds at least 16 bits of frequency precision. Integer arithmetic
only; no floating point anywhere near the coded bytes.

A stream is terminated by flushing five bytes (the first output byte is a
cache artifact that the decoder skips), so an empty stream costs exactly
5 bytes and per-stream overhead is bounded by 5 bytes plus the
renormalization loss of well under 0.01 bits per symbol.
"""

from __future__ import annotations

import numpy as np

PRECISION = 16
TOTAL = 1 << PRECISION
TOP = 1 << 24
MASK32 = 0xFFFFFFFF


class CoderError(Exception):
    pass


def validate_cdf(cum) -> np.ndarray:
    cum = np.asarray(cum, dtype=np.int64)
    if cum.ndim != 1 or cum.shape[0] < 2:
        raise CoderError("cumulative table needs at least one symbol")
    if cum[0] != 0 or cum[-1] != TOTAL:
        raise CoderError("cumulative table must run from 0 to 65536")
    if np.any(np.diff(cum) <= 0):
        raise CoderError("cumulative table must be strictly increasing")
    return cum


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def encode_index(self, index: int, cum) -> None:
        """Encode one symbol given its cumulative table (values 0..65536)."""
        cum_lo = int(cum[index])
        cum_hi = int(cum[index + 1])
        r = self.range >> PRECISION
        self.low += r * cum_lo
        if cum_hi == TOTAL:
            self.range -= r * cum_lo
        else:
            self.range = r * (cum_hi - cum_lo)
        while self.range < TOP:
            self._shift_low()
            self.range <<= 8

    def _shift_low(self) -> None:
        if self.low < 0xFF000000 or self.low > MASK32:
            carry = self.low >> 32
            temp = self.cache
            while self.cache_size:
                self.out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
            self.cache = (self.low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (self.low << 8) & MASK32

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 1  # first byte is the encoder's cache artifact
        self.range = MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next_byte()

    def _next_byte(self) -> int:
        if self.pos >= len(self.data):
            raise CoderError("truncated stream")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def decode_index(self, cum) -> int:
        """Decode one symbol index under the given cumulative table."""
        r = self.range >> PRECISION
        dv = self.code // r
        if dv >= TOTAL:
            dv = TOTAL - 1
        index = int(np.searchsorted(cum, dv, side="right")) - 1
        cum_lo = int(cum[index])
        cum_hi = int(cum[index + 1])
        self.code -= r * cum_lo
        if cum_hi == TOTAL:
            self.range -= r * cum_lo
        else:
            self.range = r * (cum_hi - cum_lo)
        while self.range < TOP:
            self.code = ((self.code << 8) | self._next_byte()) & 0xFFFFFFFFFF
            self.range <<= 8
        return index


def encode_symbols(symbols, cdfs) -> bytes:
    """Encode integer symbols, each under its own cumulative table.

    Symbols live in [-L, L] with L inferred from each table's size
    (table covers 2L+1 symbols; index = symbol + L).
    """
    symbols = np.asarray(symbols, dtype=np.int64)
    if len(symbols) != len(cdfs):
        raise CoderError("one cumulative table is required per symbol")
    enc = RangeEncoder()
    for sym, cum in zip(symbols, cdfs):
        ns = len(cum) - 1
        bound = (ns - 1) // 2
        index = int(sym) + bound
        if index < 0 or index >= ns:
            raise CoderError(f"symbol {int(sym)} outside alphabet of size {ns}")
        enc.encode_index(index, cum)
    return enc.finish()


def decode_symbols(data: bytes, cdfs) -> np.ndarray:
    """Inverse of encode_symbols for a known, fixed table sequence."""
    dec = RangeDecoder(data)
    out = np.empty(len(cdfs), dtype=np.int64)
    for i, cum in enumerate(cdfs):
        bound = (len(cum) - 2) // 2
        out[i] = dec.decode_index(cum) - bound
    return out
