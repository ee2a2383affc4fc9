"""Blockwise tokenization of latent grids for the entropy transformers.

A representation (H, W, d) is split into non-overlapping current blocks of
size w_c x w_c, and previous representations into overlapping w_p x w_p
blocks with stride w_c, one per current block and centered on it. Blocks
are flattened in raster order; each token is the d-vector at one spatial
position. Out-of-grid positions (spatial padding, or the margin of edge
blocks) read as zeros.

All index arithmetic lives in precomputed gather tables so the same code
path serves numpy arrays (coding) and engine tensors (training, with
gradients flowing through the gather).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .engine import Tensor


class TokenizerError(Exception):
    pass


@dataclass(frozen=True)
class BlockGrid:
    """Block geometry for one (H, W) latent size."""

    height: int
    width: int
    w_c: int
    w_p: int

    def __post_init__(self):
        if self.w_p <= self.w_c or (self.w_p - self.w_c) % 2:
            raise TokenizerError("need w_p > w_c with even difference")

    @property
    def n_by(self) -> int:
        return -(-self.height // self.w_c)

    @property
    def n_bx(self) -> int:
        return -(-self.width // self.w_c)

    @property
    def n_blocks(self) -> int:
        return self.n_by * self.n_bx

    @property
    def margin(self) -> int:
        return (self.w_p - self.w_c) // 2

    def current_origins(self) -> np.ndarray:
        """(n_blocks, 2) top-left corner of every current block."""
        r = np.repeat(np.arange(self.n_by) * self.w_c, self.n_bx)
        c = np.tile(np.arange(self.n_bx) * self.w_c, self.n_by)
        return np.stack([r, c], axis=1)

    def _flat_index(self, window: int, offset: int) -> np.ndarray:
        origins = self.current_origins() - offset
        jr = np.repeat(np.arange(window), window)
        jc = np.tile(np.arange(window), window)
        rows = origins[:, :1] + jr[None, :]
        cols = origins[:, 1:] + jc[None, :]
        flat = rows * self.width + cols
        inside = (rows >= 0) & (rows < self.height) & (cols >= 0) & (cols < self.width)
        return np.where(inside, flat, -1)

    def current_index(self) -> np.ndarray:
        """(n_blocks, w_c^2) flat indices into H*W; -1 marks padding."""
        return self._flat_index(self.w_c, 0)

    def previous_index(self) -> np.ndarray:
        """(n_blocks, w_p^2) flat indices; -1 outside the grid."""
        return self._flat_index(self.w_p, self.margin)

    def inverse_index(self) -> np.ndarray:
        """(H*W,) token slot (block * w_c^2 + position) holding each cell."""
        idx = self.current_index().reshape(-1)
        inv = np.full(self.height * self.width, -1, dtype=np.int64)
        valid = idx >= 0
        inv[idx[valid]] = np.nonzero(valid)[0]
        return inv


@dataclass
class TokenBlockSet:
    """Tokens of one representation plus their provenance and geometry."""

    tokens: object  # (n_blocks, tokens_per_block, d) Tensor or ndarray
    provenance: str  # "current" | "previous"
    grid: BlockGrid


def _gather(values, index: np.ndarray):
    """Gather rows of (cells, d) by index with -1 reading as zeros."""
    if isinstance(values, Tensor):
        return engine.gather_rows(values, index)
    values = np.asarray(values)
    padded = np.concatenate(
        [values, np.zeros((1, values.shape[1]), dtype=values.dtype)])
    return padded[index]


def _flatten_grid(y, grid: BlockGrid):
    got = y.shape[:2]
    if got != (grid.height, grid.width):
        raise TokenizerError(f"grid mismatch: data {got}, grid "
                             f"{(grid.height, grid.width)}")
    if isinstance(y, Tensor):
        return engine.reshape(y, (grid.height * grid.width, y.shape[-1]))
    return np.asarray(y).reshape(grid.height * grid.width, y.shape[-1])


def extract_current_blocks(y, grid: BlockGrid) -> TokenBlockSet:
    """Split a (H, W, d) representation into current-block tokens."""
    flat = _flatten_grid(y, grid)
    tokens = _gather(flat, grid.current_index())
    return TokenBlockSet(tokens=tokens, provenance="current", grid=grid)


def extract_previous_blocks(y_prev, grid: BlockGrid) -> TokenBlockSet:
    """Context tokens: one centered w_p x w_p block per current block."""
    flat = _flatten_grid(y_prev, grid)
    tokens = _gather(flat, grid.previous_index())
    return TokenBlockSet(tokens=tokens, provenance="previous", grid=grid)


def reassemble(blocks: TokenBlockSet):
    """Exact inverse of extract_current_blocks (padding cells dropped)."""
    if blocks.provenance != "current":
        raise TokenizerError(
            "previous-block tokens overlap and cannot be reassembled")
    grid = blocks.grid
    inv = grid.inverse_index()
    tokens = blocks.tokens
    d = tokens.shape[-1]
    if isinstance(tokens, Tensor):
        flat = engine.reshape(tokens, (grid.n_blocks * grid.w_c ** 2, d))
        out = engine.gather_rows(flat, inv)
        return engine.reshape(out, (grid.height, grid.width, d))
    flat = np.asarray(tokens).reshape(grid.n_blocks * grid.w_c ** 2, d)
    return flat[inv].reshape(grid.height, grid.width, d)


def _offset_index(idx: np.ndarray, batch: int, stride: int) -> np.ndarray:
    offsets = (np.arange(batch) * stride).reshape((batch,) + (1,) * idx.ndim)
    return np.where(idx >= 0, idx[None] + offsets, -1)


def extract_batched(y: Tensor, grid: BlockGrid, which: str) -> Tensor:
    """Batched extraction: (B, H, W, d) -> (B * n_blocks, tokens, d).

    One gather node serves the whole batch so training graphs stay small.
    """
    b, h, w, d = y.shape
    if (h, w) != (grid.height, grid.width):
        raise TokenizerError("grid mismatch in batched extraction")
    idx = grid.current_index() if which == "current" else grid.previous_index()
    bidx = _offset_index(idx, b, h * w).reshape(b * grid.n_blocks, -1)
    flat = engine.reshape(y, (b * h * w, d))
    return engine.gather_rows(flat, bidx)


def reassemble_batched(tokens: Tensor, grid: BlockGrid, batch: int) -> Tensor:
    """Batched inverse for current-block tokens: -> (B, H, W, d)."""
    per = grid.n_blocks * grid.w_c ** 2
    d = tokens.shape[-1]
    inv = _offset_index(grid.inverse_index(), batch, per)
    flat = engine.reshape(tokens, (batch * per, d))
    out = engine.gather_rows(flat, inv.reshape(-1))
    return engine.reshape(out, (batch, grid.height, grid.width, d))
