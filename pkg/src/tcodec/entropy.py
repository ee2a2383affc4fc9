"""Transformer entropy model.

Three stacks cooperate per block column:

* a per-frame context encoder applied separately to each previous
  representation's tokens (output reusable across frames),
* a temporal mixer run on the concatenation of both context encodings
  (with a learned per-frame embedding) whose output is the conditioning
  memory for the predictor,
* a masked predictor that alternates causally-masked self-attention,
  cross-attention onto the memory, and a feed-forward, emitting one
  (mean, scale) pair per latent channel for every in-block position.

The predictor input is the block's token sequence shifted right behind a
learned start token, so position k's distribution depends only on tokens
before k. One parallel masked pass therefore equals k sequential
single-step calls bit-exactly, which coding relies on.
"""

from __future__ import annotations

import numpy as np
from scipy import special as _sp

from . import engine
from .config import EntropyConfig
from .engine import Tensor

TOTAL = 1 << 16


class EntropyModelError(Exception):
    pass


def _linear_init(rng, din, dout, dtype, zero=False):
    if zero:
        return np.zeros((din, dout), dtype=dtype)
    return rng.normal(0.0, np.sqrt(1.0 / din), (din, dout)).astype(dtype)


class Dense:
    def __init__(self, rng, din, dout, dtype, zero=False):
        self.w = engine.param(_linear_init(rng, din, dout, dtype, zero))
        self.b = engine.param(np.zeros(dout, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return engine.linear(x, self.w, self.b)

    def params(self):
        return {"w": self.w, "b": self.b}


class LayerNorm:
    def __init__(self, d, dtype):
        self.g = engine.param(np.ones(d, dtype=dtype))
        self.b = engine.param(np.zeros(d, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return engine.layer_norm(x, self.g, self.b)

    def params(self):
        return {"g": self.g, "b": self.b}


class SelfAttention:
    def __init__(self, rng, d, heads, dtype):
        self.heads = heads
        self.q = Dense(rng, d, d, dtype)
        self.k = Dense(rng, d, d, dtype)
        self.v = Dense(rng, d, d, dtype)
        self.o = Dense(rng, d, d, dtype)

    def __call__(self, x: Tensor, mask=None, memory: Tensor | None = None) -> Tensor:
        src = x if memory is None else memory
        att = engine.attention(self.q(x), self.k(src), self.v(src),
                               self.heads, mask=mask)
        return self.o(att)

    def params(self):
        out = {}
        for name, mod in (("q", self.q), ("k", self.k), ("v", self.v), ("o", self.o)):
            for k, v in mod.params().items():
                out[f"{name}.{k}"] = v
        return out


class TransformerLayer:
    """Pre-norm block: self-attention, optional cross-attention, MLP."""

    def __init__(self, rng, d, heads, dtype, cross=False):
        self.ln1 = LayerNorm(d, dtype)
        self.attn = SelfAttention(rng, d, heads, dtype)
        self.cross = None
        self.ln_cross = None
        if cross:
            self.ln_cross = LayerNorm(d, dtype)
            self.cross = SelfAttention(rng, d, heads, dtype)
        self.ln2 = LayerNorm(d, dtype)
        self.fc1 = Dense(rng, d, 4 * d, dtype)
        self.fc2 = Dense(rng, 4 * d, d, dtype)

    def __call__(self, x: Tensor, mask=None, memory: Tensor | None = None) -> Tensor:
        x = x + self.attn(self.ln1(x), mask=mask)
        if self.cross is not None:
            x = x + self.cross(self.ln_cross(x), memory=memory)
        x = x + self.fc2(engine.gelu(self.fc1(self.ln2(x))))
        return x

    def params(self):
        groups = [("ln1", self.ln1), ("attn", self.attn), ("ln2", self.ln2),
                  ("fc1", self.fc1), ("fc2", self.fc2)]
        if self.cross is not None:
            groups += [("lnx", self.ln_cross), ("xattn", self.cross)]
        out = {}
        for name, mod in groups:
            for k, v in mod.params().items():
                out[f"{name}.{k}"] = v
        return out


class EntropyModel:
    def __init__(self, cfg: EntropyConfig, d_c: int, rng, dtype=np.float32):
        self.cfg = cfg
        self.d_c = d_c
        d = cfg.d_t
        self.embed_prev = Dense(rng, d_c, d, dtype)
        self.embed_cur = Dense(rng, d_c, d, dtype)
        # separate learned position tables for context and current streams
        self.pos_prev = engine.param(
            rng.normal(0.0, 0.02, (cfg.w_p ** 2, d)).astype(dtype))
        self.pos_cur = engine.param(
            rng.normal(0.0, 0.02, (cfg.w_c ** 2, d)).astype(dtype))
        self.temporal = engine.param(
            rng.normal(0.0, 0.02, (2, 1, d)).astype(dtype))
        self.start_token = engine.param(
            rng.normal(0.0, 0.02, (d_c,)).astype(dtype))
        self.sep_layers = [TransformerLayer(rng, d, cfg.heads, dtype)
                           for _ in range(cfg.layers_sep)]
        self.joint_layers = [TransformerLayer(rng, d, cfg.heads, dtype)
                             for _ in range(cfg.layers_joint)]
        self.cur_layers = [TransformerLayer(rng, d, cfg.heads, dtype, cross=True)
                           for _ in range(cfg.layers_cur)]
        self.head_ln = LayerNorm(d, dtype)
        # zero-initialized head: initial predictions are mean 0, scale
        # min_scale + softplus(0) for every symbol
        self.head = Dense(rng, d, 2 * d_c, dtype, zero=True)
        seq = cfg.w_c ** 2
        self._causal_mask = np.tril(np.ones((seq, seq), dtype=bool))

    # -- context side -------------------------------------------------------
    def encode_context_frame(self, tokens: Tensor) -> Tensor:
        """Per-frame context encoding, (n_blocks, w_p^2, d_c) -> (..., d_t).

        Depends only on that frame's tokens, so callers may cache the
        result and reuse it while the frame stays in the context window.
        """
        h = self.embed_prev(tokens) + self.pos_prev
        for layer in self.sep_layers:
            h = layer(h)
        return h

    def mix_context(self, encoded: list[Tensor]) -> Tensor:
        """Cross-time mixing of the two per-frame encodings (older first)."""
        if len(encoded) != 2:
            raise EntropyModelError("expected exactly two context encodings")
        tagged = [encoded[i] + self.temporal[i] for i in range(2)]
        h = engine.concat(tagged, axis=-2)
        for layer in self.joint_layers:
            h = layer(h)
        return h

    # -- prediction side ----------------------------------------------------
    def predict_all_positions(self, cur_tokens: Tensor, memory: Tensor):
        """Distributions for every in-block position in one masked pass.

        cur_tokens: (n_blocks, w_c^2, d_c) ground-truth (or so-far decoded)
        tokens; memory: (n_blocks, 2 w_p^2, d_t). Returns (mu, sigma,
        features); position k of the output never sees token k or later.
        """
        seq = self.cfg.w_c ** 2
        if cur_tokens.shape[-2] != seq:
            raise EntropyModelError(
                f"token sequence must have length {seq}, got {cur_tokens.shape}")
        nb = cur_tokens.shape[0]
        start = engine.broadcast_to(
            engine.reshape(self.start_token, (1, 1, self.d_c)),
            (nb, 1, self.d_c))
        inp = engine.concat([start, cur_tokens[:, :seq - 1, :]], axis=1)
        h = self.embed_cur(inp) + self.pos_cur
        for layer in self.cur_layers:
            h = layer(h, mask=self._causal_mask, memory=memory)
        features = h
        out = self.head(self.head_ln(h))
        mu = out[:, :, :self.d_c]
        raw = out[:, :, self.d_c:]
        sigma = engine.softplus(raw) + engine.constant(
            self.cfg.min_scale, dtype=raw.dtype)
        return mu, sigma, features

    def predict_next(self, prefix_tokens: Tensor, memory: Tensor):
        """Distribution for the next position given a decoded prefix.

        prefix_tokens: (n_blocks, k, d_c) with 0 <= k < w_c^2. Runs the
        same fixed-shape masked pass as predict_all_positions on a
        zero-padded buffer and reads row k, so sender and receiver compute
        bit-identical parameters.
        """
        seq = self.cfg.w_c ** 2
        k = prefix_tokens.shape[1]
        if k >= seq:
            raise EntropyModelError("prefix already covers the whole block")
        nb = prefix_tokens.shape[0]
        pad = engine.constant(
            np.zeros((nb, seq - k, self.d_c)), dtype=prefix_tokens.dtype)
        buffer = engine.concat([prefix_tokens, pad], axis=1) if k else pad
        mu, sigma, features = self.predict_all_positions(buffer, memory)
        return mu[:, k, :], sigma[:, k, :], features[:, k, :]

    def params(self):
        out = {
            "pos_prev": self.pos_prev,
            "pos_cur": self.pos_cur,
            "temporal": self.temporal,
            "start_token": self.start_token,
        }
        for name, mod in (("embed_prev", self.embed_prev),
                          ("embed_cur", self.embed_cur),
                          ("head_ln", self.head_ln), ("head", self.head)):
            for k, v in mod.params().items():
                out[f"{name}.{k}"] = v
        for group, layers in (("sep", self.sep_layers),
                              ("joint", self.joint_layers),
                              ("cur", self.cur_layers)):
            for i, layer in enumerate(layers):
                for k, v in layer.params().items():
                    out[f"{group}.{i}.{k}"] = v
        return out


# -- PMF discretization -------------------------------------------------------

def discretize(mu: np.ndarray, sigma: np.ndarray, bound: int) -> np.ndarray:
    """Integer cumulative tables from Gaussian parameters.

    The continuous model is the Gaussian convolved with a unit-width box:
    P(k) = Phi((k+0.5-mu)/sigma) - Phi((k-0.5-mu)/sigma) for symbols k in
    [-bound, bound], with both tails folded into the boundary symbols.
    Frequencies are integers >= 1 summing to exactly 2^16; the allocation
    (floor plus largest-remainder) is deterministic, which makes the
    tables identical on sender and receiver.

    Returns cumulative tables of shape mu.shape + (2*bound + 2,).
    """
    mu64 = np.asarray(mu, dtype=np.float64)
    s64 = np.asarray(sigma, dtype=np.float64)
    if not (np.all(np.isfinite(mu64)) and np.all(np.isfinite(s64))):
        raise EntropyModelError("non-finite distribution parameters")
    if np.any(s64 <= 0):
        raise EntropyModelError("scales must be positive")
    ns = 2 * bound + 1
    edges = np.arange(-bound, bound + 1, dtype=np.float64)
    upper = _sp.ndtr((edges + 0.5 - mu64[..., None]) / s64[..., None])
    lower = _sp.ndtr((edges - 0.5 - mu64[..., None]) / s64[..., None])
    upper[..., -1] = 1.0
    lower[..., 0] = 0.0
    pmf = np.maximum(upper - lower, 0.0)

    scaled = pmf * (TOTAL - ns)
    base = np.floor(scaled)
    freqs = base.astype(np.int64) + 1
    remainder = TOTAL - freqs.sum(axis=-1)
    frac = scaled - base
    order = np.argsort(-frac, axis=-1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.broadcast_to(np.arange(ns), order.shape).copy(), axis=-1)
    freqs = freqs + (rank < remainder[..., None])

    cum = np.zeros(mu64.shape + (ns + 1,), dtype=np.int64)
    np.cumsum(freqs, axis=-1, out=cum[..., 1:])
    return cum


def bits_estimate(symbols: np.ndarray, cum: np.ndarray) -> float:
    """Exact coded-size estimate under the quantized integer PMFs.

    Sum of -log2(freq/2^16) over all symbols, using the same tables the
    range coder consumes; the actual stream differs only by bounded coder
    overhead. symbols: integers in [-bound, bound]; cum: matching tables,
    shape symbols.shape + (2*bound + 2,).
    """
    symbols = np.asarray(symbols, dtype=np.int64)
    ns = cum.shape[-1] - 1
    bound = (ns - 1) // 2
    idx = symbols + bound
    if idx.min() < 0 or idx.max() >= ns:
        raise EntropyModelError("symbol outside alphabet")
    lo = np.take_along_axis(cum, idx[..., None], axis=-1)[..., 0]
    hi = np.take_along_axis(cum, idx[..., None] + 1, axis=-1)[..., 0]
    freqs = (hi - lo).astype(np.float64)
    return float(np.sum(16.0 - np.log2(freqs)))
