"""End-to-end compression pipeline.

Coding walks frames in order. Per frame: the analysis transform produces
a quantized representation; the entropy model, conditioned on the rolling
two-frame context window (zero representations before the first frame and
after an optional periodic context reset), emits per-symbol cumulative
tables; a range coder turns symbols into one payload per frame.

Symbol interleaving inside a payload is fixed and normative: position
within block (outermost), then block in raster order, then channel. All
blocks' distributions for step k+1 can therefore be computed in one
batched pass while step k's symbols stream out.

Decoding mirrors this exactly. Every step re-runs the same fixed-shape
masked pass the encoder used (decoded prefix in place, zeros beyond), so
receiver-side distribution parameters match the sender bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine
from .config import DOWNSCALE
from .container import BitstreamHeader, read_container, write_container
from .engine import Tensor
from .entropy import bits_estimate, discretize
from .model import VideoCodecModel
from .rangecoder import CoderError, RangeDecoder, RangeEncoder
from .tokenizer import (BlockGrid, TokenBlockSet, extract_current_blocks,
                        extract_previous_blocks, reassemble)
from .transforms import crop_frame, pad_frame


class CodecPipelineError(Exception):
    pass


def latent_grid_for(height: int, width: int, w_c: int, w_p: int) -> BlockGrid:
    hp = -(-height // DOWNSCALE)
    wp = -(-width // DOWNSCALE)
    return BlockGrid(hp, wp, w_c, w_p)


@dataclass
class CodecSession:
    """Model plus rolling context for one stream.

    context holds the last two representations, older first, as float
    grids of integers; zero grids stand in for missing frames. The
    per-frame context encoding is cached under a frame uid and survives
    one roll (the same encoding serves a frame in both the newer and the
    older slot).
    """

    model: VideoCodecModel
    grid: BlockGrid
    context: list = field(default_factory=list)
    _uids: list = field(default_factory=list)
    _sep_cache: dict = field(default_factory=dict)
    _next_uid: int = 0

    def __post_init__(self):
        self.reset_context()

    def reset_context(self) -> None:
        zeros = np.zeros(
            (self.grid.height, self.grid.width, self.model.cfg.transform.d_c),
            dtype=np.float32)
        self.context = [zeros, zeros.copy()]
        self._uids = ["zero", "zero"]
        self._sep_cache = {k: v for k, v in self._sep_cache.items() if k == "zero"}

    def push_context(self, y_grid: np.ndarray) -> None:
        uid = self._next_uid
        self._next_uid += 1
        self.context = [self.context[1], np.asarray(y_grid, dtype=np.float32)]
        self._uids = [self._uids[1], uid]
        self._sep_cache = {k: v for k, v in self._sep_cache.items()
                           if k in self._uids or k == "zero"}

    def _encoded_slot(self, slot: int) -> np.ndarray:
        visible = self.model.cfg.context_frames >= (2 - slot)
        uid = self._uids[slot] if visible else "zero"
        if uid not in self._sep_cache:
            if uid == "zero":
                grid_data = np.zeros_like(self.context[0])
            else:
                grid_data = self.context[slot]
            tokens = extract_previous_blocks(grid_data, self.grid).tokens
            enc = self.model.entropy.encode_context_frame(
                engine.constant(tokens, dtype=self.model.dtype))
            self._sep_cache[uid] = enc.data
        return self._sep_cache[uid]

    def memory(self) -> Tensor:
        """Conditioning features for the current frame's blocks."""
        older = engine.constant(self._encoded_slot(0), dtype=self.model.dtype)
        newer = engine.constant(self._encoded_slot(1), dtype=self.model.dtype)
        return self.model.entropy.mix_context([older, newer])


def _interleave(arr: np.ndarray) -> np.ndarray:
    """(n_blocks, positions, channels) -> coding order (pos, block, chan)."""
    return np.ascontiguousarray(arr.transpose(1, 0, 2))


def encode_frame_payload(session: CodecSession, y_grid: np.ndarray,
                         memory: Tensor) -> tuple[bytes, float]:
    """Range-code one representation; returns (payload, estimated bits)."""
    model = session.model
    bound = model.cfg.transform.latent_bound_l
    grid = session.grid
    tokens = extract_current_blocks(y_grid.astype(np.float32), grid).tokens
    mu, sigma, _ = model.entropy.predict_all_positions(
        engine.constant(tokens, dtype=model.dtype), memory)
    cum = discretize(mu.data, sigma.data, bound)

    sym_tokens = extract_current_blocks(y_grid.astype(np.int64), grid).tokens
    syms = _interleave(sym_tokens).reshape(-1)
    tables = _interleave(cum).reshape(len(syms), -1)
    est = bits_estimate(syms, tables)
    enc = RangeEncoder()
    for i, sym in enumerate(syms):
        enc.encode_index(int(sym) + bound, tables[i])
    return enc.finish(), est


def decode_frame_payload(session: CodecSession, payload: bytes,
                         memory: Tensor) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of encode_frame_payload.

    Returns (representation grid int64, predictor features (nb, w_c^2,
    d_t)). A corrupt payload yields wrong symbols or stops early (the
    remaining symbols read as zero); decoding always terminates.
    """
    model = session.model
    cfgt = model.cfg.transform
    bound = cfgt.latent_bound_l
    grid = session.grid
    seq = grid.w_c ** 2
    nb = grid.n_blocks
    d_c = cfgt.d_c
    tokens = np.zeros((nb, seq, d_c), dtype=np.float32)
    feats = np.zeros((nb, seq, model.cfg.entropy.d_t), dtype=np.float32)
    try:
        dec = RangeDecoder(payload)
    except CoderError:
        dec = None
    for k in range(seq):
        prefix = engine.constant(tokens[:, :k, :], dtype=model.dtype)
        mu, sigma, feat = model.entropy.predict_next(prefix, memory)
        feats[:, k, :] = feat.data
        if dec is None:
            continue
        cum = discretize(mu.data, sigma.data, bound)  # (nb, d_c, ns+1)
        for b in range(nb):
            for c in range(d_c):
                try:
                    sym = dec.decode_index(cum[b, c]) - bound
                except CoderError:
                    dec = None
                    break
                tokens[b, k, c] = sym
            if dec is None:
                break
    blocks = TokenBlockSet(tokens=tokens.astype(np.int64), provenance="current",
                           grid=grid)
    return reassemble(blocks), feats


def reconstruct_frame(model: VideoCodecModel, y_grid: np.ndarray,
                      feats: np.ndarray | None, size: tuple[int, int],
                      grid: BlockGrid) -> np.ndarray:
    """Decode a representation to pixels; `feats` enables latent refinement."""
    y_t = engine.constant(y_grid.astype(np.float32), dtype=model.dtype)
    if feats is not None:
        blocks = TokenBlockSet(tokens=feats, provenance="current", grid=grid)
        z = engine.constant(reassemble(blocks), dtype=model.dtype)
        y_t = model.latent_residual.fuse(y_t, z)
    x = model.decoder(y_t)
    frame = np.clip(x.data, 0.0, 1.0).astype(np.float32)
    return crop_frame(frame, size[0], size[1])


def frame_to_representation(model: VideoCodecModel, frame: np.ndarray) -> np.ndarray:
    """Analysis + rounding: one frame to its integer symbol grid."""
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise CodecPipelineError(f"expected (h, w, 3) frame, got {frame.shape}")
    padded = pad_frame(frame.astype(np.float32))
    latent = model.encoder(engine.constant(padded, dtype=model.dtype))
    bound = model.cfg.transform.latent_bound_l
    q = np.clip(engine.round_half_away(latent.data), -bound, bound)
    return q.astype(np.int64)


@dataclass
class CompressStats:
    payload_bits: int
    estimate_bits: float
    pixels: int

    @property
    def bpp_actual(self) -> float:
        return self.payload_bits / self.pixels

    @property
    def bpp_estimate(self) -> float:
        return self.estimate_bits / self.pixels


def compress_video(frames: np.ndarray, model: VideoCodecModel,
                   gop_size: int | None = None) -> tuple[bytes, CompressStats]:
    """Compress (F, h, w, 3) pixels in [0, 1] to a container byte string."""
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise CodecPipelineError(f"expected (F, h, w, 3) video, got {frames.shape}")
    f, h, w, _ = frames.shape
    cfg = model.cfg
    gop = cfg.gop_size if gop_size is None else gop_size
    grid = latent_grid_for(h, w, cfg.entropy.w_c, cfg.entropy.w_p)
    session = CodecSession(model=model, grid=grid)
    payloads = []
    total_est = 0.0
    with engine.no_grad():
        for i in range(f):
            if gop and i % gop == 0:
                session.reset_context()
            try:
                y = frame_to_representation(model, frames[i])
                memory = session.memory()
                payload, est = encode_frame_payload(session, y, memory)
            except Exception as exc:
                raise CodecPipelineError(f"frame {i}: {exc}") from exc
            payloads.append(payload)
            total_est += est
            session.push_context(y.astype(np.float32))
    header = BitstreamHeader(
        frame_count=f, width=w, height=h, d_c=cfg.transform.d_c,
        latent_bound_l=cfg.transform.latent_bound_l, w_c=cfg.entropy.w_c,
        w_p=cfg.entropy.w_p, model_hash=model.model_hash, lrp=cfg.lrp,
        gop_size=gop)
    blob = write_container(header, payloads)
    stats = CompressStats(payload_bits=8 * sum(len(p) for p in payloads),
                          estimate_bits=total_est, pixels=f * h * w)
    return blob, stats


def check_header(header: BitstreamHeader, model: VideoCodecModel) -> None:
    if header.model_hash != model.model_hash:
        raise CodecPipelineError("model hash mismatch: wrong checkpoint for stream")
    cfg = model.cfg
    if (header.d_c, header.latent_bound_l, header.w_c, header.w_p) != (
            cfg.transform.d_c, cfg.transform.latent_bound_l,
            cfg.entropy.w_c, cfg.entropy.w_p):
        raise CodecPipelineError("header geometry disagrees with model config")


def decompress_video(blob: bytes, model: VideoCodecModel,
                     return_latents: bool = False):
    """Decode a container back to (F, h, w, 3) pixels (and latents)."""
    header, payloads = read_container(blob)
    check_header(header, model)
    grid = latent_grid_for(header.height, header.width, header.w_c, header.w_p)
    session = CodecSession(model=model, grid=grid)
    frames = np.zeros((header.frame_count, header.height, header.width, 3),
                      dtype=np.float32)
    latents = []
    with engine.no_grad():
        for i, payload in enumerate(payloads):
            if header.gop_size and i % header.gop_size == 0:
                session.reset_context()
            memory = session.memory()
            y, feats = decode_frame_payload(session, payload, memory)
            frames[i] = reconstruct_frame(
                model, y, feats if header.lrp else None,
                (header.height, header.width), grid)
            latents.append(y)
            session.push_context(y.astype(np.float32))
    if return_latents:
        return frames, latents
    return frames


def sample_completion(frames: np.ndarray, model: VideoCodecModel,
                      frame_index: int, prefix_count: int, n_samples: int,
                      seed: int, gop_size: int | None = None) -> np.ndarray:
    """Mean reconstruction over ancestral samples of the undecoded tokens.

    Conditions each block of the chosen frame on its first `prefix_count`
    true tokens, samples the remaining ones from the predicted Gaussians
    (then rounds), decodes every completed representation, and averages
    the frames. prefix_count == w_c^2 reproduces the deterministic
    reconstruction exactly. Diagnostic only; coding never samples.
    """
    frames = np.asarray(frames, dtype=np.float32)
    f, h, w, _ = frames.shape
    cfg = model.cfg
    seq = cfg.entropy.w_c ** 2
    if not 0 <= prefix_count <= seq:
        raise CodecPipelineError(f"prefix count must be in [0, {seq}]")
    gop = cfg.gop_size if gop_size is None else gop_size
    grid = latent_grid_for(h, w, cfg.entropy.w_c, cfg.entropy.w_p)
    session = CodecSession(model=model, grid=grid)
    rng = np.random.default_rng(seed)
    bound = cfg.transform.latent_bound_l
    with engine.no_grad():
        for i in range(frame_index + 1):
            if gop and i % gop == 0:
                session.reset_context()
            y = frame_to_representation(model, frames[i])
            if i == frame_index:
                break
            session.push_context(y.astype(np.float32))
        memory = session.memory()
        true_tokens = extract_current_blocks(
            y.astype(np.float32), grid).tokens
        acc = np.zeros((h, w, 3), dtype=np.float64)
        for _ in range(max(1, n_samples)):
            tokens = true_tokens.copy()
            if prefix_count < seq:
                for k in range(prefix_count, seq):
                    prefix = engine.constant(tokens[:, :k, :], dtype=model.dtype)
                    mu, sigma, _ = model.entropy.predict_next(prefix, memory)
                    draw = rng.normal(mu.data.astype(np.float64),
                                      sigma.data.astype(np.float64))
                    q = np.clip(engine.round_half_away(draw), -bound, bound)
                    tokens[:, k, :] = q.astype(np.float32)
            feats = None
            if cfg.lrp:
                _, _, ft = model.entropy.predict_all_positions(
                    engine.constant(tokens, dtype=model.dtype), memory)
                feats = ft.data
            blocks = TokenBlockSet(tokens=tokens.astype(np.int64),
                                   provenance="current", grid=grid)
            y_s = reassemble(blocks)
            acc += reconstruct_frame(model, y_s, feats, (h, w), grid)
        return (acc / max(1, n_samples)).astype(np.float32)
