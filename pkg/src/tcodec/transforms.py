"""Per-frame lossy transforms: analysis encoder, synthesis decoder,
quantization, frame padding, and the latent-residual refinement stage.

The encoder is four 5x5 stride-2 conv + leaky-relu stages (16x spatial
downscale); the decoder mirrors it with residual blocks at the lower
resolutions followed by 5x5 stride-2 transposed convs, the final one
mapping to RGB with no activation. Each frame is transformed on its own:
a representation depends only on its frame, and a reconstruction only on
the representation(s) fed to the decoder.
"""

from __future__ import annotations

import numpy as np

from . import engine
from .config import DOWNSCALE, CodecConfig, TransformConfig
from .engine import Tensor


class TransformError(Exception):
    pass


def pad_frame(frame: np.ndarray, multiple: int = DOWNSCALE) -> np.ndarray:
    """Replicate-edge pad (bottom/right) to a multiple of the downscale."""
    if frame.ndim != 3 or frame.shape[0] == 0 or frame.shape[1] == 0:
        raise TransformError(f"expected a (h, w, c) frame, got {frame.shape}")
    h, w = frame.shape[:2]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return frame
    return np.pad(frame, ((0, ph), (0, pw), (0, 0)), mode="edge")


def crop_frame(frame: np.ndarray, height: int, width: int) -> np.ndarray:
    return frame[:height, :width]


def quantize(y: Tensor, mode: str, bound: int,
             noise: np.ndarray | None = None) -> Tensor:
    """Quantize a continuous latent.

    round      -- integers clamped to [-bound, bound], gradient cut
    round_ste  -- same forward, gradient passes through unchanged
    noise      -- adds the given uniform [-0.5, 0.5) draw, unclamped
                  (training-time rate surrogate only)

    Rounding is half-away-from-zero; this is part of the codec format.
    """
    if mode == "round":
        q = np.clip(engine.round_half_away(y.data), -bound, bound)
        return engine.constant(q.astype(y.dtype), dtype=y.dtype)
    if mode == "round_ste":
        return engine.round_ste(y, bound)
    if mode == "noise":
        if noise is None:
            raise TransformError("noise mode needs a uniform draw")
        return y + engine.constant(noise.astype(y.dtype), dtype=y.dtype)
    raise TransformError(f"unknown quantization mode {mode!r}")


def to_symbols(y: Tensor | np.ndarray, bound: int) -> np.ndarray:
    """Integer symbol grid in [-bound, bound] from a (rounded) latent."""
    data = y.data if isinstance(y, Tensor) else np.asarray(y)
    return np.clip(engine.round_half_away(data), -bound, bound).astype(np.int64)


class Conv:
    def __init__(self, rng, k, cin, cout, stride, dtype, zero=False):
        fan_in = k * k * cin
        std = np.sqrt(2.0 / fan_in)
        w = np.zeros((k, k, cin, cout)) if zero else rng.normal(0.0, std, (k, k, cin, cout))
        self.w = engine.param(w.astype(dtype))
        self.b = engine.param(np.zeros(cout, dtype=dtype))
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return engine.conv2d(x, self.w, stride=self.stride) + self.b

    def params(self):
        return {"w": self.w, "b": self.b}


class ConvTranspose:
    def __init__(self, rng, k, cin, cout, stride, dtype):
        fan_in = k * k * cin / (stride * stride)
        std = np.sqrt(2.0 / fan_in)
        self.w = engine.param(rng.normal(0.0, std, (k, k, cout, cin)).astype(dtype))
        self.b = engine.param(np.zeros(cout, dtype=dtype))
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return engine.conv2d_transpose(x, self.w, stride=self.stride) + self.b

    def params(self):
        return {"w": self.w, "b": self.b}


class ResidualBlock:
    """Two 3x3 convs with a leaky-relu between, skip around both."""

    def __init__(self, rng, channels, alpha, dtype):
        self.c1 = Conv(rng, 3, channels, channels, 1, dtype)
        self.c2 = Conv(rng, 3, channels, channels, 1, dtype)
        self.alpha = alpha

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.c2(engine.leaky_relu(self.c1(x), self.alpha))

    def params(self):
        out = {}
        for i, conv in enumerate((self.c1, self.c2)):
            for k, v in conv.params().items():
                out[f"c{i}.{k}"] = v
        return out


class FrameEncoder:
    """Analysis transform: (h, w, 3) -> (h/16, w/16, d_c), continuous."""

    def __init__(self, cfg: TransformConfig, rng, dtype=np.float32):
        d = cfg.d_ed
        chans = [(3, d), (d, d), (d, d), (d, cfg.d_c)]
        self.stages = [Conv(rng, 5, ci, co, 2, dtype) for ci, co in chans]
        self.alpha = cfg.alpha

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for stage in self.stages:
            h = engine.leaky_relu(stage(h), self.alpha)
        return h

    def params(self):
        out = {}
        for i, stage in enumerate(self.stages):
            for k, v in stage.params().items():
                out[f"down{i}.{k}"] = v
        return out


class FrameDecoder:
    """Synthesis transform: (H, W, d_c) -> (16H, 16W, 3), unclipped."""

    def __init__(self, cfg: TransformConfig, rng, dtype=np.float32):
        d = cfg.d_ed
        self.alpha = cfg.alpha
        self.res_stages = []
        self.ups = []
        chans = [cfg.d_c, d, d, d]
        for stage, n_res in enumerate(cfg.residual_pattern):
            cin = chans[stage]
            self.res_stages.append(
                [ResidualBlock(rng, cin, cfg.alpha, dtype) for _ in range(n_res)])
            cout = 3 if stage == 3 else d
            self.ups.append(ConvTranspose(rng, 5, cin, cout, 2, dtype))

    def __call__(self, y: Tensor) -> Tensor:
        h = y
        for stage in range(4):
            for block in self.res_stages[stage]:
                h = block(h)
            h = self.ups[stage](h)
            if stage < 3:
                h = engine.leaky_relu(h, self.alpha)
        return h

    def params(self):
        out = {}
        for stage in range(4):
            for i, block in enumerate(self.res_stages[stage]):
                for k, v in block.params().items():
                    out[f"res{stage}.{i}.{k}"] = v
            for k, v in self.ups[stage].params().items():
                out[f"up{stage}.{k}"] = v
        return out


class LatentResidual:
    """Additive latent correction from the predictor's free features.

    1x1 conv (d_t -> d_ed), one residual block, then a zero-initialized
    1x1 conv to d_c, so a fresh instance is an exact identity on y.
    """

    def __init__(self, cfg: CodecConfig, rng, dtype=np.float32):
        tr = cfg.transform
        self.inp = Conv(rng, 1, cfg.entropy.d_t, tr.d_ed, 1, dtype)
        self.block = ResidualBlock(rng, tr.d_ed, tr.alpha, dtype)
        self.out = Conv(rng, 1, tr.d_ed, tr.d_c, 1, dtype, zero=True)

    def __call__(self, features: Tensor) -> Tensor:
        return self.out(self.block(self.inp(features)))

    def fuse(self, y: Tensor, features: Tensor) -> Tensor:
        if y.shape[:-1] != features.shape[:-1]:
            raise TransformError(
                f"latent/feature spatial mismatch: {y.shape} vs {features.shape}")
        return y + self(features)

    def params(self):
        out = {}
        for name, mod in (("in", self.inp), ("block", self.block), ("out", self.out)):
            for k, v in mod.params().items():
                out[f"{name}.{k}"] = v
        return out
