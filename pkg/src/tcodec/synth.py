"""Synthetic motion benchmarks: panning, blur/sharpen ramps, cross-fades.

Each generator turns still source images into short clips exercising one
temporal pattern with a single strength parameter x:

* shift: pan from the image center toward the lower right by x pixels per
  step (fractional x uses bilinear sampling);
* sharpen_or_blur: frame t is the source blurred with sigma = x*t for
  x >= 0; for x < 0 the |x| clip is played in reverse, so the video
  sharpens over time;
* fade: alpha-blend between two unrelated images, alpha growing by x per
  frame and clamped to [0, 1].

Sources may come from a user directory of lossless images; the bundled
procedural texture keeps everything dependency-free and seeded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .parallel import pmap


class SynthError(Exception):
    pass


@dataclass(frozen=True)
class SynthSpec:
    kind: str                 # shift | sharpen_or_blur | fade
    x: float = 0.0
    n_videos: int = 10
    frames: int = 12
    size: int = 512
    seed: int = 0
    sources: tuple = field(default=())  # file paths; procedural if empty

    def __post_init__(self):
        if self.kind not in ("shift", "sharpen_or_blur", "fade"):
            raise SynthError(f"unknown generator kind {self.kind!r}")
        if self.frames < 2:
            raise SynthError("videos need at least 2 frames")
        if self.kind == "shift" and self.x < 0:
            raise SynthError("shift distance must be >= 0")


def procedural_texture(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Multi-octave filtered-noise still image in [0, 1], (h, w, 3)."""
    img = np.zeros((height, width, 3), dtype=np.float64)
    amp = 1.0
    total = 0.0
    for octave in range(4):
        sigma = max(1.0, min(height, width) / (6.0 * 2 ** octave))
        noise = rng.standard_normal((height, width, 3))
        sm = ndimage.gaussian_filter(noise, sigma=(sigma, sigma, 0))
        sm /= max(np.abs(sm).max(), 1e-9)
        img += amp * sm
        total += amp
        amp *= 0.55
    img = 0.5 + 0.5 * img / total
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _load_image(path) -> np.ndarray:
    from PIL import Image

    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32)
    return arr / 255.0


def _source_image(spec: SynthSpec, rng: np.random.Generator,
                  height: int, width: int) -> np.ndarray:
    if spec.sources:
        path = spec.sources[int(rng.integers(len(spec.sources)))]
        img = _load_image(path)
        if img.shape[0] < height or img.shape[1] < width:
            raise SynthError(f"source {path} smaller than required "
                             f"{height}x{width}")
        r0 = int(rng.integers(img.shape[0] - height + 1))
        c0 = int(rng.integers(img.shape[1] - width + 1))
        return img[r0:r0 + height, c0:c0 + width]
    return procedural_texture(rng, height, width)


def _bilinear_crop(img: np.ndarray, top: float, left: float,
                   size: int) -> np.ndarray:
    """size x size crop at fractional offset (top, left)."""
    t0 = int(np.floor(top))
    l0 = int(np.floor(left))
    ft, fl = top - t0, left - l0
    if ft == 0.0 and fl == 0.0:
        return img[t0:t0 + size, l0:l0 + size].copy()
    block = img[t0:t0 + size + 1, l0:l0 + size + 1].astype(np.float64)
    a = block[:size, :size]
    b = block[:size, 1:size + 1]
    c = block[1:size + 1, :size]
    d = block[1:size + 1, 1:size + 1]
    out = (a * (1 - ft) * (1 - fl) + b * (1 - ft) * fl
           + c * ft * (1 - fl) + d * ft * fl)
    return out.astype(np.float32)


def gen_shift(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """One panning video: frame t is the source cropped at offset (t*x, t*x)."""
    size = spec.size
    travel = spec.x * (spec.frames - 1)
    src_size = size + int(np.ceil(travel)) + 2
    src = _source_image(spec, rng, src_size, src_size)
    frames = np.empty((spec.frames, size, size, 3), dtype=np.float32)
    for t in range(spec.frames):
        off = t * spec.x
        frames[t] = _bilinear_crop(src, off, off, size)
    return frames


def gen_sharpen_or_blur(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Blur ramp sigma = x*t; negative x plays the |x| ramp in reverse."""
    size = spec.size
    mag = abs(spec.x)
    src = _source_image(spec, rng, size, size)
    frames = np.empty((spec.frames, size, size, 3), dtype=np.float32)
    for t in range(spec.frames):
        sigma = mag * t
        if sigma == 0.0:
            frames[t] = src
        else:
            frames[t] = ndimage.gaussian_filter(
                src, sigma=(sigma, sigma, 0), mode="nearest")
    if spec.x < 0:
        frames = frames[::-1].copy()
    return frames


def gen_fade(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Linear alpha blend between two sources, alpha_t = clamp(t*x)."""
    size = spec.size
    a = _source_image(spec, rng, size, size).astype(np.float64)
    b = _source_image(spec, rng, size, size).astype(np.float64)
    frames = np.empty((spec.frames, size, size, 3), dtype=np.float32)
    for t in range(spec.frames):
        alpha = min(max(t * spec.x, 0.0), 1.0)
        frames[t] = ((1.0 - alpha) * a + alpha * b).astype(np.float32)
    return frames


_GENERATORS = {
    "shift": gen_shift,
    "sharpen_or_blur": gen_sharpen_or_blur,
    "fade": gen_fade,
}


def generate(spec: SynthSpec) -> list[np.ndarray]:
    """All videos for one spec; deterministic in (spec, seed)."""
    gen = _GENERATORS[spec.kind]
    seeds = [(spec.seed, i) for i in range(spec.n_videos)]

    def one(key):
        return gen(spec, np.random.default_rng(key))

    return pmap(one, seeds)


def parse_spec(text: str) -> SynthSpec:
    """Parse 'kind:key=value,...' strings, e.g. 'shift:x=16,n=10,size=64'."""
    if ":" in text:
        kind, _, rest = text.partition(":")
    else:
        kind, rest = text, ""
    kw = {}
    names = {"x": ("x", float), "n": ("n_videos", int),
             "n_videos": ("n_videos", int), "frames": ("frames", int),
             "size": ("size", int), "seed": ("seed", int)}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        if "=" not in item:
            raise SynthError(f"bad spec item {item!r}")
        key, val = item.split("=", 1)
        if key not in names:
            raise SynthError(f"unknown spec key {key!r}")
        field_name, conv = names[key]
        kw[field_name] = conv(val)
    return SynthSpec(kind=kind.strip(), **kw)
