"""Codec configuration: transform/entropy-model hyperparameters, presets,
and the plain-text key=value config file format."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, asdict

DOWNSCALE = 16  # four stride-2 stages


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class TransformConfig:
    """Analysis/synthesis transform hyperparameters."""

    d_ed: int = 16                       # channels per conv layer
    d_c: int = 8                         # latent channels
    latent_bound_l: int = 32             # symbols live in [-L, L]
    residual_pattern: tuple = (2, 1, 1, 0)  # residual blocks per resolution
    alpha: float = 0.2                   # leaky-relu slope

    def __post_init__(self):
        if self.d_c <= 0 or self.d_ed <= 0:
            raise ConfigError("channel counts must be positive")
        if len(self.residual_pattern) != 4:
            raise ConfigError("residual_pattern must have 4 entries")
        if self.latent_bound_l < 1:
            raise ConfigError("latent bound must be >= 1")


@dataclass(frozen=True)
class EntropyConfig:
    """Transformer entropy-model hyperparameters."""

    d_t: int = 64
    heads: int = 4
    layers_sep: int = 2
    layers_joint: int = 2
    layers_cur: int = 3
    min_scale: float = 0.01
    w_c: int = 4
    w_p: int = 8

    def __post_init__(self):
        if self.d_t % self.heads != 0:
            raise ConfigError("heads must divide d_t")
        if min(self.layers_sep, self.layers_joint, self.layers_cur) < 1:
            raise ConfigError("all layer counts must be >= 1")
        if self.w_p <= self.w_c:
            raise ConfigError("context block size must exceed current block size")
        if (self.w_p - self.w_c) % 2 != 0:
            raise ConfigError("w_p - w_c must be even (blocks are centered)")
        if self.min_scale <= 0:
            raise ConfigError("min_scale must be positive")


@dataclass(frozen=True)
class CodecConfig:
    """Complete codec description; everything the model hash must cover."""

    transform: TransformConfig = field(default_factory=TransformConfig)
    entropy: EntropyConfig = field(default_factory=EntropyConfig)
    context_frames: int = 2   # how many previous representations are visible
    lrp: bool = False         # latent-residual refinement before synthesis
    gop_size: int = 0         # context reset period; 0 = never reset

    def __post_init__(self):
        if self.context_frames not in (0, 1, 2):
            raise ConfigError("context_frames must be 0, 1 or 2")
        if self.gop_size < 0:
            raise ConfigError("gop_size must be >= 0")


def desk_config(**overrides) -> CodecConfig:
    """Small configuration sized for CPU experiments."""
    return _build(dict(_flatten(CodecConfig()), **overrides))


def paper_config(**overrides) -> CodecConfig:
    """Full-scale configuration."""
    base = dict(
        d_ed=192, d_c=192, latent_bound_l=32, residual_pattern=(4, 2, 2, 0),
        alpha=0.2, d_t=768, heads=16, layers_sep=6, layers_joint=4,
        layers_cur=5, min_scale=0.01, w_c=4, w_p=8, context_frames=2,
        lrp=True, gop_size=0,
    )
    base.update(overrides)
    return _build(base)


PRESETS = {"desk": desk_config, "paper": paper_config}

_INT_KEYS = {"d_ed", "d_c", "latent_bound_l", "d_t", "heads", "layers_sep",
             "layers_joint", "layers_cur", "w_c", "w_p", "context_frames",
             "gop_size"}
_FLOAT_KEYS = {"alpha", "min_scale"}
_BOOL_KEYS = {"lrp"}


def _flatten(cfg: CodecConfig) -> dict:
    flat = {}
    flat.update(asdict(cfg.transform))
    flat.update(asdict(cfg.entropy))
    flat["context_frames"] = cfg.context_frames
    flat["lrp"] = cfg.lrp
    flat["gop_size"] = cfg.gop_size
    return flat


def _build(flat: dict) -> CodecConfig:
    known = _INT_KEYS | _FLOAT_KEYS | _BOOL_KEYS | {"residual_pattern"}
    unknown = set(flat) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    tr = TransformConfig(
        d_ed=int(flat["d_ed"]), d_c=int(flat["d_c"]),
        latent_bound_l=int(flat["latent_bound_l"]),
        residual_pattern=tuple(int(v) for v in flat["residual_pattern"]),
        alpha=float(flat["alpha"]))
    en = EntropyConfig(
        d_t=int(flat["d_t"]), heads=int(flat["heads"]),
        layers_sep=int(flat["layers_sep"]), layers_joint=int(flat["layers_joint"]),
        layers_cur=int(flat["layers_cur"]), min_scale=float(flat["min_scale"]),
        w_c=int(flat["w_c"]), w_p=int(flat["w_p"]))
    return CodecConfig(transform=tr, entropy=en,
                       context_frames=int(flat["context_frames"]),
                       lrp=bool(flat["lrp"]), gop_size=int(flat["gop_size"]))


def to_text(cfg: CodecConfig) -> str:
    flat = _flatten(cfg)
    lines = []
    for key in sorted(flat):
        val = flat[key]
        if key == "residual_pattern":
            val = ",".join(str(v) for v in val)
        elif isinstance(val, bool):
            val = int(val)
        lines.append(f"{key}={val}")
    return "\n".join(lines) + "\n"


def from_text(text: str) -> CodecConfig:
    flat = _flatten(CodecConfig())
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key == "residual_pattern":
            flat[key] = tuple(int(v) for v in val.replace(",", " ").split())
        elif key in _INT_KEYS:
            flat[key] = int(val)
        elif key in _FLOAT_KEYS:
            flat[key] = float(val)
        elif key in _BOOL_KEYS:
            flat[key] = val.strip().lower() in ("1", "true", "yes", "on")
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    return _build(flat)


def load(path_or_preset: str) -> CodecConfig:
    if path_or_preset in PRESETS:
        return PRESETS[path_or_preset]()
    with open(path_or_preset, "r", encoding="utf-8") as f:
        return from_text(f.read())


def save(path, cfg: CodecConfig) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(to_text(cfg))


def model_hash(checkpoint_blob: bytes) -> bytes:
    """8-byte identifier binding a bitstream to exact weights + config."""
    return hashlib.sha256(checkpoint_blob).digest()[:8]
