"""Full codec model: transforms + entropy model + latent refinement.

Checkpoints carry the configuration as `meta/...` scalar tensors next to
the weights, so a checkpoint file is self-contained: the CLI can rebuild
the exact model from the file alone, and the 8-byte model hash in the
bitstream header covers weights and configuration together.

The latent-residual parameters always exist (zero-initialized final layer
makes them inert), so checkpoints stay compatible when the `lrp` or
`context_frames` settings change between fine-tunes.
"""

from __future__ import annotations

import numpy as np

from . import checkpoint as ckpt
from . import config as cfg_mod
from .config import CodecConfig
from .engine import Tensor
from .entropy import EntropyModel
from .transforms import FrameDecoder, FrameEncoder, LatentResidual


class ModelError(Exception):
    pass


class VideoCodecModel:
    def __init__(self, cfg: CodecConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.encoder = FrameEncoder(cfg.transform, rng, dtype)
        self.decoder = FrameDecoder(cfg.transform, rng, dtype)
        self.entropy = EntropyModel(cfg.entropy, cfg.transform.d_c, rng, dtype)
        self.latent_residual = LatentResidual(cfg, rng, dtype)

    def named_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for prefix, mod in (("enc", self.encoder), ("dec", self.decoder),
                            ("ent", self.entropy), ("lrp", self.latent_residual)):
            for name, p in mod.params().items():
                out[f"{prefix}.{name}"] = p
        return out

    # -- dtype / scaling ------------------------------------------------------
    def astype(self, dtype) -> "VideoCodecModel":
        other = VideoCodecModel(self.cfg, seed=0, dtype=dtype)
        src, dst = self.named_params(), other.named_params()
        for name, p in dst.items():
            p.data = src[name].data.astype(dtype)
        return other

    def scale_weights(self, factor: float) -> None:
        for p in self.named_params().values():
            p.data = (p.data * factor).astype(self.dtype)

    # -- persistence ----------------------------------------------------------
    def state_bytes(self) -> bytes:
        weights = {name: p.data for name, p in self.named_params().items()}
        flat = cfg_mod._flatten(self.cfg)
        for key in sorted(flat):
            val = flat[key]
            if key == "residual_pattern":
                weights[f"meta/{key}"] = np.asarray(val, dtype=np.float32)
            else:
                weights[f"meta/{key}"] = np.asarray(float(val), dtype=np.float32)
        return ckpt.dump_weights(weights)

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.state_bytes())

    @property
    def model_hash(self) -> bytes:
        return cfg_mod.model_hash(self.state_bytes())

    @classmethod
    def from_state(cls, blob: bytes, dtype=np.float32) -> "VideoCodecModel":
        weights = ckpt.parse_weights(blob)
        flat = {}
        for name, arr in list(weights.items()):
            if name.startswith("meta/"):
                key = name[5:]
                if key == "residual_pattern":
                    flat[key] = tuple(int(v) for v in arr)
                else:
                    flat[key] = float(arr)
                del weights[name]
        cfg = cfg_mod._build(flat)
        model = cls(cfg, seed=0, dtype=dtype)
        params = model.named_params()
        missing = set(params) - set(weights)
        extra = set(weights) - set(params)
        if missing or extra:
            raise ModelError(
                f"checkpoint does not match model: missing={sorted(missing)[:4]} "
                f"extra={sorted(extra)[:4]}")
        for name, p in params.items():
            if weights[name].shape != p.data.shape:
                raise ModelError(
                    f"shape mismatch for {name}: checkpoint "
                    f"{weights[name].shape} vs model {p.data.shape}")
            p.data = weights[name].astype(dtype)
        return model

    @classmethod
    def load(cls, path, dtype=np.float32) -> "VideoCodecModel":
        with open(path, "rb") as f:
            return cls.from_state(f.read(), dtype=dtype)

    def with_config(self, **overrides) -> "VideoCodecModel":
        """Same weights under a modified coding configuration.

        Only settings that do not change parameter shapes may be adjusted
        (context_frames, lrp, gop_size).
        """
        allowed = {"context_frames", "lrp", "gop_size"}
        bad = set(overrides) - allowed
        if bad:
            raise ModelError(f"cannot override architecture keys: {sorted(bad)}")
        flat = cfg_mod._flatten(self.cfg)
        flat.update(overrides)
        clone = VideoCodecModel(cfg_mod._build(flat), seed=0, dtype=self.dtype)
        src = self.named_params()
        for name, p in clone.named_params().items():
            p.data = src[name].data
        return clone


def fresh_model(cfg: CodecConfig | str = "desk", seed: int = 0,
                dtype=np.float32) -> VideoCodecModel:
    if isinstance(cfg, str):
        cfg = cfg_mod.PRESETS[cfg]()
    return VideoCodecModel(cfg, seed=seed, dtype=dtype)
