"""Adam optimizer and the linear warmup/decay learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import Tensor


@dataclass
class AdamState:
    """Per-parameter moment estimates plus a shared step counter."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class Adam:
    """Standard Adam with bias correction over a named parameter dict.

    Parameters with grad=None (disconnected from the loss) are treated as
    having zero gradient; their moments still decay.
    """

    def __init__(self, params: dict[str, Tensor], beta1=0.9, beta2=0.999,
                 eps=1e-8):
        self.params = params
        self.state = AdamState(beta1=beta1, beta2=beta2, eps=eps)
        for name, p in params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def step(self, lr: float, names=None) -> None:
        """Apply one update at learning rate `lr`.

        `names` restricts the update to a subset of parameters (used by
        staged training); moments of untouched parameters are left as-is.
        """
        st = self.state
        st.step += 1
        c1 = 1.0 - st.beta1 ** st.step
        c2 = 1.0 - st.beta2 ** st.step
        active = self.params.keys() if names is None else names
        for name in active:
            p = self.params[name]
            if p.grad is None:
                g = np.zeros_like(p.data)
            else:
                g = p.grad
            if g.shape != p.data.shape:
                raise ValueError(
                    f"gradient shape {g.shape} does not match parameter "
                    f"{name} shape {p.data.shape}")
            m = st.m[name]
            v = st.v[name]
            m *= st.beta1
            m += (1.0 - st.beta1) * g
            v *= st.beta2
            v += (1.0 - st.beta2) * (g * g)
            mh = m / c1
            vh = v / c2
            p.data = p.data - (lr * mh / (np.sqrt(vh) + st.eps)).astype(p.dtype)


def clip_global_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most `max_norm`."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = (p.grad * scale).astype(p.grad.dtype)
    return norm


@dataclass
class LrSchedule:
    """Linear warmup from zero to `base`, then linear decay to `final`."""

    base: float
    total_steps: int
    warmup_steps: int = 0
    final: float = 1e-5

    def __post_init__(self):
        if self.warmup_steps >= self.total_steps:
            raise ValueError("warmup must be shorter than the total schedule")

    def at(self, step: int) -> float:
        if step < self.warmup_steps:
            return self.base * (step + 1) / self.warmup_steps
        frac = (step - self.warmup_steps) / max(1, self.total_steps - self.warmup_steps)
        frac = min(frac, 1.0)
        return self.base + (self.final - self.base) * frac
