"""Minimal deterministic tensor engine with reverse-mode automatic differentiation.

Design constraints, all load-bearing for the codec built on top:

* float32 for training/inference, float64 allowed for oracle-style checks;
  mixed-dtype operations are an error, never a silent promotion.
* Fixed accumulation schedules: for fixed operand shapes every operation
  performs the same floating-point reductions, so identical inputs give
  bit-identical outputs across runs and processes on one platform. The
  codec keeps coding-time shapes identical on sender and receiver and
  relies on this.
* Per-output-row independence: no forward op mixes values across rows of
  the non-reduced axes, so changing row j of an input can never perturb
  row i != j of the output. Masked-transformer causality tests assert
  this bitwise.
* Any non-finite forward value raises NonFiniteError naming the op.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special as _sp

__all__ = [
    "EngineError", "NonFiniteError", "ShapeError", "Tensor", "tensor",
    "constant", "param", "no_grad", "add", "sub", "mul", "div", "neg",
    "pow_const", "exp", "log", "sqrt", "matmul", "reshape", "transpose",
    "concat", "broadcast_to", "reduce_sum", "reduce_mean", "relu",
    "leaky_relu", "gelu", "softplus", "layer_norm", "softmax", "conv2d",
    "conv2d_transpose", "gather_rows", "round_ste", "round_half_away",
    "gaussian_log_density", "discretized_gaussian_log_prob", "attention",
    "linear", "backward", "topo_order", "graph_ops",
]

LOG_2PI = math.log(2.0 * math.pi)


class EngineError(Exception):
    """Base class for engine failures."""


class NonFiniteError(EngineError):
    """A forward op produced NaN or Inf."""


class ShapeError(EngineError):
    """Operands have incompatible shapes or dtypes."""


_grad_enabled = True


class no_grad:
    """Context manager that disables graph construction."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by op '{op}'")


_node_counter = 0


class Tensor:
    """N-dimensional array plus an optional autodiff tape record.

    ``parents`` and ``_vjp`` describe one node of the computation graph:
    the op kind, the input nodes, and the vector-Jacobian product used by
    the backward pass. Graph nodes are created in program order, so node
    ids are already a topological order of the graph.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_vjp",
                 "node_id")

    def __init__(self, data, requires_grad=False, op="leaf", parents=()):
        global _node_counter
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        _check_finite(arr, op)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self.parents = tuple(parents)
        self._vjp = None
        _node_counter += 1
        self.node_id = _node_counter

    # -- properties -------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.shape}, dtype={self.data.dtype})"

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return pow_const(self, float(p))

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def backward(self):
        backward(self)


def tensor(data, requires_grad=False, dtype=None) -> Tensor:
    arr = np.asarray(data, dtype=dtype if dtype is not None else None)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return Tensor(arr, requires_grad=requires_grad)


def constant(data, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=False)


def param(data) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype), requires_grad=False)


def _same_dtype(*ts: Tensor) -> np.dtype:
    dt = ts[0].data.dtype
    for t in ts[1:]:
        if t.data.dtype != dt:
            raise ShapeError(
                f"mixed dtypes {dt} and {t.data.dtype}; cast explicitly")
    return dt


def _result(data, op, parents, vjp):
    """Build an op output node; attach the vjp only when grads are live."""
    _check_finite(data, op)
    rg = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    global _node_counter
    _node_counter += 1
    out.node_id = _node_counter
    out.data = data
    out.grad = None
    out.requires_grad = rg
    out.op = op
    out.parents = tuple(parents) if rg else ()
    out._vjp = vjp if rg else None
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum `grad` down to `shape` to undo numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise ------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(out, "add", (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(out, "sub", (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)
    out = a.data * b.data

    def vjp(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    return _result(out, "mul", (a, b), vjp)


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)
    out = a.data / b.data

    def vjp(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _result(out, "div", (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, "neg", (a,), lambda g: (-g,))


def pow_const(a: Tensor, p: float) -> Tensor:
    out = a.data ** p

    def vjp(g):
        return (g * p * a.data ** (p - 1.0),)

    return _result(out, "pow", (a,), vjp)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return _result(out, "exp", (a,), vjp)


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def vjp(g):
        return (g / a.data,)

    return _result(out, "log", (a,), vjp)


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def vjp(g):
        return (g * (0.5 / out),)

    return _result(out, "sqrt", (a,), vjp)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)

    def vjp(g):
        return (g * (a.data > 0),)

    return _result(out, "relu", (a,), vjp)


def leaky_relu(a: Tensor, alpha: float = 0.2) -> Tensor:
    out = np.where(a.data >= 0, a.data, a.data * alpha)

    def vjp(g):
        return (g * np.where(a.data >= 0, 1.0, alpha).astype(a.dtype),)

    return _result(out, "leaky_relu", (a,), vjp)


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-error-linear unit, 0.5*x*(1 + erf(x/sqrt(2)))."""
    x = a.data
    c = _sp.erf(x * np.asarray(math.sqrt(0.5), dtype=x.dtype))
    out = 0.5 * x * (1.0 + c)

    def vjp(g):
        pdf = np.exp(-0.5 * x * x) * np.asarray(1.0 / math.sqrt(2 * math.pi),
                                                dtype=x.dtype)
        return (g * (0.5 * (1.0 + c) + x * pdf),)

    return _result(out.astype(x.dtype), "gelu", (a,), vjp)


def softplus(a: Tensor) -> Tensor:
    out = np.logaddexp(np.asarray(0.0, dtype=a.dtype), a.data)

    def vjp(g):
        return (g * _sp.expit(a.data),)

    return _result(out, "softplus", (a,), vjp)


# -- shape ops ---------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.shape),)

    return _result(out, "reshape", (a,), vjp)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = np.ascontiguousarray(a.data.transpose(axes))
    inv = tuple(np.argsort(axes))

    def vjp(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _result(out, "transpose", (a,), vjp)


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    _same_dtype(*tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        grads = []
        for i in range(len(tensors)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(np.ascontiguousarray(g[tuple(sl)]))
        return tuple(grads)

    return _result(out, "concat", tuple(tensors), vjp)


def broadcast_to(a: Tensor, shape) -> Tensor:
    out = np.ascontiguousarray(np.broadcast_to(a.data, shape))

    def vjp(g):
        return (_unbroadcast(g, a.shape),)

    return _result(out, "broadcast", (a,), vjp)


def slice_(a: Tensor, key) -> Tensor:
    out = np.ascontiguousarray(a.data[key])

    def vjp(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return _result(out, "slice", (a,), vjp)


def reduce_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)

    return _result(np.asarray(out, dtype=a.dtype), "sum", (a,), vjp)


def reduce_mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.shape[ax]
    inv = 1.0 / count

    def vjp(g):
        if axis is None:
            gg = np.broadcast_to(g * inv, a.shape)
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            gg = np.broadcast_to(g * inv, a.shape)
        return (gg.astype(a.dtype, copy=True),)

    return _result(np.asarray(out, dtype=a.dtype), "mean", (a,), vjp)


# -- linear algebra ----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, batch dims broadcast.

    The accumulation schedule depends only on operand shapes, never on
    values, so an output row is a pure function of the matching input row
    and the right operand.
    """
    _same_dtype(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul requires operands with ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(out, "matmul", (a, b), vjp)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w + b with x reshaped to 2-D so one GEMM serves any batch shape."""
    lead = x.shape[:-1]
    y = matmul(reshape(x, (-1, x.shape[-1])), w)
    if b is not None:
        y = add(y, b)
    return reshape(y, lead + (w.shape[-1],))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis; per-position, never across rows."""
    _same_dtype(x, gain, bias)
    xd = x.data
    with np.errstate(over="ignore"):
        mu = xd.mean(axis=-1, keepdims=True)
        xc = xd - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=xd.dtype))
        xh = xc * inv
    out = xh * gain.data + bias.data

    def vjp(g):
        dxh = g * gain.data
        m1 = dxh.mean(axis=-1, keepdims=True)
        m2 = (dxh * xh).mean(axis=-1, keepdims=True)
        dx = inv * (dxh - m1 - xh * m2)
        sum_axes = tuple(range(g.ndim - 1))
        dgain = (g * xh).sum(axis=sum_axes)
        dbias = g.sum(axis=sum_axes)
        return (dx.astype(xd.dtype, copy=False),
                dgain.astype(xd.dtype, copy=False),
                dbias.astype(xd.dtype, copy=False))

    return _result(out, "layer_norm", (x, gain, bias), vjp)


def softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis. `mask` is a boolean array broadcastable
    to x.shape; False entries are excluded and get exactly zero weight."""
    xd = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        try:
            np.broadcast_shapes(mask.shape, xd.shape)
        except ValueError:
            raise ShapeError(
                f"softmax mask shape {mask.shape} does not broadcast to {xd.shape}")
        if not np.broadcast_to(mask, xd.shape).any(axis=-1).all():
            raise ShapeError("softmax mask excludes an entire row")
        xd = np.where(mask, xd, -np.inf)
    m = xd.max(axis=-1, keepdims=True)
    e = np.exp(xd - m)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((y * (g - dot)).astype(x.dtype, copy=False),)

    return _result(y.astype(x.dtype, copy=False), "softmax", (x,), vjp)


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
              mask: np.ndarray | None = None) -> Tensor:
    """Multi-head scaled dot-product attention.

    q: (..., n, d); k, v: (..., m, d); heads must divide d. `mask` is a
    boolean (n, m) array, True where position n may attend to position m
    (excluded scores get exactly zero weight). Composed from primitive
    ops, so gradients come for free.
    """
    d = q.shape[-1]
    if d % heads != 0:
        raise ShapeError(f"head count {heads} does not divide width {d}")
    n, m = q.shape[-2], k.shape[-2]
    if mask is not None and np.asarray(mask).shape != (n, m):
        raise ShapeError(f"attention mask must be ({n}, {m})")
    dh = d // heads

    def split(t, length):
        h = reshape(t, t.shape[:-1] + (heads, dh))
        axes = tuple(range(h.ndim - 3)) + (h.ndim - 2, h.ndim - 3, h.ndim - 1)
        return transpose(h, axes)  # (..., heads, length, dh)

    qh, kh, vh = split(q, n), split(k, m), split(v, m)
    kt = transpose(kh, tuple(range(kh.ndim - 2)) + (kh.ndim - 1, kh.ndim - 2))
    scores = mul(matmul(qh, kt), constant(1.0 / math.sqrt(dh), q.dtype))
    w = softmax(scores, mask=mask)
    oh = matmul(w, vh)
    axes = tuple(range(oh.ndim - 3)) + (oh.ndim - 2, oh.ndim - 3, oh.ndim - 1)
    out = transpose(oh, axes)
    return reshape(out, q.shape[:-1] + (d,))


# -- convolutions -------------------------------------------------------------

def _ensure_batch(x: np.ndarray):
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"conv input must be (h,w,c) or (n,h,w,c), got {x.shape}")


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # (N, Hp, Wp, C) -> (N, OH, OW, kh, kw, C); window origin = (oh*s, ow*s)
    v = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    v = v[:, ::stride, ::stride]
    return np.ascontiguousarray(v.transpose(0, 1, 2, 4, 5, 3))


def _col2im(dcols: np.ndarray, shape, kh: int, kw: int, stride: int) -> np.ndarray:
    # adjoint of _im2col; dcols (N, OH, OW, kh, kw, C) -> (N, Hp, Wp, C)
    n, oh, ow = dcols.shape[:3]
    out = np.zeros(shape, dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :] += \
                dcols[:, :, :, i, j, :]
    return out


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: str = "same") -> Tensor:
    """2-D cross-correlation, channels-last.

    x: (h, w, cin) or (n, h, w, cin); w: (kh, kw, cin, cout). 'same'
    padding is symmetric k//2 zero padding, giving ceil(input/stride)
    output size.
    """
    _same_dtype(x, w)
    xd, squeeze = _ensure_batch(x.data)
    kh, kw, ci, co = w.shape
    if xd.shape[-1] != ci:
        raise ShapeError(
            f"conv2d channel mismatch: input has {xd.shape[-1]}, kernel wants {ci}")
    pad = kh // 2 if padding == "same" else 0
    if padding not in ("same", "valid"):
        raise ShapeError(f"unknown padding {padding!r}")
    xp = np.pad(xd, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    oh = (xp.shape[1] - kh) // stride + 1
    ow = (xp.shape[2] - kw) // stride + 1
    cols = _im2col(xp, kh, kw, stride)
    w2 = w.data.reshape(kh * kw * ci, co)
    out = cols.reshape(-1, kh * kw * ci) @ w2
    out = out.reshape(xd.shape[0], oh, ow, co)
    if squeeze:
        out = out[0]

    def vjp(g):
        g4 = g[None] if squeeze else g
        g2 = g4.reshape(-1, co)
        dw = cols.reshape(-1, kh * kw * ci).T @ g2
        dcols = (g2 @ w2.T).reshape(g4.shape[0], oh, ow, kh, kw, ci)
        dxp = _col2im(dcols, xp.shape, kh, kw, stride)
        if pad:
            dxp = dxp[:, pad:-pad, pad:-pad, :]
        if squeeze:
            dxp = dxp[0]
        return (np.ascontiguousarray(dxp), dw.reshape(w.shape))

    return _result(out, "conv2d", (x, w), vjp)


def conv2d_transpose(x: Tensor, w: Tensor, stride: int = 2) -> Tensor:
    """Adjoint of `conv2d(..., padding='same')`; upsamples spatially by
    `stride`. x: (h, w, cin) or (n, h, w, cin); w: (kh, kw, cout, cin),
    output (n, h*stride, w*stride, cout)."""
    _same_dtype(x, w)
    xd, squeeze = _ensure_batch(x.data)
    kh, kw, co, ci = w.shape
    if xd.shape[-1] != ci:
        raise ShapeError(
            f"conv2d_transpose channel mismatch: input has {xd.shape[-1]}, "
            f"kernel wants {ci}")
    n, h, wdt = xd.shape[:3]
    pad = kh // 2
    hp, wp = h * stride + 2 * pad, wdt * stride + 2 * pad
    w2 = w.data.reshape(kh * kw * co, ci)
    cols = (xd.reshape(-1, ci) @ w2.T).reshape(n, h, wdt, kh, kw, co)
    yp = _col2im(cols, (n, hp, wp, co), kh, kw, stride)
    out = np.ascontiguousarray(yp[:, pad:hp - pad, pad:wp - pad, :])
    if squeeze:
        out = out[0]

    def vjp(g):
        g4 = g[None] if squeeze else g
        gp = np.pad(g4, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        gcols = _im2col(gp, kh, kw, stride).reshape(-1, kh * kw * co)
        dx = (gcols @ w2).reshape(xd.shape)
        dw = (gcols.T @ xd.reshape(-1, ci)).reshape(w.shape)
        if squeeze:
            dx = dx[0]
        return (dx, dw)

    return _result(out, "conv2d_transpose", (x, w), vjp)


# -- gather / scatter ---------------------------------------------------------

def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows of a (rows, d) tensor by integer index.

    Index -1 selects an implicit all-zero row (used for spatial padding in
    tokenization). Backward scatter-adds in index order, deterministically.
    """
    if x.ndim != 2:
        raise ShapeError("gather_rows expects a 2-D tensor")
    idx = np.asarray(idx)
    if idx.min() < -1 or idx.max() >= x.shape[0]:
        raise ShapeError("gather index out of range")
    padded = np.concatenate([x.data, np.zeros((1, x.shape[1]), dtype=x.dtype)])
    out = padded[idx]

    def vjp(g):
        acc = np.zeros((x.shape[0] + 1, x.shape[1]), dtype=x.dtype)
        np.add.at(acc, idx.reshape(-1), g.reshape(-1, x.shape[1]))
        return (acc[:-1],)

    return _result(out, "gather", (x,), vjp)


# -- quantization -------------------------------------------------------------

def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, halves away from zero (codec-format rule)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def round_ste(x: Tensor, bound: int) -> Tensor:
    """Round-and-clamp in the forward pass, identity gradient backward."""
    out = np.clip(round_half_away(x.data), -bound, bound).astype(x.dtype)

    def vjp(g):
        return (g,)

    return _result(out, "round_ste", (x,), vjp)


# -- probability --------------------------------------------------------------

def gaussian_log_density(x: Tensor, mu: Tensor, sigma: Tensor) -> Tensor:
    """log N(x; mu, sigma^2), composed from primitive ops."""
    z = div(sub(x, mu), sigma)
    return sub(mul(constant(-0.5, x.dtype), mul(z, z)),
               add(log(sigma), constant(0.5 * LOG_2PI, x.dtype)))


def discretized_gaussian_log_prob(v: Tensor, mu: Tensor, sigma: Tensor) -> Tensor:
    """log of a Gaussian convolved with a unit-width box, evaluated at v.

    Computes log(Phi((v+0.5-mu)/sigma) - Phi((v-0.5-mu)/sigma)) with
    float64 tail-stable internals: the interval is reflected into the
    lower tail and evaluated via log-CDFs, so values remain finite even
    at |v-mu|/sigma in the thousands. Result is cast back to the input
    dtype; gradients are exact, also computed in float64.
    """
    _same_dtype(v, mu, sigma)
    vd = v.data.astype(np.float64)
    md = mu.data.astype(np.float64)
    sd = sigma.data.astype(np.float64)
    if np.any(sd <= 0):
        raise ShapeError("sigma must be positive")
    m = vd - md
    sign = np.sign(m)
    z = -np.abs(m)
    lo = (z - 0.5) / sd
    hi = (z + 0.5) / sd
    llo = _sp.log_ndtr(lo)
    lhi = _sp.log_ndtr(hi)
    diff = llo - lhi
    with np.errstate(divide="ignore", invalid="ignore"):
        exact = lhi + np.log(-np.expm1(diff))
    # When sigma is so large that the two log-CDFs collide in float64, fall
    # back to the midpoint approximation P ~ pdf(z/sigma)/sigma.
    mid = z / sd
    approx = -0.5 * mid * mid - 0.5 * LOG_2PI - np.log(sd)
    logp = np.where(diff < -1e-12, exact, approx)
    out = np.maximum(logp, -1e37).astype(v.dtype)

    def vjp(g):
        g64 = g.astype(np.float64)
        lpdf_hi = -0.5 * hi * hi - 0.5 * LOG_2PI
        lpdf_lo = -0.5 * lo * lo - 0.5 * LOG_2PI
        rh = np.exp(np.minimum(lpdf_hi - logp, 700.0))
        rl = np.exp(np.minimum(lpdf_lo - logp, 700.0))
        dz = (rh - rl) / sd
        dv = g64 * dz * (-sign)
        dmu = g64 * dz * sign
        dsig = g64 * (rl * lo - rh * hi) / sd
        lim = 1e30
        return (np.clip(_unbroadcast(dv, v.shape), -lim, lim).astype(v.dtype),
                np.clip(_unbroadcast(dmu, mu.shape), -lim, lim).astype(mu.dtype),
                np.clip(_unbroadcast(dsig, sigma.shape), -lim, lim).astype(sigma.dtype))

    return _result(out, "discretized_gaussian_log_prob", (v, mu, sigma), vjp)


# -- backward pass ------------------------------------------------------------

def topo_order(root: Tensor) -> list[Tensor]:
    """Nodes of the graph reachable from root, parents before consumers."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def graph_ops(root: Tensor) -> set[str]:
    """Distinct op kinds appearing in root's computation graph."""
    return {n.op for n in topo_order(root) if n.op != "leaf"}


def backward(loss: Tensor) -> None:
    """Reverse-mode gradient of a scalar loss.

    Visits each graph node exactly once, in reverse topological order, and
    accumulates gradients on every reachable tensor with requires_grad.
    Parameters not connected to the loss simply keep grad=None (treated as
    zero by the optimizer).
    """
    if loss.data.size != 1:
        raise ShapeError("backward requires a scalar loss")
    order = topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g


def zero_grads(params) -> None:
    for p in params:
        p.grad = None
