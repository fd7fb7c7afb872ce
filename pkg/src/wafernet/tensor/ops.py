"""Differentiable primitives.

Every op takes :class:`Tensor` inputs and returns a new :class:`Tensor`; the
backward rule is recorded on the active tape only when some input requires a
gradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, DimensionError, LabelError
from . import kernels
from .core import Tensor, emit, note_branches


def _need(t: Tensor, ndim: int, op: str, axes: str):
    if t.ndim != ndim:
        raise DimensionError(f"{op}: expected {ndim}-d input [{axes}], got shape {t.shape}")


# -- convolution ---------------------------------------------------------------

def conv_output_size(size: int, k: int, stride: int, padding: int, axis: str = "H") -> int:
    span = size + 2 * padding - k
    if span < 0:
        raise DimensionError(
            f"conv2d: {axis}+2*padding={size + 2 * padding} smaller than kernel {k}"
        )
    if span % stride:
        raise ConfigurationError(
            f"conv2d: ({axis}={size} + 2*{padding} - {k}) not divisible by stride {stride}"
        )
    return span // stride + 1


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """Cross-correlation of ``x[N,Cin,H,W]`` with ``kernel[Cout,Cin,kH,kW]``."""
    _need(x, 4, "conv2d", "N,Cin,H,W")
    _need(kernel, 4, "conv2d kernel", "Cout,Cin,kH,kW")
    if stride < 1:
        raise ConfigurationError(f"conv2d: stride must be >= 1, got {stride}")
    n, cin, h, w = x.shape
    cout, kcin, kh, kw = kernel.shape
    if cin != kcin:
        raise DimensionError(f"conv2d: input channels (axis 1) {cin} != kernel Cin (axis 1) {kcin}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != (Cout={cout},)")
    ho = conv_output_size(h, kh, stride, padding, "H")
    wo = conv_output_size(w, kw, stride, padding, "W")

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = kernels.im2col(xp, kh, kw, stride)             # (N*Ho*Wo, Cin*kh*kw)
    wmat = kernel.data.reshape(cout, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    padded_shape = xp.shape
    inputs = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        dk = (gmat.T @ cols).reshape(kernel.shape) if kernel.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = gmat @ wmat
            dxp = kernels.col2im(dcols, padded_shape, kh, kw, stride)
            dx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
            dx = np.ascontiguousarray(dx)
        if bias is None:
            return dx, dk
        return dx, dk, gmat.sum(axis=0)

    return emit("conv2d", out, inputs, backward)


# -- pooling -------------------------------------------------------------------

def maxpool2d(x: Tensor, window: int = 2, stride: int | None = None) -> Tensor:
    _need(x, 4, "maxpool2d", "N,C,H,W")
    stride = window if stride is None else stride
    if window < 1 or stride < 1:
        raise ConfigurationError(f"maxpool2d: window={window}, stride={stride} must be >= 1")
    n, c, h, w = x.shape
    if window > h or window > w:
        raise DimensionError(f"maxpool2d: window {window} larger than input {h}x{w}")
    if window == stride and (h % stride or w % stride):
        raise ConfigurationError(f"maxpool2d: input {h}x{w} not divisible by stride {stride}")
    out, idx = kernels.maxpool_forward(x.data, window, stride)
    note_branches(idx)

    def backward(g):
        return (kernels.maxpool_backward(g, idx, x.shape),)

    return emit("maxpool2d", out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over H, W: ``[N,C,H,W] -> [N,C]``."""
    _need(x, 4, "global_avg_pool", "N,C,H,W")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

    return emit("global_avg_pool", out, (x,), backward)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of ``[N,C,H,W]``."""
    _need(x, 4, "upsample2x", "N,C,H,W")
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        n, c, h2, w2 = g.shape
        return (g.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)),)

    return emit("upsample2x", out, (x,), backward)


# -- normalization ---------------------------------------------------------------

@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32, momentum: float = 0.1):
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype), momentum)


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5,
                mode: str = "train", running: RunningStats | None = None) -> Tensor:
    """Per-channel normalization over (N, H, W).

    Train mode uses batch statistics (population variance) and, if
    ``running`` is given, updates it in place with its momentum. Eval mode
    normalizes with ``running``.
    """
    _need(x, 4, "batchnorm2d", "N,C,H,W")
    n, c, h, w = x.shape
    if n * h * w < 1:
        raise DimensionError("batchnorm2d: zero-size batch")
    if eps <= 0:
        raise ConfigurationError("batchnorm2d: eps must be > 0")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batchnorm2d: gamma/beta shape must be ({c},)")
    if mode not in ("train", "eval"):
        raise ConfigurationError(f"batchnorm2d: mode must be train|eval, got {mode!r}")
    g4 = gamma.data[None, :, None, None]
    b4 = beta.data[None, :, None, None]

    if mode == "eval":
        if running is None:
            raise ConfigurationError("batchnorm2d: eval mode needs running stats")
        inv = 1.0 / np.sqrt(running.var + eps)
        xhat = (x.data - running.mean[None, :, None, None]) * inv[None, :, None, None]
        out = (g4 * xhat + b4).astype(x.dtype, copy=False)
        inv4 = inv[None, :, None, None].astype(x.dtype)

        def backward_eval(g):
            return g * g4 * inv4, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

        return emit("batchnorm2d", out, (x, gamma, beta), backward_eval)

    m = n * h * w
    mean = x.data.mean(axis=(0, 2, 3))
    centered = x.data - mean[None, :, None, None]
    var = (centered * centered).mean(axis=(0, 2, 3))
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    inv4 = inv[None, :, None, None]
    xhat = centered * inv4
    out = g4 * xhat + b4
    if running is not None:
        mom = running.momentum
        running.mean[...] = (1 - mom) * running.mean + mom * mean
        running.var[...] = (1 - mom) * running.var + mom * var

    def backward(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = g * g4
        s1 = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
        s2 = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
        dx = (inv4 / m) * (m * dxhat - s1 - xhat * s2)
        return dx, dgamma, dbeta

    return emit("batchnorm2d", out, (x, gamma, beta), backward)


# -- dense / shape ops -------------------------------------------------------------

def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` for ``x[N,F]``, ``weight[Fout,F]``."""
    _need(x, 2, "dense", "N,F")
    _need(weight, 2, "dense weight", "Fout,F")
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"dense: input features (axis 1) {x.shape[1]} != weight in-features (axis 1) {weight.shape[1]}"
        )
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"dense: bias shape {bias.shape} != ({weight.shape[0]},)")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        dx = g @ weight.data if x.requires_grad else None
        dw = g.T @ x.data if weight.requires_grad else None
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=0)

    return emit("dense", out, inputs, backward)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return emit("reshape", out, (x,), backward)


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")

    def backward(g):
        return g, g

    return emit("add", a.data + b.data, (a, b), backward)


def scale(x: Tensor, factor: float) -> Tensor:
    def backward(g):
        return (g * factor,)

    return emit("scale", x.data * x.dtype.type(factor), (x,), backward)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis
        ):
            raise DimensionError(f"concat: incompatible shapes {ref} and {t.shape} on axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, bounds, axis=axis))

    return emit("concat", out, tensors, backward)


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        return (np.full(x.shape, g, dtype=x.dtype),)

    return emit("sum", np.asarray(x.data.sum(), dtype=x.dtype), (x,), backward)


# -- activations -----------------------------------------------------------------

def activation(x: Tensor, kind: str = "relu") -> Tensor:
    """``relu``: max(0, x); ``relu6``: min(max(0, x), 6).

    The gradient is 1 strictly inside the active region and 0 at the kinks.
    """
    if kind == "relu":
        active = x.data > 0
        out = np.where(active, x.data, 0).astype(x.dtype, copy=False)
    elif kind == "relu6":
        active = (x.data > 0) & (x.data < 6)
        out = np.clip(x.data, 0, 6)
    else:
        raise ConfigurationError(f"activation: unknown kind {kind!r}")
    note_branches(np.packbits(active))

    def backward(g):
        return (g * active,)

    return emit(kind, out, (x,), backward)


def relu(x: Tensor) -> Tensor:
    return activation(x, "relu")


def relu6(x: Tensor) -> Tensor:
    return activation(x, "relu6")


# -- losses ----------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> tuple[Tensor, np.ndarray]:
    """Mean negative log-likelihood of integer ``labels`` under row softmax.

    Returns ``(loss, probs)``; ``loss`` is a scalar tensor on the tape.
    """
    _need(logits, 2, "softmax_cross_entropy", "N,C")
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"softmax_cross_entropy: labels shape {labels.shape} != ({n},)")
    bad = np.flatnonzero((labels < 0) | (labels >= c))
    if bad.size:
        r = int(bad[0])
        raise LabelError(f"label {int(labels[r])} at row {r} outside [0, {c})")
    labels = labels.astype(np.int64)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    logp = z - lse[:, None]
    probs = np.exp(logp)
    loss = -logp[np.arange(n), labels].mean()

    def backward(g):
        d = probs.copy()
        d[np.arange(n), labels] -= 1
        return (d * (g / n),)

    out = emit("softmax_cross_entropy", np.asarray(loss, dtype=logits.dtype), (logits,), backward)
    return out, probs


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error against a constant ``target`` array."""
    target = np.asarray(target, dtype=pred.dtype)
    if target.shape != pred.shape:
        raise DimensionError(f"mse_loss: shapes {pred.shape} and {target.shape} differ")
    diff = pred.data - target
    loss = np.asarray((diff * diff).mean(), dtype=pred.dtype)

    def backward(g):
        return (diff * (2.0 * g / diff.size),)

    return emit("mse_loss", loss, (pred,), backward)
