"""Differentiable operations on ``(batch, channels, length)`` tensors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import AutogradError, Tensor, record


def _as_tensor(x, like: Tensor) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=like.dtype))


def add(a: Tensor, b: Tensor) -> Tensor:
    b = _as_tensor(b, a)
    if a.shape != b.shape:
        raise AutogradError(f"add: shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)
    return record(out, (a, b), lambda g: (g, g), "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of equally shaped tensors."""
    b = _as_tensor(b, a)
    if a.shape != b.shape:
        raise AutogradError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)
    return record(out, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    out = Tensor(a.data * a.data.dtype.type(factor))
    return record(out, (a,), lambda g: (g * g.dtype.type(factor),), "scale")


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    out = Tensor(np.asarray(a.data.sum(), dtype=a.dtype))
    return record(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")


def concat(tensors, axis=1) -> Tensor:
    """Stack tensors along the channel axis."""
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, bounds, axis=axis))

    return record(out, tensors, backward, "concat")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, x.dtype.type(0)))
    return record(out, (x,), lambda g: (g * mask,), "relu")


def same_padding(length: int, kernel: int, stride: int) -> tuple[int, int]:
    """Zero padding giving ``ceil(length / stride)`` outputs, extra sample on the left."""
    out_len = -(-length // stride)
    total = max(0, (out_len - 1) * stride + kernel - length)
    left = (total + 1) // 2
    return left, total - left


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Strided 1-D cross-correlation with "same" zero padding.

    ``weight`` is ``(out_ch, in_ch, k)``. The output length is
    ``ceil(in_len / stride)``. Stride 1 requires an odd kernel so the
    padding can be symmetric.
    """
    if x.ndim != 3 or weight.ndim != 3:
        raise AutogradError("conv1d expects a (B, C, L) input and an (O, C, K) weight")
    batch, in_ch, length = x.shape
    out_ch, w_in, k = weight.shape
    if w_in != in_ch:
        raise AutogradError(f"conv1d: input has {in_ch} channels, weight expects {w_in}")
    if stride not in (1, 2):
        raise AutogradError(f"conv1d: unsupported stride {stride}")
    if stride == 1 and k % 2 == 0:
        raise AutogradError("conv1d: stride 1 needs an odd kernel size")
    if bias is not None and bias.shape != (out_ch,):
        raise AutogradError(f"conv1d: bias shape {bias.shape} != ({out_ch},)")

    left, right = same_padding(length, k, stride)
    out_len = -(-length // stride)
    span = stride * (out_len - 1) + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right)))
    # columns laid out (batch, in_ch * k, out_len): k shifted copies, no transposes
    cols = np.empty((batch, in_ch, k, out_len), dtype=xp.dtype)
    for j in range(k):
        cols[:, :, j, :] = xp[:, :, j:j + span:stride]
    cols = cols.reshape(batch, in_ch * k, out_len)
    wmat = weight.data.reshape(out_ch, in_ch * k)
    y = np.matmul(wmat, cols)
    if bias is not None:
        y += bias.data[None, :, None]
    out = Tensor(y)

    def backward(g):
        dw = db = dx = None
        if weight.requires_grad:
            acc = np.zeros((out_ch, in_ch * k), dtype=g.dtype)
            for n in range(batch):
                acc += g[n] @ cols[n].T
            dw = acc.reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            db = g.sum(axis=(0, 2))
        if x.requires_grad:
            dcols = np.matmul(wmat.T, g).reshape(batch, in_ch, k, out_len)
            dxp = np.zeros(xp.shape, dtype=g.dtype)
            for j in range(k):
                dxp[:, :, j:j + span:stride] += dcols[:, :, j, :]
            dx = np.ascontiguousarray(dxp[:, :, left:left + length])
        return dx, dw, db

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record(out, inputs, backward if bias is not None else lambda g: backward(g)[:2], "conv1d")


def subpixel_shuffle(x: Tensor, factor: int = 2) -> Tensor:
    """Channel-to-time interleave: ``out[b, c, r*t + i] = in[b, r*c + i, t]``."""
    batch, ch, length = x.shape
    if ch % factor:
        raise AutogradError(f"subpixel_shuffle: {ch} channels not divisible by {factor}")
    out = Tensor(x.data.reshape(batch, ch // factor, factor, length)
                 .transpose(0, 1, 3, 2).reshape(batch, ch // factor, length * factor))

    def backward(g):
        return (g.reshape(batch, ch // factor, length, factor).transpose(0, 1, 3, 2)
                .reshape(batch, ch, length),)

    return record(out, (x,), backward, "subpixel_shuffle")


def space_to_channel(x: Tensor, factor: int = 2) -> Tensor:
    """Inverse of :func:`subpixel_shuffle`."""
    batch, ch, length = x.shape
    if length % factor:
        raise AutogradError(f"space_to_channel: length {length} not divisible by {factor}")
    out = Tensor(x.data.reshape(batch, ch, length // factor, factor)
                 .transpose(0, 1, 3, 2).reshape(batch, ch * factor, length // factor))

    def backward(g):
        return (g.reshape(batch, ch, factor, length // factor).transpose(0, 1, 3, 2)
                .reshape(batch, ch, length),)

    return record(out, (x,), backward, "space_to_channel")


@dataclass
class RunningStats:
    """Per-channel running mean/variance of a batch-norm layer."""

    mean: np.ndarray
    var: np.ndarray
    updates: int = 0

    @classmethod
    def zeros(cls, channels, dtype=np.float32):
        return cls(np.zeros(channels, dtype), np.ones(channels, dtype), 0)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, stats: RunningStats, training: bool,
               momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over the batch and length axes.

    Training mode uses batch statistics and folds them into ``stats``
    (unbiased variance, like the common frameworks); eval mode uses
    ``stats``, which start at mean 0 and variance 1.
    """
    batch, ch, length = x.shape
    if gamma.shape != (ch,) or beta.shape != (ch,):
        raise AutogradError("batch_norm: gamma/beta must have one entry per channel")
    dt = x.dtype.type
    if training:
        n = batch * length
        if n <= 1:
            raise AutogradError("batch_norm: training needs more than one value per channel")
        mean = x.data.mean(axis=(0, 2))
        centered = x.data - mean[None, :, None]
        var = (centered ** 2).mean(axis=(0, 2))
        inv_std = dt(1) / np.sqrt(var + dt(eps))
        xhat = centered * inv_std[None, :, None]
        m = dt(momentum)
        stats.mean[...] = (1 - m) * stats.mean + m * mean
        stats.var[...] = (1 - m) * stats.var + m * var * dt(n / (n - 1))
        stats.updates += 1
    else:
        inv_std = dt(1) / np.sqrt(stats.var.astype(x.dtype) + dt(eps))
        xhat = (x.data - stats.mean.astype(x.dtype)[None, :, None]) * inv_std[None, :, None]
    out = Tensor(xhat * gamma.data[None, :, None] + beta.data[None, :, None])

    def backward(g):
        dgamma = (g * xhat).sum(axis=(0, 2))
        dbeta = g.sum(axis=(0, 2))
        gx = g * gamma.data[None, :, None]
        if training:
            dx = inv_std[None, :, None] * (
                gx - gx.mean(axis=(0, 2), keepdims=True)
                - xhat * (gx * xhat).mean(axis=(0, 2), keepdims=True))
        else:
            dx = gx * inv_std[None, :, None]
        return dx, dgamma, dbeta

    return record(out, (x, gamma, beta), backward, "batch_norm")


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1 / (1 - p)``; eval is identity."""
    if not 0 <= p < 1:
        raise AutogradError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0:
        return x
    if rng is None:
        raise AutogradError("dropout in training mode needs a random generator")
    keep = rng.random(x.shape) >= p
    return masked_scale(x, keep, 1.0 / (1.0 - p))


def masked_scale(x: Tensor, mask: np.ndarray, factor: float) -> Tensor:
    m = mask.astype(x.dtype) * x.dtype.type(factor)
    out = Tensor(x.data * m)
    return record(out, (x,), lambda g: (g * m,), "dropout")


def mse_loss(prediction: Tensor, target: Tensor) -> Tensor:
    if prediction.shape != target.shape:
        raise AutogradError(f"mse_loss: shape mismatch {prediction.shape} vs {target.shape}")
    diff = prediction.data - target.data
    n = diff.size
    out = Tensor(np.asarray(np.mean(diff.astype(np.float64) ** 2), dtype=prediction.dtype))

    def backward(g):
        gp = diff * (g * prediction.dtype.type(2.0 / n))
        return gp, -gp

    return record(out, (prediction, target), backward, "mse_loss")
