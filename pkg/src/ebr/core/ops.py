"""Differentiable operations over channels-last batched tensors.

Layouts: 1-D signals are ``(batch, length, channels)``, images are
``(batch, height, width, channels)``. Kernels are ``(*taps, c_in, c_out)``.
All convolutions use same-size zero padding.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from .tensor import Tensor, as_tensor, make_node

__all__ = [
    "conv", "conv_transpose", "dense", "relu", "avgpool", "upsample", "add",
    "sub", "scale", "reshape", "mse_masked", "sum", "sum_squares",
    "softmax_xent", "same_padding",
]


def same_padding(n: int, k: int, stride: int) -> tuple[int, int, int]:
    """Output size and (before, after) zero padding for a same-padded conv."""
    out = math.ceil(n / stride)
    total = max((out - 1) * stride + k - n, 0)
    return out, total // 2, total - total // 2


def _check_conv(x: Tensor, w: Tensor, what: str) -> int:
    rank = w.ndim - 2
    if rank not in (1, 2):
        raise ValueError(f"{what}: kernel must have rank 3 or 4, got shape {w.shape}")
    if x.ndim != rank + 2:
        raise ValueError(f"{what}: input shape {x.shape} does not fit kernel shape {w.shape}")
    if x.shape[-1] != w.shape[-2]:
        raise ValueError(
            f"{what}: input channels {x.shape[-1]} (input shape {x.shape}) "
            f"!= kernel input channels {w.shape[-2]} (kernel shape {w.shape})")
    return rank


def _tap_slices(taps, outs, stride):
    return tuple(slice(t, t + (o - 1) * stride + 1, stride) for t, o in zip(taps, outs))


def conv(x, w, b=None, stride: int = 1) -> Tensor:
    """Same-padded strided convolution (cross-correlation), rank 1 or 2."""
    x, w = as_tensor(x), as_tensor(w)
    rank = _check_conv(x, w, "conv")
    ks = w.shape[:rank]
    cin, cout = w.shape[-2:]
    spatial = x.shape[1:1 + rank]
    geo = [same_padding(n, k, stride) for n, k in zip(spatial, ks)]
    outs = [g[0] for g in geo]
    pad = [(0, 0)] + [(g[1], g[2]) for g in geo] + [(0, 0)]
    xp = np.pad(x.data, pad)
    batch = x.shape[0]
    m = batch * int(np.prod(outs))
    taps = list(itertools.product(*[range(k) for k in ks]))
    k_all = len(taps) * cin
    # all taps side by side, so the whole convolution is one matrix product
    cols = np.concatenate([xp[(slice(None),) + _tap_slices(tap, outs, stride)] for tap in taps],
                          axis=-1).reshape(m, k_all)
    wmat = w.data.reshape(k_all, cout)
    out = (cols @ wmat).reshape(batch, *outs, cout)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data
        parents.append(b)

    def backward_fn(g):
        g2 = g.reshape(m, cout)
        gx = gw = None
        if w.requires_grad:
            gw = (cols.T @ g2).reshape(w.shape)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            gcols = (g2 @ wmat.T).reshape(batch, *outs, len(taps), cin)
            for t, tap in enumerate(taps):
                gxp[(slice(None),) + _tap_slices(tap, outs, stride)] += gcols[..., t, :]
            crop = (slice(None),) + tuple(slice(lo, lo + n) for (lo, _), n in zip(pad[1:-1], spatial))
            gx = gxp[crop]
        res = [gx, gw]
        if b is not None:
            res.append(g2.sum(axis=0))
        return res

    return make_node(out, "conv1d" if rank == 1 else "conv2d", parents, backward_fn)


def conv_transpose(x, w, b=None, stride: int = 1) -> Tensor:
    """Transposed convolution with same-style output size ``n * stride``.

    Kernel layout is ``(*taps, c_in, c_out)``; input position ``i`` scatters
    ``x[i] @ w[tap]`` to output position ``i * stride + tap - crop``.
    """
    x, w = as_tensor(x), as_tensor(w)
    rank = _check_conv(x, w, "conv_transpose")
    ks = w.shape[:rank]
    cin, cout = w.shape[-2:]
    spatial = x.shape[1:1 + rank]
    batch = x.shape[0]
    crops = [max(k - stride, 0) // 2 for k in ks]
    outs = [n * stride for n in spatial]
    buf = [max((n - 1) * stride + k, o + c) for n, k, o, c in zip(spatial, ks, outs, crops)]
    m = batch * int(np.prod(spatial))
    x2 = x.data.reshape(m, cin)
    full = np.zeros((batch, *buf, cout), dtype=np.result_type(x.data, w.data))
    taps = list(itertools.product(*[range(k) for k in ks]))
    for tap in taps:
        sl = (slice(None),) + _tap_slices(tap, spatial, stride)
        full[sl] += (x2 @ w.data[tap]).reshape(batch, *spatial, cout)
    crop = (slice(None),) + tuple(slice(c, c + o) for c, o in zip(crops, outs))
    out = full[crop]
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data
        parents.append(b)
    else:
        out = out.copy()

    def backward_fn(g):
        gfull = np.zeros_like(full)
        gfull[crop] = g
        gx = np.zeros_like(x2) if x.requires_grad else None
        gw = np.zeros_like(w.data) if w.requires_grad else None
        for tap in taps:
            sl = (slice(None),) + _tap_slices(tap, spatial, stride)
            gs = np.ascontiguousarray(gfull[sl]).reshape(m, cout)
            if gx is not None:
                gx += gs @ w.data[tap].T
            if gw is not None:
                gw[tap] = x2.T @ gs
        res = [None if gx is None else gx.reshape(x.shape), gw]
        if b is not None:
            res.append(g.reshape(-1, cout).sum(axis=0))
        return res

    return make_node(out, "transpose-conv", parents, backward_fn)


def dense(x, w, b=None) -> Tensor:
    """Affine map over the last axis: ``x @ w + b``."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ValueError(f"dense: input shape {x.shape} does not fit weight shape {w.shape}")
    x2 = x.data.reshape(-1, w.shape[0])
    out = (x2 @ w.data).reshape(*x.shape[:-1], w.shape[1])
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data
        parents.append(b)

    def backward_fn(g):
        g2 = g.reshape(-1, w.shape[1])
        res = [(g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None,
               x2.T @ g2 if w.requires_grad else None]
        if b is not None:
            res.append(g2.sum(axis=0))
        return res

    return make_node(out, "dense", parents, backward_fn)


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0)
    return make_node(out, "relu", [x], lambda g: [g * (out > 0)])


def _blocked_shape(shape, size):
    spatial = shape[1:-1]
    if any(n % size for n in spatial):
        raise ValueError(f"pool/upsample size {size} does not divide spatial shape {spatial}")
    blocked = [shape[0]]
    for n in spatial:
        blocked += [n // size, size]
    return blocked + [shape[-1]], tuple(2 + 2 * i for i in range(len(spatial)))


def avgpool(x, size: int = 2) -> Tensor:
    """Non-overlapping average pooling over every spatial axis."""
    x = as_tensor(x)
    blocked, axes = _blocked_shape(x.shape, size)
    out = x.data.reshape(blocked).mean(axis=axes)
    n = size ** len(axes)

    def backward_fn(g):
        ge = np.expand_dims(g / n, axes)
        return [np.broadcast_to(ge, blocked).reshape(x.shape)]

    return make_node(out, "avgpool", [x], backward_fn)


def upsample(x, size: int = 2) -> Tensor:
    """Nearest-neighbour upsampling by block replication."""
    x = as_tensor(x)
    out = x.data
    for ax in range(1, x.ndim - 1):
        out = np.repeat(out, size, axis=ax)
    blocked, axes = _blocked_shape(out.shape, size)
    return make_node(out, "upsample", [x], lambda g: [g.reshape(blocked).sum(axis=axes)])


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return make_node(a.data + b.data, "add", [a, b], lambda g: [g, g])


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"sub: shape mismatch {a.shape} vs {b.shape}")
    return make_node(a.data - b.data, "sub", [a, b], lambda g: [g, -g])


def scale(x, c) -> Tensor:
    """Multiply by a constant scalar or a constant array of the same shape."""
    x = as_tensor(x)
    c = np.asarray(c.data if isinstance(c, Tensor) else c)
    if c.ndim and c.shape != x.shape:
        raise ValueError(f"scale: constant shape {c.shape} != tensor shape {x.shape}")
    c = c.astype(x.dtype, copy=False)
    return make_node(x.data * c, "scale", [x], lambda g: [g * c])


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)
    return make_node(out, "reshape", [x], lambda g: [g.reshape(x.shape)])


def mse_masked(pred, target, mask) -> Tensor:
    """Mean of squared error over entries with ``mask == 1``; shape ``(1,)``."""
    pred = as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.dtype)
    mask = np.asarray(mask, dtype=pred.dtype)
    if target.shape != pred.shape or mask.shape != pred.shape:
        raise ValueError(f"mse_masked: shapes {pred.shape}, {target.shape}, {mask.shape} differ")
    count = mask.sum()
    if count == 0:
        raise ValueError("mse_masked: empty mask")
    diff = np.where(mask > 0, pred.data - target, 0)
    out = np.array([np.sum(diff * diff) / count], dtype=pred.dtype)
    return make_node(out, "mse-masked", [pred], lambda g: [(2.0 * g[0] / count) * diff])


def sum(x) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    out = np.array([x.data.sum()], dtype=x.dtype)
    return make_node(out, "sum", [x], lambda g: [np.full(x.shape, g[0], dtype=x.dtype)])


def sum_squares(x) -> Tensor:
    x = as_tensor(x)
    out = np.array([np.sum(x.data * x.data)], dtype=x.dtype)
    return make_node(out, "sum-squares", [x], lambda g: [2.0 * g[0] * x.data])


def softmax_xent(logits, labels) -> Tensor:
    """Mean softmax cross-entropy of ``(n, k)`` logits against integer labels."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(labels)
    out = np.array([-logp[np.arange(n), labels].mean()], dtype=logits.dtype)

    def backward_fn(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return [p * (g[0] / n)]

    return make_node(out, "softmax-xent", [logits], backward_fn)
