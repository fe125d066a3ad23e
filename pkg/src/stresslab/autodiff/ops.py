"""Differentiable operations. Image tensors are laid out N x H x W x C."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import as_strided

from stresslab.errors import ShapeMismatch
from stresslab.autodiff.tensor import Tensor, make


def _need(t: Tensor) -> bool:
    return t.requires_grad


# -- elementwise ----------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def backward(g):
        return (g * (out > 0),)

    return make(out, (x,), backward, "relu")


def sigmoid(x: Tensor) -> Tensor:
    out = np.empty_like(x.data)
    pos = x.data >= 0
    # split by sign so exp never overflows
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    out[~pos] = e / (1.0 + e)

    def backward(g):
        return (g * out * (1.0 - out),)

    return make(out, (x,), backward, "sigmoid")


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}")

    def backward(g):
        return g, g

    return make(a.data + b.data, (a, b), backward, "add")


def mul_const(x: Tensor, c: np.ndarray) -> Tensor:
    """Multiply by a constant array broadcastable to ``x`` (e.g. a void mask)."""
    c = np.asarray(c, dtype=x.dtype)
    out = x.data * c
    if out.shape != x.shape:
        raise ShapeMismatch(f"mul_const: constant {c.shape} does not broadcast onto {x.shape}")

    def backward(g):
        return (g * c,)

    return make(out, (x,), backward, "mul_const")


def scale_channels(x: Tensor, s: Tensor) -> Tensor:
    """``x[n, h, w, c] * s[n, c]`` (squeeze-and-excitation rescale)."""
    if x.data.ndim != 4 or s.shape != (x.shape[0], x.shape[3]):
        raise ShapeMismatch(f"scale_channels: {x.shape} vs {s.shape}")
    sb = s.data[:, None, None, :]
    out = x.data * sb

    def backward(g):
        gx = g * sb if _need(x) else None
        gs = (g * x.data).sum(axis=(1, 2)) if _need(s) else None
        return gx, gs

    return make(out, (x, s), backward, "scale_channels")


# -- shape ----------------------------------------------------------------------


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = x.data.reshape(shape)
    src = x.shape

    def backward(g):
        return (g.reshape(src),)

    return make(out, (x,), backward, "reshape")


def concat(xs: list[Tensor], axis: int = -1) -> Tensor:
    out = np.concatenate([t.data for t in xs], axis=axis)
    sizes = [t.shape[axis] for t in xs]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return make(out, tuple(xs), backward, "concat")


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    out = np.ascontiguousarray(x.data[..., start:stop])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[..., start:stop] = g
        return (gx,)

    return make(out, (x,), backward, "slice_channels")


# -- dense ----------------------------------------------------------------------


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` for ``x`` of shape (N, in) and ``w`` of shape (in, out)."""
    if x.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"dense: input {x.shape} vs weight {w.shape}")
    out = x.data @ w.data
    if b is not None:
        out += b.data

    def backward(g):
        gx = g @ w.data.T if _need(x) else None
        gw = x.data.T @ g if _need(w) else None
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return make(out, parents, backward, "dense")


# -- convolution ----------------------------------------------------------------


def _same_pads(size: int, k: int, s: int) -> tuple[int, int, int]:
    out = -(-size // s)
    total = max((out - 1) * s + k - size, 0)
    return out, total // 2, total - total // 2


def _windows(xp: np.ndarray, kh: int, kw: int, s: int, ho: int, wo: int) -> np.ndarray:
    n, _, _, c = xp.shape
    sn, sh, sw, sc = xp.strides
    return as_strided(xp, (n, ho, wo, kh, kw, c), (sn, sh * s, sw * s, sh, sw, sc), writeable=False)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: str = "same") -> Tensor:
    """2-D cross-correlation; ``w`` is (kh, kw, C_in, C_out).

    ``padding="same"`` gives ``ceil(H / stride)`` outputs with the extra
    padding row/column at the bottom/right; ``"valid"`` pads nothing.
    """
    n, h, wd, c = x.shape
    kh, kw, c2, f = w.shape
    if c != c2:
        raise ShapeMismatch(f"conv2d: input channels {c} vs kernel {w.shape}")
    s = stride
    if padding == "same":
        ho, pt, pb = _same_pads(h, kh, s)
        wo, pl, pr = _same_pads(wd, kw, s)
    elif padding == "valid":
        ho, wo = (h - kh) // s + 1, (wd - kw) // s + 1
        pt = pb = pl = pr = 0
        if ho < 1 or wo < 1:
            raise ShapeMismatch(f"conv2d: kernel {kh}x{kw} larger than input {h}x{wd}")
    else:
        raise ValueError(f"unknown padding {padding!r}")
    if pt or pb or pl or pr:
        xp = np.zeros((n, h + pt + pb, wd + pl + pr, c), dtype=x.dtype)
        xp[:, pt : pt + h, pl : pl + wd, :] = x.data
    else:
        xp = x.data
    hp, wp = xp.shape[1:3]
    span_h, span_w = s * (ho - 1) + 1, s * (wo - 1) + 1

    def crop(gp):
        return gp[:, pt : pt + h, pl : pl + wd, :]

    # gather (im2col) when the unfolded input is smaller than the unfolded output
    if c * ho * wo <= f * hp * wp:
        cols = _windows(xp, kh, kw, s, ho, wo).reshape(n * ho * wo, kh * kw * c)
        w2 = w.data.reshape(kh * kw * c, f)
        out = (cols @ w2).reshape(n, ho, wo, f)
        if b is not None:
            out += b.data

        def backward(g):
            g2 = g.reshape(n * ho * wo, f)
            gx = gw = None
            if _need(x):
                dcols = (g2 @ w2.T).reshape(n, ho, wo, kh, kw, c)
                gp = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        gp[:, i : i + span_h : s, j : j + span_w : s, :] += dcols[:, :, :, i, j, :]
                gx = crop(gp)
            if _need(w):
                gw = (cols.T @ g2).reshape(kh, kw, c, f)
            if b is None:
                return gx, gw
            return gx, gw, g2.sum(axis=0)

    else:
        # scatter: project every input pixel onto all kernel taps (tap-major
        # so each shifted slice is contiguous), then shift-sum
        w2 = w.data.transpose(0, 1, 3, 2).reshape(kh * kw * f, c)
        xp2 = xp.reshape(n * hp * wp, c)
        z = (w2 @ xp2.T).reshape(kh, kw, f, n, hp, wp)
        acc = np.zeros((f, n, ho, wo), dtype=z.dtype)
        for i in range(kh):
            for j in range(kw):
                acc += z[i, j, :, :, i : i + span_h : s, j : j + span_w : s]
        del z
        out = np.ascontiguousarray(acc.transpose(1, 2, 3, 0))
        if b is not None:
            out += b.data

        def backward(g):
            gt = g.transpose(3, 0, 1, 2)
            dz = np.zeros((kh, kw, f, n, hp, wp), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dz[i, j, :, :, i : i + span_h : s, j : j + span_w : s] = gt
            dz2 = dz.reshape(kh * kw * f, n * hp * wp)
            gx = gw = None
            if _need(x):
                gx = crop((dz2.T @ w2).reshape(n, hp, wp, c))
            if _need(w):
                gw = (dz2 @ xp2).reshape(kh, kw, f, c).transpose(0, 1, 3, 2)
            if b is None:
                return gx, gw
            return gx, gw, g.sum(axis=(0, 1, 2))

    parents = (x, w) if b is None else (x, w, b)
    return make(out, parents, backward, "conv2d")


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 2) -> Tensor:
    """Transposed convolution producing ``H * stride`` by ``W * stride`` outputs.

    Exact adjoint of :func:`conv2d` with ``padding="same"`` and the same
    stride; ``w`` is (kh, kw, C_in, C_out).
    """
    n, h, wd, c = x.shape
    kh, kw, c2, f = w.shape
    if c != c2:
        raise ShapeMismatch(f"conv_transpose2d: input channels {c} vs kernel {w.shape}")
    s = stride
    ho, wo = h * s, wd * s
    fh, fw = (h - 1) * s + kh, (wd - 1) * s + kw
    _, pt, _ = _same_pads(ho, kh, s)
    _, pl, _ = _same_pads(wo, kw, s)
    span_h, span_w = s * (h - 1) + 1, s * (wd - 1) + 1
    full_h, full_w = max(fh, pt + ho), max(fw, pl + wo)
    wr = w.data.transpose(2, 0, 1, 3).reshape(c, kh * kw * f)
    x2 = x.data.reshape(n * h * wd, c)
    z = (x2 @ wr).reshape(n, h, wd, kh, kw, f)
    full = np.zeros((n, full_h, full_w, f), dtype=z.dtype)
    for i in range(kh):
        for j in range(kw):
            full[:, i : i + span_h : s, j : j + span_w : s, :] += z[:, :, :, i, j, :]
    del z
    out = np.ascontiguousarray(full[:, pt : pt + ho, pl : pl + wo, :])
    if b is not None:
        out += b.data

    def backward(g):
        gfull = np.zeros((n, full_h, full_w, f), dtype=g.dtype)
        gfull[:, pt : pt + ho, pl : pl + wo, :] = g
        dz = np.empty((n, h, wd, kh, kw, f), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                dz[:, :, :, i, j, :] = gfull[:, i : i + span_h : s, j : j + span_w : s, :]
        dz2 = dz.reshape(n * h * wd, kh * kw * f)
        gx = (dz2 @ wr.T).reshape(n, h, wd, c) if _need(x) else None
        gw = (x2.T @ dz2).reshape(c, kh, kw, f).transpose(1, 2, 0, 3) if _need(w) else None
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 1, 2))

    parents = (x, w) if b is None else (x, w, b)
    return make(out, parents, backward, "conv_transpose2d")


# -- resampling -----------------------------------------------------------------


def max_pool2x2(x: Tensor) -> Tensor:
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeMismatch(f"max_pool2x2 needs even spatial dims, got {h}x{w}")
    blocks = x.data.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
    idx = blocks.argmax(axis=-1)  # first maximum wins ties
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros((n, h // 2, w // 2, c, 4), dtype=g.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gx = gb.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)
        return (gx,)

    return make(out, (x,), backward, "max_pool2x2")


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour upsampling by two in both spatial directions."""
    n, h, w, c = x.shape
    out = np.broadcast_to(x.data[:, :, None, :, None, :], (n, h, 2, w, 2, c)).reshape(n, 2 * h, 2 * w, c)

    def backward(g):
        return (g.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4)),)

    return make(out, (x,), backward, "upsample2x")


def global_avg_pool(x: Tensor) -> Tensor:
    n, h, w, c = x.shape
    out = x.data.mean(axis=(1, 2))

    def backward(g):
        return (np.broadcast_to(g[:, None, None, :] / (h * w), x.shape).astype(g.dtype),)

    return make(out, (x,), backward, "global_avg_pool")


# -- normalization --------------------------------------------------------------


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over all but the last axis.

    In training mode the batch statistics are used and the running averages
    are updated in place; otherwise the running averages are used.
    """
    axes = tuple(range(x.data.ndim - 1))
    if training:
        mu = x.data.mean(axis=axes)
        xc = x.data - mu
        var = (xc * xc).mean(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mu, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)
        xc = x.data - mu
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    m = math.prod(x.shape[:-1])

    def backward(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gx = None
        if _need(x):
            dxhat = g * gamma.data
            if training:
                gx = (inv / m) * (m * dxhat - (gb * gamma.data) - xhat * (gg * gamma.data))
            else:
                gx = dxhat * inv
        return gx, gg, gb

    return make(out, (x, gamma, beta), backward, "batch_norm")


# -- loss -----------------------------------------------------------------------


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target
    out = np.asarray(np.mean(diff * diff, dtype=np.float64), dtype=pred.dtype)
    scale = 2.0 / diff.size

    def backward(g):
        return ((g * scale) * diff,)

    return make(out, (pred,), backward, "mse_loss")


def project(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar ``sum(x * weights)``; a random ``weights`` turns any output into a test loss."""
    weights = np.asarray(weights, dtype=x.dtype)
    if weights.shape != x.shape:
        raise ShapeMismatch(f"project: {x.shape} vs {weights.shape}")
    out = np.asarray(np.sum(x.data * weights, dtype=np.float64), dtype=x.dtype)

    def backward(g):
        return (g * weights,)

    return make(out, (x,), backward, "project")
