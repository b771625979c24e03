"""Network operations with analytic backward passes.

Convolution is cross-correlation over NCHW via an explicit kernel-offset
im2col (k*k strided slice gathers) so both directions run on BLAS matmuls;
the col2im scatter in the input gradient is the same k*k slice loop in
reverse. Everything is deterministic for fixed inputs.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .tensor import Tensor, make_op


class ShapeError(ValueError):
    pass


def conv_out_size(size: int, k: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, dilation: int, oh: int, ow: int):
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            r0 = i * dilation
            c0 = j * dilation
            cols[:, :, i, j] = xp[:, :, r0 : r0 + stride * oh : stride, c0 : c0 + stride * ow : stride]
    return cols.reshape(n, c * kh * kw, oh * ow)


def _col2im(dcols: np.ndarray, xp_shape, kh: int, kw: int, stride: int, dilation: int, oh: int, ow: int):
    n, c = xp_shape[:2]
    dxp = np.zeros(xp_shape, dtype=dcols.dtype)
    dcols = dcols.reshape(n, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            r0 = i * dilation
            c0 = j * dilation
            dxp[:, :, r0 : r0 + stride * oh : stride, c0 : c0 + stride * ow : stride] += dcols[:, :, i, j]
    return dxp


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
) -> Tensor:
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input and OIKK weight, got {x.shape} / {weight.shape}")
    n, c, h, w = x.data.shape
    o, ci, kh, kw = weight.data.shape
    if ci != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, weight expects {ci}")
    if dilation < 1 or stride < 1:
        raise ShapeError("stride and dilation must be >= 1")
    oh = conv_out_size(h, kh, stride, padding, dilation)
    ow = conv_out_size(w, kw, stride, padding, dilation)
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d output would be empty: {x.shape} with k={kh}, d={dilation}, p={padding}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _im2col(xp, kh, kw, stride, dilation, oh, ow)  # (N, C*kh*kw, OH*OW)
    w2 = weight.data.reshape(o, c * kh * kw)
    out = np.matmul(w2[None], cols)  # (N, O, OH*OW)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1)
    out = out.reshape(n, o, oh, ow)

    def backward(g):
        g2 = g.reshape(n, o, oh * ow)
        if weight.requires_grad:
            dw = np.einsum("nol,nkl->ok", g2, cols)
            weight.accumulate_grad(dw.reshape(weight.data.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g2.sum(axis=(0, 2)))
        if x.requires_grad:
            dcols = np.matmul(w2.T[None], g2)  # (N, C*kh*kw, OH*OW)
            dxp = _col2im(dcols, xp.shape, kh, kw, stride, dilation, oh, ow)
            if padding:
                dxp = dxp[:, :, padding:-padding, padding:-padding]
            x.accumulate_grad(dxp)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, parents, backward, "conv2d")


def maxpool2d(x: Tensor, k: int = 2, s: int = 2) -> Tensor:
    if k != 2 or s != 2:
        raise ShapeError("maxpool2d supports the 2x2/stride-2 configuration used by the networks")
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2d needs even spatial dims, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    windows = (
        x.data.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    )
    idx = windows.argmax(axis=-1)  # first max wins ties: deterministic
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        if x.requires_grad:
            dwin = np.zeros_like(windows)
            np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
            dx = dwin.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
            x.accumulate_grad(dx)

    return make_op(out, (x,), backward, "maxpool2d")


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization.

    In training mode the (biased) batch statistics normalize and the running
    buffers are updated in place: running = (1 - momentum)*running +
    momentum*batch. Eval mode normalizes with the running buffers.
    """
    n, c, h, w = x.data.shape
    gshape = (1, c, 1, 1)
    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean.astype(x.data.dtype)
        var = running_var.astype(x.data.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(gshape)) * inv_std.reshape(gshape)
    out = gamma.data.reshape(gshape) * xhat + beta.data.reshape(gshape)

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gs = gamma.data.reshape(gshape)
            if training:
                m = n * h * w
                dxhat = g * gs
                sum_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True)
                sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                dx = (inv_std.reshape(gshape) / m) * (
                    m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat
                )
            else:
                dx = g * gs * inv_std.reshape(gshape)
            x.accumulate_grad(dx)

    return make_op(out, (x, gamma, beta), backward, "batchnorm2d")


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    """Integer-factor bilinear upsampling (half-pixel centers, clamped edges)."""
    if factor < 1 or int(factor) != factor:
        raise ShapeError(f"upsample factor must be a positive integer, got {factor}")
    if factor == 1:
        return x
    n, c, h, w = x.data.shape
    oh, ow = h * factor, w * factor

    def axis_index(size_out, size_in):
        src = (np.arange(size_out, dtype=np.float64) + 0.5) / factor - 0.5
        src = np.clip(src, 0.0, size_in - 1.0)
        i0 = np.floor(src).astype(np.int64)
        i1 = np.minimum(i0 + 1, size_in - 1)
        frac = (src - i0).astype(x.data.dtype)
        return i0, i1, frac

    y0, y1, fy = axis_index(oh, h)
    x0, x1, fx = axis_index(ow, w)
    wy = fy[:, None]
    wx = fx[None, :]
    tl = x.data[:, :, y0[:, None], x0[None, :]]
    tr = x.data[:, :, y0[:, None], x1[None, :]]
    bl = x.data[:, :, y1[:, None], x0[None, :]]
    br = x.data[:, :, y1[:, None], x1[None, :]]
    out = (
        tl * (1 - wy) * (1 - wx)
        + tr * (1 - wy) * wx
        + bl * wy * (1 - wx)
        + br * wy * wx
    )

    def backward(g):
        if not x.requires_grad:
            return
        dx = np.zeros((n * c, h * w), dtype=g.dtype)
        g2 = g.reshape(n * c, oh * ow)
        rows = np.arange(n * c)[:, None]
        for iy, ix, wgt in (
            (y0, x0, (1 - wy) * (1 - wx)),
            (y0, x1, (1 - wy) * wx),
            (y1, x0, wy * (1 - wx)),
            (y1, x1, wy * wx),
        ):
            flat = (iy[:, None] * w + ix[None, :]).reshape(1, oh * ow)
            np.add.at(dx, (rows, flat), g2 * wgt.reshape(1, oh * ow))
        x.accumulate_grad(dx.reshape(n, c, h, w))

    return make_op(out, (x,), backward, "upsample_bilinear")


# ---------------------------------------------------------------------------
# Criss-cross attention primitives
# ---------------------------------------------------------------------------

# Energies are laid out as (N, H, W, H+W): the first H slots are the query's
# column (index i = row), the last W slots its row (index j = col). The
# column slot i == h duplicates the query pixel itself, so it is masked to
# -inf before the softmax, leaving the H+W-1 distinct criss-cross positions.

_NEG_INF = np.float64(-1e30)


def cc_energy(q: Tensor, k: Tensor) -> Tensor:
    if q.data.shape != k.data.shape:
        raise ShapeError(f"cc_energy shape mismatch: {q.shape} vs {k.shape}")
    n, c, h, w = q.data.shape
    e_col = np.einsum("nchw,nciw->nhwi", q.data, k.data)
    e_row = np.einsum("nchw,nchj->nhwj", q.data, k.data)
    out = np.concatenate([e_col, e_row], axis=3)

    def backward(g):
        g_col = g[..., :h]
        g_row = g[..., h:]
        if q.requires_grad:
            dq = np.einsum("nhwi,nciw->nchw", g_col, k.data)
            dq += np.einsum("nhwj,nchj->nchw", g_row, k.data)
            q.accumulate_grad(dq)
        if k.requires_grad:
            dk = np.einsum("nhwi,nchw->nciw", g_col, q.data)
            dk += np.einsum("nhwj,nchw->nchj", g_row, q.data)
            k.accumulate_grad(dk)

    return make_op(out, (q, k), backward, "cc_energy")


def cc_mask_self(energy: Tensor) -> Tensor:
    """Push the duplicated self slot (column slot i == h) to -inf."""
    n, h, w, hw = energy.data.shape
    mask = np.zeros((1, h, w, hw), dtype=energy.data.dtype)
    rows = np.arange(h)
    mask[0, rows, :, rows] = _NEG_INF

    def backward(g):
        if energy.requires_grad:
            energy.accumulate_grad(g)

    return make_op(energy.data + mask, (energy,), backward, "cc_mask_self")


def cc_aggregate(attn: Tensor, v: Tensor) -> Tensor:
    n, h, w, hw = attn.data.shape
    _, c, vh, vw = v.data.shape
    if (vh, vw) != (h, w) or hw != h + w:
        raise ShapeError(f"cc_aggregate shape mismatch: attn {attn.shape} vs v {v.shape}")
    a_col = attn.data[..., :h]
    a_row = attn.data[..., h:]
    out = np.einsum("nhwi,nciw->nchw", a_col, v.data)
    out += np.einsum("nhwj,nchj->nchw", a_row, v.data)

    def backward(g):
        if attn.requires_grad:
            d_col = np.einsum("nchw,nciw->nhwi", g, v.data)
            d_row = np.einsum("nchw,nchj->nhwj", g, v.data)
            attn.accumulate_grad(np.concatenate([d_col, d_row], axis=3))
        if v.requires_grad:
            dv = np.einsum("nhwi,nchw->nciw", a_col, g)
            dv += np.einsum("nhwj,nchw->nchj", a_row, g)
            v.accumulate_grad(dv)

    return make_op(out, (attn, v), backward, "cc_aggregate")


# ---------------------------------------------------------------------------
# Losses (fused, numerically stable)
# ---------------------------------------------------------------------------


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def weighted_bce_with_logits(
    logits: Tensor,
    targets: np.ndarray,
    pos_weight: np.ndarray | float = 1.0,
    neg_weight: np.ndarray | float = 1.0,
) -> Tensor:
    """Mean of w_pos*t*softplus(-l) + w_neg*(1-t)*softplus(l) over all elements."""
    t = np.asarray(targets, dtype=logits.data.dtype)
    if t.shape != logits.data.shape:
        raise ShapeError(f"targets shape {t.shape} != logits shape {logits.shape}")
    wp = np.asarray(pos_weight, dtype=logits.data.dtype)
    wn = np.asarray(neg_weight, dtype=logits.data.dtype)
    l = logits.data
    count = l.size
    per_elem = wp * t * _softplus(-l) + wn * (1.0 - t) * _softplus(l)
    loss = per_elem.sum() / count

    def backward(g):
        if logits.requires_grad:
            sig = _sigmoid(l)
            dl = (wp * t * (sig - 1.0) + wn * (1.0 - t) * sig) / count
            logits.accumulate_grad(g * dl)

    return make_op(np.asarray(loss, dtype=l.dtype), (logits,), backward, "bce_with_logits")


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    return weighted_bce_with_logits(logits, targets, 1.0, 1.0)


def cce_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean per-pixel categorical cross-entropy; labels are (N, H, W) class ids."""
    n, k, h, w = logits.data.shape
    lab = np.asarray(labels)
    if lab.shape != (n, h, w):
        raise ShapeError(f"labels shape {lab.shape} != (N, H, W) = {(n, h, w)}")
    if lab.min() < 0 or lab.max() >= k:
        raise ShapeError(f"label ids must lie in [0, {k}), found [{lab.min()}, {lab.max()}]")
    x = logits.data
    shifted = x - x.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - logsumexp
    count = n * h * w
    picked = np.take_along_axis(log_probs, lab[:, None], axis=1)[:, 0]
    loss = -picked.sum() / count

    def backward(g):
        if logits.requires_grad:
            probs = np.exp(log_probs)
            onehot = np.zeros_like(probs)
            np.put_along_axis(onehot, lab[:, None], 1.0, axis=1)
            logits.accumulate_grad(g * (probs - onehot) / count)

    return make_op(np.asarray(loss, dtype=x.dtype), (logits,), backward, "cce_with_logits")
