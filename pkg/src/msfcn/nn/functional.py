"""Numpy kernels for the differentiable primitives.

Every kernel takes batched arrays: features are ``(b, c, t, h, w)``. Kernels
keep the dtype of their inputs so the gradient checker can run them at
float64. Convolutions gather im2col blocks in bounded chunks and hand each
block to a single matrix product, so summation order only depends on the
shapes involved.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DataError, ShapeError
from ..tensor import IGNORE_INDEX

# upper bound on im2col elements materialized at once
COL_BUDGET = 1 << 23


def triple(v) -> tuple[int, int, int]:
    if type(v) is tuple and len(v) == 3:
        return v
    if np.isscalar(v):
        return (int(v),) * 3
    v = tuple(int(n) for n in v)
    if len(v) != 3:
        raise ShapeError(f"expected 3 values, got {v}")
    return v


def conv_out_shape(in_shape, kernel, stride, padding):
    out = []
    for n, k, s, p in zip(in_shape, kernel, stride, padding):
        if n + 2 * p < k:
            raise ShapeError(f"kernel {tuple(kernel)} larger than padded input {tuple(in_shape)}")
        out.append((n + 2 * p - k) // s + 1)
    return tuple(out)


def _check_conv(x, w, stride, padding):
    if x.ndim != 5:
        raise ShapeError(f"expected (b, c, t, h, w) input, got shape {x.shape}")
    if w.ndim != 5:
        raise ShapeError(f"expected (c_out, c_in, kt, kh, kw) weights, got {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, weights expect {w.shape[1]}")
    if min(stride) < 1 or min(padding) < 0:
        raise ShapeError(f"invalid stride {stride} or padding {padding}")


def _pad(x, padding):
    if not any(padding):
        return x
    pt, ph, pw = padding
    b, c, t, h, w = x.shape
    xp = np.zeros((b, c, t + 2 * pt, h + 2 * ph, w + 2 * pw), dtype=x.dtype)
    xp[:, :, pt:pt + t, ph:ph + h, pw:pw + w] = x
    return xp


def _chunks(nt, nh, row_cost):
    """Yield (t0, t1, h0, h1) blocks whose im2col size stays under budget."""
    rows = max(1, COL_BUDGET // max(row_cost, 1))
    if rows >= nh:
        per_t = max(1, rows // nh)
        for t0 in range(0, nt, per_t):
            yield t0, min(nt, t0 + per_t), 0, nh
    else:
        for t0 in range(nt):
            for h0 in range(0, nh, rows):
                yield t0, t0 + 1, h0, min(nh, h0 + rows)


def _is_pointwise(kernel, stride, padding):
    return kernel == (1, 1, 1) and stride == (1, 1, 1) and padding == (0, 0, 0)


def _windows(xp, kernel, stride):
    win = sliding_window_view(xp, kernel, axis=(2, 3, 4))
    st, sh, sw = stride
    return win[:, :, ::st, ::sh, ::sw]


def _cols(win, i, t0, t1, h0, h1):
    # (ci, nt, nh, nw, kt, kh, kw) -> (ci*kt*kh*kw, nt*nh*nw)
    block = win[i, :, t0:t1, h0:h1]
    ci = block.shape[0]
    return block.transpose(0, 4, 5, 6, 1, 2, 3).reshape(ci * np.prod(block.shape[4:]), -1)


def conv3d_forward(x, w, b=None, stride=1, padding=0):
    stride, padding = triple(stride), triple(padding)
    _check_conv(x, w, stride, padding)
    kernel = w.shape[2:]
    nb, ci = x.shape[:2]
    co = w.shape[0]
    to, ho, wo = conv_out_shape(x.shape[2:], kernel, stride, padding)
    dtype = np.result_type(x, w)
    out = np.empty((nb, co, to, ho, wo), dtype=dtype)
    wm = w.reshape(co, -1)
    if _is_pointwise(kernel, stride, padding):
        for i in range(nb):
            out[i] = (wm @ x[i].reshape(ci, -1)).reshape(co, to, ho, wo)
    else:
        win = _windows(_pad(x, padding), kernel, stride)
        row_cost = wm.shape[1] * wo
        for i in range(nb):
            for t0, t1, h0, h1 in _chunks(to, ho, row_cost):
                cols = _cols(win, i, t0, t1, h0, h1)
                out[i, :, t0:t1, h0:h1] = (wm @ cols).reshape(co, t1 - t0, h1 - h0, wo)
    if b is not None:
        out += b.reshape(1, co, 1, 1, 1)
    return out


def _scatter_cols(gxp, i, dcols, kernel, stride, t0, t1, h0, h1, wo):
    """Add column gradients back onto the padded input grid (col2im)."""
    kt, kh, kw = kernel
    st, sh, sw = stride
    dcols = dcols.reshape(-1, kt, kh, kw, t1 - t0, h1 - h0, wo)
    for p in range(kt):
        ts = slice(t0 * st + p, (t1 - 1) * st + p + 1, st)
        for q in range(kh):
            hs = slice(h0 * sh + q, (h1 - 1) * sh + q + 1, sh)
            for r in range(kw):
                ws = slice(r, (wo - 1) * sw + r + 1, sw)
                gxp[i, :, ts, hs, ws] += dcols[:, p, q, r]


def _crop(xp, padding):
    pt, ph, pw = padding
    t, h, w = xp.shape[2:]
    return xp[:, :, pt:t - pt, ph:h - ph, pw:w - pw]


def conv3d_backward(x, w, gy, stride=1, padding=0, need_x=True):
    """Gradients of :func:`conv3d_forward` for input, weights and bias."""
    stride, padding = triple(stride), triple(padding)
    kernel = w.shape[2:]
    nb, ci = x.shape[:2]
    co = w.shape[0]
    expected = (nb, co) + conv_out_shape(x.shape[2:], kernel, stride, padding)
    if gy.shape != expected:
        raise ShapeError(f"upstream gradient {gy.shape} does not match output {expected}")
    to, ho, wo = expected[2:]
    wm = w.reshape(co, -1)
    gb = gy.sum(axis=(0, 2, 3, 4))
    gw = np.zeros_like(wm, dtype=np.result_type(x, gy))
    if _is_pointwise(kernel, stride, padding):
        gx = np.empty_like(x, dtype=np.result_type(w, gy)) if need_x else None
        for i in range(nb):
            g = gy[i].reshape(co, -1)
            xi = x[i].reshape(ci, -1)
            gw += g @ xi.T
            if need_x:
                gx[i] = (wm.T @ g).reshape(x.shape[1:])
        return gx, gw.reshape(w.shape), gb
    xp = _pad(x, padding)
    win = _windows(xp, kernel, stride)
    gxp = np.zeros_like(xp, dtype=np.result_type(w, gy)) if need_x else None
    for i in range(nb):
        for t0, t1, h0, h1 in _chunks(to, ho, wm.shape[1] * wo):
            g = gy[i, :, t0:t1, h0:h1].reshape(co, -1)
            gw += g @ _cols(win, i, t0, t1, h0, h1).T
            if need_x:
                _scatter_cols(gxp, i, wm.T @ g, kernel, stride, t0, t1, h0, h1, wo)
    gx = _crop(gxp, padding) if need_x else None
    return gx, gw.reshape(w.shape), gb


def transposed_out_shape(in_shape, kernel, stride, padding):
    out = tuple((n - 1) * s + k - 2 * p for n, k, s, p in zip(in_shape, kernel, stride, padding))
    if min(out) < 1:
        raise ShapeError(f"transposed conv output {out} is empty")
    return out


def conv_transpose3d_forward(x, w, b=None, stride=1, padding=0):
    """Adjoint of the strided convolution whose weights are ``w``.

    ``w`` has shape ``(c_in, c_out, kt, kh, kw)``: viewed as an ordinary
    convolution it maps ``c_out`` channels to ``c_in`` and this op applies the
    transpose of that linear map (scatter-accumulate).
    """
    stride, padding = triple(stride), triple(padding)
    if x.ndim != 5 or w.ndim != 5:
        raise ShapeError(f"expected 5D input and weights, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"input has {x.shape[1]} channels, weights expect {w.shape[0]}")
    kernel = w.shape[2:]
    nb, ci = x.shape[:2]
    co = w.shape[1]
    out_sp = transposed_out_shape(x.shape[2:], kernel, stride, padding)
    padded = tuple(n + 2 * p for n, p in zip(out_sp, padding))
    dtype = np.result_type(x, w)
    gxp = np.zeros((nb, co) + padded, dtype=dtype)
    wm = w.reshape(ci, -1)
    ti, hi, wi = x.shape[2:]
    for i in range(nb):
        for t0, t1, h0, h1 in _chunks(ti, hi, wm.shape[1] * wi):
            g = x[i, :, t0:t1, h0:h1].reshape(ci, -1)
            _scatter_cols(gxp, i, wm.T @ g, kernel, stride, t0, t1, h0, h1, wi)
    out = np.ascontiguousarray(_crop(gxp, padding))
    if b is not None:
        out += b.reshape(1, co, 1, 1, 1)
    return out


def conv_transpose3d_backward(x, w, gy, stride=1, padding=0):
    stride, padding = triple(stride), triple(padding)
    expected = (x.shape[0], w.shape[1]) + transposed_out_shape(x.shape[2:], w.shape[2:], stride, padding)
    if gy.shape != expected:
        raise ShapeError(f"upstream gradient {gy.shape} does not match output {expected}")
    gx = conv3d_forward(gy, w, None, stride, padding)
    _, gw, _ = conv3d_backward(gy, w, x, stride, padding, need_x=False)
    gb = gy.sum(axis=(0, 2, 3, 4))
    return gx, gw, gb


def batchnorm_train(x, gamma, beta, eps):
    axes = (0, 2, 3, 4)
    if x.shape[1] != gamma.shape[0]:
        raise ShapeError(f"input has {x.shape[1]} channels, batchnorm has {gamma.shape[0]}")
    n = x.size // x.shape[1]
    if n < 2:
        raise ShapeError("batchnorm in train mode needs at least 2 values per channel")
    mean = x.mean(axis=axes)
    var = x.var(axis=axes)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(1, -1, 1, 1, 1)) * inv_std.reshape(1, -1, 1, 1, 1)
    y = xhat * gamma.reshape(1, -1, 1, 1, 1) + beta.reshape(1, -1, 1, 1, 1)
    return y, mean, var, xhat, inv_std


def batchnorm_train_backward(gy, xhat, inv_std, gamma):
    axes = (0, 2, 3, 4)
    n = gy.size // gy.shape[1]
    g_beta = gy.sum(axis=axes)
    g_gamma = (gy * xhat).sum(axis=axes)
    scale = (gamma * inv_std / n).reshape(1, -1, 1, 1, 1)
    gx = scale * (n * gy - g_beta.reshape(1, -1, 1, 1, 1) - xhat * g_gamma.reshape(1, -1, 1, 1, 1))
    return gx, g_gamma, g_beta


def maxpool3d_forward(x, kernel=(1, 2, 2)):
    """Non-overlapping max pool (stride equals kernel).

    Returns the pooled tensor and the flat in-window argmax, first occurrence
    in row-major window order.
    """
    kt, kh, kw = triple(kernel)
    nb, c, t, h, w = x.shape
    if t % kt or h % kh or w % kw:
        raise ShapeError(f"extents {(t, h, w)} not divisible by pool kernel {(kt, kh, kw)}")
    win = x.reshape(nb, c, t // kt, kt, h // kh, kh, w // kw, kw)
    win = win.transpose(0, 1, 2, 4, 6, 3, 5, 7).reshape(nb, c, t // kt, h // kh, w // kw, -1)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool3d_backward(gy, idx, in_shape, kernel=(1, 2, 2)):
    kt, kh, kw = triple(kernel)
    nb, c, t, h, w = in_shape
    gwin = np.zeros(gy.shape + (kt * kh * kw,), dtype=gy.dtype)
    np.put_along_axis(gwin, idx[..., None], gy[..., None], axis=-1)
    gwin = gwin.reshape(nb, c, t // kt, h // kh, w // kw, kt, kh, kw)
    return gwin.transpose(0, 1, 2, 5, 3, 6, 4, 7).reshape(in_shape)


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax_channels(logits, axis=1):
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax_channels(logits, axis=1):
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def cross_entropy(logits, labels, ignore_index=IGNORE_INDEX):
    """Mean softmax cross-entropy over non-ignored pixels.

    ``logits`` is ``(b, K, h, w)`` and ``labels`` ``(b, h, w)``. Returns the
    loss and its gradient with respect to ``logits``.
    """
    if logits.ndim != 4 or labels.shape != logits.shape[:1] + logits.shape[2:]:
        raise ShapeError(f"logits {logits.shape} and labels {labels.shape} disagree")
    k = logits.shape[1]
    labels = labels.astype(np.int64)
    valid = labels != ignore_index
    bad = valid & ((labels < 0) | (labels >= k))
    if bad.any():
        raise DataError(f"label value {int(labels[bad][0])} outside 0..{k - 1}")
    n = int(valid.sum())
    if n == 0:
        raise DataError("every pixel is ignore_index; loss undefined")
    safe = np.where(valid, labels, 0)
    logp = log_softmax_channels(logits)
    picked = np.take_along_axis(logp, safe[:, None], axis=1)[:, 0]
    loss = -(picked * valid).sum() / n
    grad = np.exp(logp)
    onehot = np.zeros_like(grad)
    np.put_along_axis(onehot, safe[:, None], 1.0, axis=1)
    grad = (grad - onehot) * valid[:, None] / n
    return loss, grad
