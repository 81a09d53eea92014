"""Differentiable ops on :class:`Var` values.

Each op computes its forward result with the numpy kernels and, when a tape
is active, records a closure that maps the output gradient to input
gradients.
"""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from ..tensor import IGNORE_INDEX
from . import functional as F
from .autograd import Var, record

# when a list, relu masks and max-pool argmaxes are appended (kink detection)
_decisions = None


class log_decisions:
    """Collect piecewise-linear branch decisions made while active."""

    def __enter__(self):
        global _decisions
        self._saved, _decisions = _decisions, []
        return _decisions

    def __exit__(self, *exc):
        global _decisions
        _decisions = self._saved
        return False


def conv3d(x: Var, weight: Var, bias: Var | None, stride=1, padding=0) -> Var:
    out = Var(F.conv3d_forward(x.data, weight.data, None if bias is None else bias.data, stride, padding))

    def backward(gy):
        gx, gw, gb = F.conv3d_backward(x.data, weight.data, gy, stride, padding, need_x=x.requires_grad)
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record("conv3d", inputs, out, backward)


def conv_transpose3d(x: Var, weight: Var, bias: Var | None, stride=1, padding=0) -> Var:
    out = Var(F.conv_transpose3d_forward(x.data, weight.data, None if bias is None else bias.data, stride, padding))

    def backward(gy):
        return F.conv_transpose3d_backward(x.data, weight.data, gy, stride, padding)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record("transposed_conv3d", inputs, out, backward)


def batchnorm(x: Var, gamma: Var, beta: Var, running_mean, running_var,
              training: bool, momentum=0.1, eps=1e-5) -> Var:
    """Per-channel normalization, then scale and shift.

    In training mode the batch statistics (population variance) are used and
    ``running_mean``/``running_var`` are updated in place.
    """
    if training:
        y, mean, var, xhat, inv_std = F.batchnorm_train(x.data, gamma.data, beta.data, eps)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
        out = Var(y.astype(x.data.dtype, copy=False))

        def backward(gy):
            return F.batchnorm_train_backward(gy, xhat, inv_std, gamma.data)
    else:
        if x.data.shape[1] != gamma.data.shape[0]:
            raise ShapeError(f"input has {x.data.shape[1]} channels, batchnorm has {gamma.data.shape[0]}")
        inv_std = (1.0 / np.sqrt(running_var + eps)).astype(x.data.dtype)
        bshape = (1, -1, 1, 1, 1)
        xhat = (x.data - running_mean.astype(x.data.dtype).reshape(bshape)) * inv_std.reshape(bshape)
        out = Var(xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape))

        def backward(gy):
            axes = (0, 2, 3, 4)
            gx = gy * (gamma.data * inv_std).reshape(bshape)
            return gx, (gy * xhat).sum(axis=axes), gy.sum(axis=axes)

    return record("batchnorm", (x, gamma, beta), out, backward)


def relu(x: Var) -> Var:
    mask = x.data > 0
    if _decisions is not None:
        _decisions.append(mask)
    out = Var(np.where(mask, x.data, 0).astype(x.data.dtype, copy=False))
    return record("relu", (x,), out, lambda gy: (gy * mask,))


def sigmoid(x: Var) -> Var:
    s = F.sigmoid(x.data)
    out = Var(s)
    return record("sigmoid", (x,), out, lambda gy: (gy * s * (1 - s),))


def activation(x: Var, kind: str) -> Var:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def maxpool3d(x: Var, kernel=(1, 2, 2)) -> Var:
    y, idx = F.maxpool3d_forward(x.data, kernel)
    if _decisions is not None:
        _decisions.append(idx)
    shape = x.data.shape
    return record("maxpool3d", (x,), Var(y), lambda gy: (F.maxpool3d_backward(gy, idx, shape, kernel),))


def global_avg_pool3d(x: Var) -> Var:
    """Per-channel mean over (t, h, w); output keeps singleton axes."""
    n = np.prod(x.data.shape[2:])
    out = Var(x.data.mean(axis=(2, 3, 4), keepdims=True))
    shape = x.data.shape
    return record("global_avg_pool3d", (x,), out, lambda gy: (np.broadcast_to(gy / n, shape).copy(),))


def add(a: Var, b: Var) -> Var:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"cannot add {a.data.shape} and {b.data.shape}")
    return record("add", (a, b), Var(a.data + b.data), lambda gy: (gy, gy))


def scale_channels_residual(x: Var, alpha: Var) -> Var:
    """``x * alpha + x`` with ``alpha`` broadcast over (t, h, w)."""
    if alpha.data.shape != x.data.shape[:2] + (1, 1, 1):
        raise ShapeError(f"gate {alpha.data.shape} does not match features {x.data.shape}")
    out = Var(x.data * alpha.data + x.data)

    def backward(gy):
        return gy * (alpha.data + 1), (gy * x.data).sum(axis=(2, 3, 4), keepdims=True)

    return record("channel_gate", (x, alpha), out, backward)


def concat_channels(a: Var, b: Var) -> Var:
    if a.data.shape[:1] + a.data.shape[2:] != b.data.shape[:1] + b.data.shape[2:]:
        raise ShapeError(f"cannot concatenate {a.data.shape} and {b.data.shape}")
    ca = a.data.shape[1]
    out = Var(np.concatenate([a.data, b.data], axis=1))
    return record("concat", (a, b), out, lambda gy: (gy[:, :ca], gy[:, ca:]))


def squeeze_time(x: Var) -> Var:
    """(b, c, 1, h, w) -> (b, c, h, w)."""
    if x.data.shape[2] != 1:
        raise ShapeError(f"temporal extent {x.data.shape[2]} was not collapsed")
    shape = x.data.shape
    return record("squeeze_time", (x,), Var(x.data[:, :, 0]), lambda gy: (gy.reshape(shape),))


def softmax_channels(logits: np.ndarray) -> np.ndarray:
    return F.softmax_channels(logits, axis=1 if logits.ndim == 4 else 0)


def cross_entropy(logits: Var, labels: np.ndarray, ignore_index=IGNORE_INDEX) -> Var:
    loss, grad = F.cross_entropy(logits.data, labels, ignore_index)
    out = Var(np.asarray(loss, dtype=logits.data.dtype))
    return record("cross_entropy", (logits,), out, lambda gy: (grad * gy,))


def weighted_sum(x: Var, weights: np.ndarray) -> Var:
    """Scalar ``sum(x * weights)``; a fixed random projection for gradient checks."""
    out = Var(np.asarray((x.data * weights).sum(), dtype=x.data.dtype))
    return record("weighted_sum", (x,), out, lambda gy: (gy * weights,))
