"""Composite blocks: multi-scale convolution, channel attention, global pooling."""
from __future__ import annotations

import numpy as np

from .nn import ops
from .nn.layers import Conv3d, ConvBNAct, Module


def _sum_accounts(parts):
    macs = sum(p[0] for p in parts)
    elems = sum(p[1] for p in parts)
    return macs, elems


class MSCB(Module):
    """Two-branch block: stacked 3x3x3 convs (5x5x5 receptive field) plus a
    single 3x3x3 conv, summed and fused by a pointwise conv.

    Every conv is followed by batchnorm and ReLU. ``width`` is the branch
    channel count and defaults to ``c_out``.
    """

    def __init__(self, c_in, c_out, width=None, kernel=(3, 3, 3), rng=None):
        width = c_out if width is None else width
        self.width = width
        self.top_a = ConvBNAct(c_in, width, kernel, rng=rng)
        self.top_b = ConvBNAct(width, width, kernel, rng=rng)
        self.bottom = ConvBNAct(c_in, width, kernel, rng=rng)
        self.fuse = ConvBNAct(width, c_out, 1, rng=rng)

    def forward(self, x):
        top = self.top_b(self.top_a(x))
        bottom = self.bottom(x)
        return self.fuse(ops.add(top, bottom))

    def account(self, shape):
        a = self.top_a.account(shape)
        b = self.top_b.account(a[2])
        c = self.bottom.account(shape)
        d = self.fuse.account(c[2])
        macs, elems = _sum_accounts([a, b, c, d])
        return macs, elems + int(np.prod(c[2])), d[2]


class CAB(Module):
    """Channel attention over concatenated encoder and decoder features.

    A global average pool feeds a pointwise squeeze (ReLU) and excite
    (sigmoid) pair; the resulting per-channel gate reweights the
    concatenation residually (``x * alpha + x``) before a pointwise
    projection to ``c_out`` channels.
    """

    def __init__(self, c_enc, c_dec, c_out, reduction=4, rng=None):
        c = c_enc + c_dec
        hidden = max(1, c // reduction)
        self.squeeze = Conv3d(c, hidden, 1, rng=rng)
        self.excite = Conv3d(hidden, c, 1, rng=rng)
        self.out_conv = Conv3d(c, c_out, 1, rng=rng)
        self.last_alpha = None

    def forward(self, enc, dec):
        x = ops.concat_channels(enc, dec)
        g = ops.global_avg_pool3d(x)
        alpha = ops.sigmoid(self.excite(ops.relu(self.squeeze(g))))
        self.last_alpha = alpha.data
        return self.out_conv(ops.scale_channels_residual(x, alpha))

    def account(self, enc_shape, dec_shape):
        shape = (enc_shape[0] + dec_shape[0],) + tuple(enc_shape[1:])
        vec = (shape[0], 1, 1, 1)
        s = self.squeeze.account(vec)
        e = self.excite.account(s[2])
        o = self.out_conv.account(shape)
        n = int(np.prod(shape))
        # pool + gate multiply-add over the full map, activations on the vector
        elems = n + 2 * n + int(np.prod(s[2])) + int(np.prod(e[2]))
        return s[0] + e[0] + o[0], elems, o[2]


class GPM(Module):
    """Global pooling module: pointwise conv, pooled sigmoid gate, residual
    reweighting and a final pointwise conv. Channel count is preserved."""

    def __init__(self, c, rng=None):
        self.in_conv = Conv3d(c, c, 1, rng=rng)
        self.gate_conv = Conv3d(c, c, 1, rng=rng)
        self.out_conv = Conv3d(c, c, 1, rng=rng)
        self.last_alpha = None

    def forward(self, x):
        y = self.in_conv(x)
        alpha = ops.sigmoid(self.gate_conv(ops.global_avg_pool3d(y)))
        self.last_alpha = alpha.data
        return self.out_conv(ops.scale_channels_residual(y, alpha))

    def account(self, shape):
        i = self.in_conv.account(shape)
        g = self.gate_conv.account((shape[0], 1, 1, 1))
        o = self.out_conv.account(i[2])
        n = int(np.prod(i[2]))
        return i[0] + g[0] + o[0], 3 * n + shape[0], o[2]
