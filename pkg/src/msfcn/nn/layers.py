"""Parameterized layers and the module tree that owns them."""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from . import ops
from .autograd import Var
from .functional import conv_out_shape, transposed_out_shape, triple


class Module:
    """Base class: walks attributes to find parameters, buffers and children.

    Attribute insertion order defines registry order, so names are stable.
    """

    training = True
    _buffers: tuple[str, ...] = ()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Var):
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix=""):
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def parameters(self):
        return [v for _, v in self.named_parameters()]

    def modules(self):
        yield self
        for _, child in self.children():
            yield from child.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def uniform_init(rng, shape, fan_in, dtype=np.float32):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv3d(Module):
    """Weights ``(c_out, c_in, kt, kh, kw)``, bias ``(c_out,)``, stride and padding.

    ``padding=None`` selects "same" padding ``k // 2`` per axis.
    """

    def __init__(self, c_in, c_out, kernel=3, stride=1, padding=None, rng=None, bias=True):
        kernel, stride = triple(kernel), triple(stride)
        padding = tuple(k // 2 for k in kernel) if padding is None else triple(padding)
        if min(kernel) < 1 or min(stride) < 1 or min(padding) < 0:
            raise ShapeError(f"invalid conv geometry kernel={kernel} stride={stride} padding={padding}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride, self.padding = kernel, stride, padding
        fan_in = c_in * int(np.prod(kernel))
        self.weight = Var(uniform_init(rng, (c_out, c_in) + kernel, fan_in), requires_grad=True)
        self.bias = Var(np.zeros(c_out, np.float32), requires_grad=True) if bias else None

    def forward(self, x):
        return ops.conv3d(x, self.weight, self.bias, self.stride, self.padding)

    def out_shape(self, shape):
        return (self.c_out,) + conv_out_shape(shape[1:], self.kernel, self.stride, self.padding)

    def account(self, shape):
        out = self.out_shape(shape)
        return self.c_out * self.c_in * int(np.prod(self.kernel)) * int(np.prod(out[1:])), 0, out


class ConvTranspose3d(Module):
    """Weights ``(c_in, c_out, kt, kh, kw)``; exact adjoint of the strided conv."""

    def __init__(self, c_in, c_out, kernel=(1, 2, 2), stride=(1, 2, 2), padding=0, rng=None):
        kernel, stride, padding = triple(kernel), triple(stride), triple(padding)
        rng = np.random.default_rng(0) if rng is None else rng
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride, self.padding = kernel, stride, padding
        fan_in = c_in * int(np.prod(kernel))
        self.weight = Var(uniform_init(rng, (c_in, c_out) + kernel, fan_in), requires_grad=True)
        self.bias = Var(np.zeros(c_out, np.float32), requires_grad=True)

    def forward(self, x):
        return ops.conv_transpose3d(x, self.weight, self.bias, self.stride, self.padding)

    def out_shape(self, shape):
        return (self.c_out,) + transposed_out_shape(shape[1:], self.kernel, self.stride, self.padding)

    def account(self, shape):
        macs = self.c_out * self.c_in * int(np.prod(self.kernel)) * int(np.prod(shape[1:]))
        return macs, 0, self.out_shape(shape)


class BatchNorm3d(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, c, eps=1e-5, momentum=0.1):
        if eps <= 0 or not 0 < momentum < 1:
            raise ValueError(f"invalid batchnorm eps={eps} momentum={momentum}")
        self.eps, self.momentum = eps, momentum
        self.gamma = Var(np.ones(c, np.float32), requires_grad=True)
        self.beta = Var(np.zeros(c, np.float32), requires_grad=True)
        self.running_mean = np.zeros(c, np.float32)
        self.running_var = np.ones(c, np.float32)

    def forward(self, x):
        return ops.batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                             self.training, self.momentum, self.eps)


class ConvBNAct(Module):
    """conv -> batchnorm -> activation (activation may be None)."""

    def __init__(self, c_in, c_out, kernel=3, padding=None, act="relu", rng=None):
        self.conv = Conv3d(c_in, c_out, kernel, padding=padding, rng=rng)
        self.bn = BatchNorm3d(c_out)
        self.act = act
        # test hook: skip normalization so raw conv responses are visible
        self.bypass_bn = False

    def forward(self, x):
        y = self.conv(x)
        if not self.bypass_bn:
            y = self.bn(y)
        return ops.activation(y, self.act) if self.act else y

    def account(self, shape):
        macs, _, out = self.conv.account(shape)
        steps = (0 if self.bypass_bn else 1) + (1 if self.act else 0)
        return macs, steps * int(np.prod(out)), out
