"""Named gradient checks over every differentiable op, block and a tiny MSFCN."""
from __future__ import annotations

import numpy as np

from .blocks import CAB, GPM, MSCB
from .nn import ops
from .nn.gradcheck import grad_check
from .nn.layers import BatchNorm3d, Conv3d, ConvTranspose3d
from .net import NetworkConfig, build_msfcn

TOLERANCE = 1e-3


def _normal(rng, shape):
    return rng.standard_normal(shape)


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * (margin + np.abs(x)), x)


def _distinct(rng, shape):
    # well-separated values so no pooling window has a near tie
    x = rng.permutation(np.prod(shape)).reshape(shape).astype(np.float64)
    return x / x.size + 0.01 * rng.standard_normal(shape) / x.size


def check_conv3d(seed):
    rng = np.random.default_rng(seed)
    conv = Conv3d(2, 3, 3, rng=rng)
    conv.bias.data = rng.standard_normal(3).astype(np.float32)
    return grad_check(conv, [_normal(rng, (1, 2, 2, 4, 4))], module=conv, seed=seed)


def check_conv3d_strided(seed):
    rng = np.random.default_rng(seed)
    conv = Conv3d(2, 2, (1, 2, 2), stride=(1, 2, 2), padding=0, rng=rng)
    return grad_check(conv, [_normal(rng, (2, 2, 2, 4, 4))], module=conv, seed=seed)


def check_transposed_conv3d(seed):
    rng = np.random.default_rng(seed)
    up = ConvTranspose3d(3, 2, (1, 2, 2), (1, 2, 2), rng=rng)
    return grad_check(up, [_normal(rng, (2, 3, 2, 3, 3))], module=up, seed=seed)


def check_transposed_conv3d_overlap(seed):
    rng = np.random.default_rng(seed)
    up = ConvTranspose3d(2, 2, (3, 3, 3), (1, 2, 2), padding=1, rng=rng)
    return grad_check(up, [_normal(rng, (1, 2, 2, 3, 3))], module=up, seed=seed)


def check_batchnorm(seed):
    rng = np.random.default_rng(seed)
    bn = BatchNorm3d(3)
    bn.gamma.data = rng.uniform(0.5, 1.5, 3).astype(np.float32)
    bn.beta.data = rng.standard_normal(3).astype(np.float32)
    return grad_check(bn, [_normal(rng, (4, 3, 2, 3, 3))], module=bn, seed=seed)


def check_batchnorm_eval(seed):
    rng = np.random.default_rng(seed)
    bn = BatchNorm3d(3).eval()
    bn.running_mean[:] = rng.standard_normal(3)
    bn.running_var[:] = rng.uniform(0.5, 2.0, 3)
    return grad_check(bn, [_normal(rng, (2, 3, 1, 3, 3))], module=bn, seed=seed)


def check_relu(seed):
    rng = np.random.default_rng(seed)
    return grad_check(ops.relu, [_away_from_zero(rng, (2, 3, 2, 3, 3))], seed=seed)


def check_sigmoid(seed):
    rng = np.random.default_rng(seed)
    return grad_check(ops.sigmoid, [_normal(rng, (2, 3, 2, 3, 3))], seed=seed)


def check_maxpool3d(seed):
    rng = np.random.default_rng(seed)
    return grad_check(ops.maxpool3d, [_distinct(rng, (2, 2, 2, 4, 4))], seed=seed)


def check_global_avg_pool3d(seed):
    rng = np.random.default_rng(seed)
    return grad_check(ops.global_avg_pool3d, [_normal(rng, (2, 3, 2, 3, 3))], seed=seed)


def check_softmax_cross_entropy(seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 4, size=(2, 5, 5)).astype(np.uint16)
    labels[0, 0, :3] = 65535
    return grad_check(lambda z: ops.cross_entropy(z, labels), [_normal(rng, (2, 4, 5, 5))], seed=seed)


def check_mscb(seed):
    rng = np.random.default_rng(seed)
    block = MSCB(2, 3, rng=rng)
    return grad_check(block, [_normal(rng, (2, 2, 2, 4, 4))], module=block, seed=seed)


def check_cab(seed):
    rng = np.random.default_rng(seed)
    block = CAB(3, 3, 3, reduction=2, rng=rng)
    enc, dec = _normal(rng, (2, 3, 2, 3, 3)), _normal(rng, (2, 3, 2, 3, 3))
    return grad_check(block, [enc, dec], module=block, seed=seed)


def check_gpm(seed):
    rng = np.random.default_rng(seed)
    block = GPM(4, rng=rng)
    return grad_check(block, [_normal(rng, (2, 4, 2, 3, 3))], module=block, seed=seed)


# the (2,3,3) head still collapses time; 3x3x3 bodies are covered by check_mscb
TINY_NET = dict(in_channels=1, time_steps=2, num_classes=3, encoder_channels=(4, 8),
                cab_reduction=4, temporal_kernel=1)


def check_msfcn_tiny(seed):
    """End-to-end: L=2, channels [4, 8], 16x16 input, cross-entropy loss."""
    rng = np.random.default_rng(seed)
    net = build_msfcn(NetworkConfig(**TINY_NET, seed=seed))
    labels = rng.integers(0, 3, size=(2, 16, 16)).astype(np.uint16)
    x = _normal(rng, (2, 1, 2, 16, 16))
    return grad_check(lambda v: ops.cross_entropy(net(v), labels), [x], module=net, seed=seed)


CHECKS = {
    "conv3d": check_conv3d,
    "conv3d_strided": check_conv3d_strided,
    "transposed_conv3d": check_transposed_conv3d,
    "transposed_conv3d_overlap": check_transposed_conv3d_overlap,
    "batchnorm_train": check_batchnorm,
    "batchnorm_eval": check_batchnorm_eval,
    "relu": check_relu,
    "sigmoid": check_sigmoid,
    "maxpool3d": check_maxpool3d,
    "global_avg_pool3d": check_global_avg_pool3d,
    "softmax_cross_entropy": check_softmax_cross_entropy,
    "mscb": check_mscb,
    "cab": check_cab,
    "gpm": check_gpm,
    "msfcn_tiny": check_msfcn_tiny,
}


def run_suite(seeds=(1, 2, 3), names=None):
    """Return ``{name: max error over seeds}``."""
    results = {}
    for name in names or CHECKS:
        results[name] = max(CHECKS[name](s) for s in seeds)
    return results


def format_table(results, tol=TOLERANCE) -> str:
    width = max(len(n) for n in results)
    lines = [f"{'op':<{width}}  {'max_rel_err':>12}  status"]
    for name, err in results.items():
        lines.append(f"{name:<{width}}  {err:12.3e}  {'PASS' if err <= tol else 'FAIL'}")
    return "\n".join(lines)
