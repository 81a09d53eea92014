"""MSFCN assembly, parameter/complexity accounting and checkpoints."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

import numpy as np

from . import config as cfgio
from .blocks import CAB, GPM, MSCB
from .errors import CheckpointError, ConfigError, ShapeError
from .nn import ops
from .nn.autograd import Var
from .nn.layers import Conv3d, ConvBNAct, ConvTranspose3d, Module
from .tensor import load_tensor, save_tensor

MAC_CONVENTION = "1 MAC = one multiply-accumulate; conv terms are MACs, BN/activation/pool/gating count one op per element"


@dataclass
class NetworkConfig:
    in_channels: int = 3
    time_steps: int = 1
    num_classes: int = 6
    encoder_channels: tuple = (32, 64, 128, 256)
    # decoder stage widths, deepest-last like encoder_channels; None mirrors the encoder
    decoder_channels: tuple | None = None
    mscb_width_ratio: float = 1.0
    cab_reduction: int = 16
    # None: 3 when time_steps > 1, else 1 (a genuinely 2D network)
    temporal_kernel: int | None = None
    # average the input over time and run a t = 1 network (2D baseline)
    temporal_mean: bool = False
    seed: int = 0

    def __post_init__(self):
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        if self.decoder_channels is not None:
            self.decoder_channels = tuple(int(c) for c in self.decoder_channels)
        self.validate()

    @property
    def num_layers(self) -> int:
        return len(self.encoder_channels)

    @property
    def decoder_widths(self) -> tuple:
        return self.encoder_channels if self.decoder_channels is None else self.decoder_channels

    @property
    def net_time_steps(self) -> int:
        """Temporal extent seen by the convolutions."""
        return 1 if self.temporal_mean else self.time_steps

    @property
    def kernel_t(self) -> int:
        if self.temporal_kernel is not None:
            return self.temporal_kernel
        return 3 if self.net_time_steps > 1 else 1

    def validate(self):
        if self.in_channels < 1 or self.time_steps < 1:
            raise ConfigError("in_channels and time_steps must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.num_layers < 1 or min(self.encoder_channels) < 1:
            raise ConfigError(f"bad encoder_channels {self.encoder_channels}")
        if len(self.decoder_widths) != self.num_layers or min(self.decoder_widths) < 1:
            raise ConfigError("decoder_channels must have one positive width per encoder stage")
        if self.mscb_width_ratio <= 0 or self.cab_reduction < 1:
            raise ConfigError("mscb_width_ratio must be > 0 and cab_reduction >= 1")
        if self.temporal_kernel is not None and self.temporal_kernel < 1:
            raise ConfigError("temporal_kernel must be >= 1")

    def check_input(self, h, w):
        m = 2 ** self.num_layers
        if h % m or w % m:
            raise ConfigError(f"input {h}x{w} not divisible by 2^{self.num_layers} = {m}")

    def to_dict(self) -> dict:
        return {f"net.{f.name}": getattr(self, f.name) for f in dataclasses.fields(self)}

    @classmethod
    def from_dict(cls, values: dict) -> "NetworkConfig":
        kwargs = {}
        for key, raw in values.items():
            name = key[4:] if key.startswith("net.") else key
            name = "encoder_channels" if name == "channels" else name
            if name in kwargs:
                raise ConfigError(f"{key!r} repeats a network setting")
            if name in ("encoder_channels", "decoder_channels"):
                kwargs[name] = None if raw.lower() == "none" else cfgio.to_int_list(key, raw)
            elif name == "temporal_kernel":
                kwargs[name] = None if raw.lower() == "none" else cfgio.to_int(key, raw)
            elif name == "mscb_width_ratio":
                kwargs[name] = cfgio.to_float(key, raw)
            elif name == "temporal_mean":
                kwargs[name] = cfgio.to_bool(key, raw)
            elif name in ("in_channels", "time_steps", "num_classes", "cab_reduction", "seed"):
                kwargs[name] = cfgio.to_int(key, raw)
            else:
                raise ConfigError(f"unknown network key {key!r}")
        return cls(**kwargs)


PRESETS = {
    "2d_default": dict(in_channels=3, time_steps=1, num_classes=6),
    "3d_default": dict(in_channels=4, time_steps=4, num_classes=5),
}

# parameter counts (millions) and complexity reported for the reference models
REFERENCE = {
    "2d_default": {"params_m": 2.67, "complexity_g": 9.66, "input": (3, 1, 256, 256)},
    "3d_default": {"params_m": 6.58, "complexity_g": None, "input": (4, 4, 256, 256)},
}


class DecoderStage(Module):
    """Transposed conv (x2 in h, w), smoothing conv, then CAB fusion with the skip."""

    def __init__(self, c_prev, c_skip, c_out, kernel, reduction, rng):
        self.up = ConvTranspose3d(c_prev, c_out, (1, 2, 2), (1, 2, 2), rng=rng)
        self.smooth = ConvBNAct(c_out, c_out, kernel, rng=rng)
        self.cab = CAB(c_skip, c_out, c_out, reduction, rng=rng)

    def forward(self, x, skip):
        return self.cab(skip, self.smooth(self.up(x)))

    def account(self, shape, skip_shape):
        u = self.up.account(shape)
        s = self.smooth.account(u[2])
        c = self.cab.account(skip_shape, s[2])
        return u[0] + s[0] + c[0], u[1] + s[1] + c[1], c[2]


class MSFCN(Module):
    """Encoder of MSCB + (1,2,2) max-pool stages, GPM bridge, decoder of
    transposed-conv stages with CAB skip fusion, and a (t,3,3) head that
    collapses time before the pointwise classifier."""

    def __init__(self, cfg: NetworkConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        kernel = (cfg.kernel_t, 3, 3)
        enc = cfg.encoder_channels
        dec = cfg.decoder_widths
        self.encoder = []
        c_prev = cfg.in_channels
        for c in enc:
            width = max(1, int(round(c * cfg.mscb_width_ratio)))
            self.encoder.append(MSCB(c_prev, c, width, kernel, rng=rng))
            c_prev = c
        self.gpm = GPM(c_prev, rng=rng)
        self.decoder = []
        for i in reversed(range(cfg.num_layers)):
            self.decoder.append(DecoderStage(c_prev, enc[i], dec[i], kernel, cfg.cab_reduction, rng))
            c_prev = dec[i]
        t = cfg.net_time_steps
        self.head = ConvBNAct(c_prev, c_prev, (t, 3, 3), padding=(0, 1, 1), rng=rng)
        self.classifier = Conv3d(c_prev, cfg.num_classes, 1, rng=rng)

    def check_input(self, shape):
        cfg = self.cfg
        if len(shape) != 5:
            raise ShapeError(f"expected (b, c, t, h, w) batch, got {shape}")
        if shape[1] != cfg.in_channels or shape[2] != cfg.time_steps:
            raise ShapeError(
                f"input (c={shape[1]}, t={shape[2]}) does not match config "
                f"(c={cfg.in_channels}, t={cfg.time_steps})")
        m = 2 ** cfg.num_layers
        if shape[3] % m or shape[4] % m:
            raise ShapeError(f"h, w = {shape[3]}, {shape[4]} not divisible by 2^{cfg.num_layers}")

    def forward(self, x) -> Var:
        """Logits ``(b, K, h, w)`` for a ``(b, c, t, h, w)`` batch."""
        if not isinstance(x, Var):
            x = Var(np.asarray(x))
        self.check_input(x.data.shape)
        if self.cfg.temporal_mean:
            x = Var(x.data.mean(axis=2, keepdims=True))
        skips = []
        for block in self.encoder:
            x = block(x)
            skips.append(x)
            x = ops.maxpool3d(x, (1, 2, 2))
        x = self.gpm(x)
        for stage, skip in zip(self.decoder, reversed(skips)):
            x = stage(x, skip)
        x = self.classifier(self.head(x))
        return ops.squeeze_time(x)

    def account(self, shape):
        shape = tuple(shape)
        if self.cfg.temporal_mean:
            shape = (shape[0], 1) + shape[2:]
        macs = elems = 0
        skips = []
        for block in self.encoder:
            m, e, shape = block.account(shape)
            skips.append(shape)
            shape = (shape[0], shape[1], shape[2] // 2, shape[3] // 2)
            macs, elems = macs + m, elems + e + int(np.prod(shape))
        m, e, shape = self.gpm.account(shape)
        macs, elems = macs + m, elems + e
        for stage, skip in zip(self.decoder, reversed(skips)):
            m, e, shape = stage.account(shape, skip)
            macs, elems = macs + m, elems + e
        for layer in (self.head, self.classifier):
            m, e, shape = layer.account(shape)
            macs, elems = macs + m, elems + e
        return macs, elems, shape


Network = MSFCN


def build_msfcn(cfg: NetworkConfig) -> MSFCN:
    return MSFCN(cfg)


def forward(net: MSFCN, batch, mode="eval") -> Var:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    net.train(mode == "train")
    return net(batch)


def count_params(net: Module) -> int:
    return sum(int(p.data.size) for p in net.parameters())


def count_flops(net: Module, input_shape) -> dict:
    """Multiply-accumulate and element-op counts for one ``(c, t, h, w)`` input."""
    if hasattr(net, "cfg"):
        c, t, h, w = input_shape
        if c != net.cfg.in_channels or t != net.cfg.time_steps:
            raise ShapeError(f"input {tuple(input_shape)} does not match config")
        net.cfg.check_input(h, w)
    macs, elems, _ = net.account(tuple(input_shape))
    return {
        "conv_macs": macs,
        "elementwise_ops": elems,
        "total": macs + elems,
        "total_g": (macs + elems) / 1e9,
        "conv_macs_g": macs / 1e9,
        "convention": MAC_CONVENTION,
    }


def state_dict(net: Module) -> dict[str, np.ndarray]:
    state = {name: p.data for name, p in net.named_parameters()}
    for name, buf in net.named_buffers():
        if name in state:
            raise CheckpointError(f"registry name {name!r} used twice")
        state[name] = buf
    return state


def _shape_str(shape):
    return "x".join(str(n) for n in shape)


def save_checkpoint(net: MSFCN, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    lines = []
    for name, arr in state_dict(net).items():
        fname = f"{name}.tns"
        save_tensor(np.asarray(arr, dtype=np.float32), os.path.join(directory, fname))
        lines.append(f"{name}\t{fname}\t{_shape_str(arr.shape)}\n")
    with open(os.path.join(directory, "manifest.txt"), "w") as fh:
        fh.writelines(lines)
    cfgio.write_config(net.cfg.to_dict(), os.path.join(directory, "config.txt"))


def read_manifest(directory) -> dict[str, tuple[str, str]]:
    path = os.path.join(directory, "manifest.txt")
    if not os.path.exists(path):
        raise CheckpointError(f"no manifest.txt in {directory}")
    entries = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise CheckpointError(f"manifest.txt:{lineno}: expected 3 tab-separated fields")
            entries[parts[0]] = (parts[1], parts[2])
    return entries


def load_checkpoint(directory, cfg: NetworkConfig | None = None) -> MSFCN:
    """Rebuild a network from ``directory``; ``cfg`` overrides the echoed config."""
    if cfg is None:
        cfg_path = os.path.join(directory, "config.txt")
        if not os.path.exists(cfg_path):
            raise CheckpointError(f"no config.txt in {directory}")
        cfg = NetworkConfig.from_dict(cfgio.read_config(cfg_path))
    net = build_msfcn(cfg)
    entries = read_manifest(directory)
    params = dict(net.named_parameters())
    buffers = dict(net.named_buffers())
    for name in list(params) + list(buffers):
        if name not in entries:
            raise CheckpointError(f"checkpoint is missing parameter {name!r}")
    extra = sorted(set(entries) - set(params) - set(buffers))
    if extra:
        raise CheckpointError(f"checkpoint has unexpected entries, e.g. {extra[0]!r}")
    for name, (fname, _) in entries.items():
        path = os.path.join(directory, fname)
        if not os.path.exists(path):
            raise CheckpointError(f"missing file {fname} for parameter {name!r}")
        arr = load_tensor(path)
        target = params[name].data if name in params else buffers[name]
        if arr.shape != target.shape:
            raise CheckpointError(f"{name}: checkpoint shape {arr.shape} != model shape {target.shape}")
        target[...] = arr
    return net
