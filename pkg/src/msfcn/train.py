"""Adam, the epoch loop with validation early stopping, and prediction."""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .data import AugmentSpec, DatasetManifest, augment
from .errors import DataError, NumericError, ShapeError
from .metrics import ConfusionMatrix
from .net import MSFCN, save_checkpoint
from .nn import ops
from .nn.autograd import GradTape, no_tape
from .tensor import pad_spatial_zero

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState):
    """One in-place Adam update of ``params`` (a list of arrays)."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state differ in length")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"gradient {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    return params, state


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.state = AdamState(lr, beta1, beta2, eps)

    def step(self):
        adam_step([p.data for p in self.params], [p.grad for p in self.params], self.state)


class EarlyStopping:
    """Stop after ``patience`` epochs without a strict improvement."""

    def __init__(self, patience=10):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = 0
        self.epoch = 0
        self.counter = 0

    def update(self, score) -> bool:
        self.epoch += 1
        if score > self.best:
            self.best, self.best_epoch, self.counter = score, self.epoch, 0
            return True
        self.counter += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.counter >= self.patience

    @property
    def patience_left(self) -> int:
        return self.patience - self.counter


@dataclass
class TrainRunConfig:
    batch_size: int = 16
    max_epochs: int = 100
    patience: int = 10
    lr: float = 1e-4
    seed: int = 0
    checkpoint_dir: str | None = None
    augment: AugmentSpec | None = None
    train_split: str = "train"
    val_split: str = "val"
    eval_batch_size: int = 8

    def __post_init__(self):
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ValueError("batch_size, patience and max_epochs must be >= 1")


@dataclass
class TrainResult:
    log: list
    best_epoch: int
    best_score: float
    epochs_run: int


def format_log_line(epoch, loss, val_oa, best, patience_left):
    return f"epoch={epoch} loss={loss:.6f} val_oa={val_oa:.6f} best={best:.6f} patience_left={patience_left}"


def logits_batches(net, images, batch_size=8):
    net.eval()
    with no_tape():
        for i in range(0, len(images), batch_size):
            yield i, net(images[i:i + batch_size]).data


def predict_labels(logits) -> np.ndarray:
    """Per-pixel argmax over classes; ties go to the lowest class index."""
    return np.argmax(logits, axis=-3).astype(np.uint16)


def evaluate(net, images, labels, batch_size=8) -> ConfusionMatrix:
    cm = ConfusionMatrix(net.cfg.num_classes)
    for i, logits in logits_batches(net, images, batch_size):
        cm.accumulate(predict_labels(logits), labels[i:i + len(logits)])
    return cm


def overall_accuracy(net, images, labels, batch_size=8) -> float:
    cm = evaluate(net, images, labels, batch_size)
    if cm.total == 0:
        raise DataError("no labeled pixels to score")
    return float(np.trace(cm.counts) / cm.total)


def predict(net: MSFCN, image) -> np.ndarray:
    """Label map for one ``(c, t, h, w)`` image.

    Extents that are not multiples of ``2^L`` are zero-padded and the result
    cropped back.
    """
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 4:
        raise ShapeError(f"expected (c, t, h, w) image, got {image.shape}")
    h, w = image.shape[-2:]
    m = 2 ** net.cfg.num_layers
    padded = pad_spatial_zero(image, math.ceil(h / m) * m, math.ceil(w / m) * m)
    _, logits = next(logits_batches(net, padded[None], 1))
    return predict_labels(logits[0])[:h, :w]


def train(net: MSFCN, manifest: DatasetManifest, cfg: TrainRunConfig, score_fn=None,
          on_epoch=None) -> TrainResult:
    """Epoch loop: seeded shuffle, Adam steps, validation OA, early stopping.

    ``score_fn(net, epoch)`` replaces the validation-OA monitor when given.
    The best network is written to ``cfg.checkpoint_dir`` whenever the
    monitored score strictly improves.
    """
    images, labels = manifest.load_split(cfg.train_split)
    val_images, val_labels = manifest.load_split(cfg.val_split)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(net.parameters(), lr=cfg.lr)
    stopper = EarlyStopping(cfg.patience)
    lines = []
    n = len(images)
    for epoch in range(1, cfg.max_epochs + 1):
        net.train()
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x, y = images[idx], labels[idx]
            if cfg.augment is not None:
                pairs = [augment(xi, yi, cfg.augment, rng) for xi, yi in zip(x, y)]
                x = np.stack([p[0] for p in pairs])
                y = np.stack([p[1] for p in pairs])
            net.zero_grad()
            with GradTape() as tape:
                loss = ops.cross_entropy(net(x), y)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss {value} at epoch {epoch}, batch starting {start}")
            tape.backward(loss)
            opt.step()
            losses.append(value)
        if score_fn is not None:
            score = score_fn(net, epoch)
        else:
            score = overall_accuracy(net, val_images, val_labels, cfg.eval_batch_size)
        if stopper.update(score) and cfg.checkpoint_dir:
            save_checkpoint(net, cfg.checkpoint_dir)
        line = format_log_line(epoch, float(np.mean(losses)), score, stopper.best, stopper.patience_left)
        lines.append(line)
        log.info(line)
        if on_epoch is not None:
            on_epoch(epoch, line)
        if stopper.should_stop:
            break
    return TrainResult(lines, stopper.best_epoch, stopper.best, epoch)
