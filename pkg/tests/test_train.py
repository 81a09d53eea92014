import math
import os

import numpy as np
import pytest

from msfcn.data import AugmentSpec, synth_shapes
from msfcn.errors import NumericError
from msfcn.net import NetworkConfig, build_msfcn, load_checkpoint, read_manifest
from msfcn.nn import ops
from msfcn.nn.autograd import GradTape
from msfcn.train import (Adam, AdamState, EarlyStopping, TrainRunConfig, adam_step, predict,
                         predict_labels, train)

SMALL = dict(in_channels=3, time_steps=1, num_classes=3, encoder_channels=(4, 8))


class TestAdam:
    def test_zero_gradient_is_identity(self, rng):
        p = rng.standard_normal((3, 4)).astype(np.float32)
        before = p.copy()
        state = AdamState(lr=0.1)
        for _ in range(5):
            adam_step([p], [np.zeros_like(p)], state)
        np.testing.assert_array_equal(p, before)

    def test_first_step_is_lr_times_sign(self, rng):
        p = np.zeros(6)
        g = rng.standard_normal(6) * 10
        adam_step([p], [g], AdamState(lr=0.01))
        np.testing.assert_allclose(p, -0.01 * np.sign(g), rtol=1e-6)

    def test_constant_gradient_steps_are_lr(self):
        p = np.zeros(2)
        state = AdamState(lr=0.5)
        for _ in range(10):
            adam_step([p], [np.array([2.0, -3.0])], state)
        np.testing.assert_allclose(p, [-5.0, 5.0], rtol=1e-6)

    def test_momentum_decays_after_gradient_stops(self):
        p = np.zeros(1)
        state = AdamState(lr=1.0)
        adam_step([p], [np.ones(1)], state)
        steps, prev = [], p.copy()
        for _ in range(4):
            adam_step([p], [np.zeros(1)], state)
            steps.append(float(prev[0] - p[0]))
            prev = p.copy()
        assert all(s > 0 for s in steps)
        assert all(b < a for a, b in zip(steps, steps[1:]))

    def test_shape_mismatch(self):
        from msfcn.errors import ShapeError

        with pytest.raises(ShapeError):
            adam_step([np.zeros(2)], [np.zeros(3)], AdamState())


class TestEarlyStopping:
    def test_patience(self):
        stop = EarlyStopping(patience=3)
        flags = [stop.update(s) for s in (0.5, 0.6, 0.6, 0.55, 0.59)]
        assert flags == [True, True, False, False, False]
        assert stop.should_stop and stop.best_epoch == 2 and stop.best == 0.6

    def test_improvement_resets(self):
        stop = EarlyStopping(patience=2)
        for s in (0.1, 0.1, 0.2):
            stop.update(s)
        assert stop.patience_left == 2 and not stop.should_stop


@pytest.fixture(scope="module")
def shapes(tmp_path_factory):
    return synth_shapes(tmp_path_factory.mktemp("shapes"), num_images=6, size=16, num_classes=3, seed=1)


def test_halts_at_epoch_twelve(shapes):
    scores = [0.1, 0.5] + [0.4] * 20
    net = build_msfcn(NetworkConfig(**SMALL))
    result = train(net, shapes, TrainRunConfig(batch_size=4, max_epochs=30, patience=10, lr=1e-3),
                   score_fn=lambda _net, epoch: scores[epoch - 1])
    assert result.epochs_run == 12 and result.best_epoch == 2
    assert len(result.log) == 12
    assert result.log[-1].endswith("patience_left=0")


def test_single_epoch(shapes):
    result = train(build_msfcn(NetworkConfig(**SMALL)), shapes, TrainRunConfig(batch_size=4, max_epochs=1))
    assert result.epochs_run == 1 and len(result.log) == 1
    assert result.log[0].startswith("epoch=1 loss=")


def test_same_seed_same_run(shapes, tmp_path):
    runs = []
    for name in ("a", "b"):
        cfg = TrainRunConfig(batch_size=2, max_epochs=3, lr=1e-3, seed=4, checkpoint_dir=str(tmp_path / name),
                             augment=AugmentSpec(seed=4))
        runs.append(train(build_msfcn(NetworkConfig(**SMALL)), shapes, cfg).log)
    assert runs[0] == runs[1]
    files = sorted(os.listdir(tmp_path / "a"))
    assert files == sorted(os.listdir(tmp_path / "b"))
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_checkpoint_holds_best(shapes, tmp_path):
    scores = [0.2, 0.9, 0.3]
    snapshots = {}

    def score(net, epoch):
        snapshots[epoch] = net.classifier.weight.data.copy()
        return scores[epoch - 1]

    train(build_msfcn(NetworkConfig(**SMALL)), shapes,
          TrainRunConfig(batch_size=4, max_epochs=3, lr=1e-2, checkpoint_dir=str(tmp_path)), score_fn=score)
    loaded = load_checkpoint(tmp_path)
    np.testing.assert_array_equal(loaded.classifier.weight.data, snapshots[2])


def test_non_finite_loss(shapes):
    net = build_msfcn(NetworkConfig(**SMALL))
    net.classifier.bias.data[:] = np.nan
    with pytest.raises(NumericError):
        train(net, shapes, TrainRunConfig(batch_size=4, max_epochs=1))


def test_loss_mostly_decreases_on_one_batch(rng):
    net = build_msfcn(NetworkConfig(in_channels=3, time_steps=1, num_classes=4, encoder_channels=(8, 16)))
    x = rng.standard_normal((4, 3, 1, 32, 32)).astype(np.float32)
    y = rng.integers(0, 4, (4, 32, 32)).astype(np.uint16)
    opt = Adam(net.parameters(), lr=1e-3)
    net.train()
    losses = []
    for _ in range(51):
        net.zero_grad()
        with GradTape() as tape:
            loss = ops.cross_entropy(net(x), y)
        tape.backward(loss)
        opt.step()
        losses.append(float(loss.data))
    assert int((np.diff(losses) <= 0).sum()) >= 45


def test_predict_tie_goes_to_first_class():
    logits = np.zeros((1, 3, 2, 2))
    logits[0, 2, 0, 0] = 1.0
    np.testing.assert_array_equal(predict_labels(logits)[0], [[2, 0], [0, 0]])


def test_predict_pads_and_crops(rng):
    net = build_msfcn(NetworkConfig(**SMALL))
    out = predict(net, rng.standard_normal((3, 1, 13, 10)))
    assert out.shape == (13, 10) and out.dtype == np.uint16 and out.max() < 3
