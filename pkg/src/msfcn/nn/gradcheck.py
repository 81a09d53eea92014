"""Central-difference gradient checking at float64."""
from __future__ import annotations

import contextlib
import logging

import numpy as np

from . import ops
from .autograd import GradTape, Var, no_tape

log = logging.getLogger(__name__)


@contextlib.contextmanager
def _float64(params, module):
    saved = [p.data for p in params]
    buffers = [b.copy() for _, b in module.named_buffers()] if module is not None else []
    for p in params:
        p.data = p.data.astype(np.float64)
    try:
        yield
    finally:
        for p, d in zip(params, saved):
            p.data = d
            p.grad = None
        if module is not None:
            for (_, b), old in zip(module.named_buffers(), buffers):
                b[...] = old


def grad_check(fn, inputs, module=None, params=(), seed=0, h=1e-4) -> float:
    """Max relative error between tape gradients and central differences.

    ``fn`` maps input :class:`Var` values to an output Var; the scalar under
    test is ``sum(output * R)`` for a fixed random ``R`` drawn from ``seed``.
    Every element of every input and every parameter (those of ``module``
    plus ``params``) is perturbed. The error per element is
    ``|a - n| / max(1, |n|)``.

    ReLU masks and max-pool argmaxes are compared against the unperturbed
    run: if one side of the difference crosses a kink the one-sided
    difference from the other side is used, and if both sides cross the
    element is skipped.
    """
    params = list(params) + (module.parameters() if module is not None else [])
    rng = np.random.default_rng(seed)
    xs = [Var(np.asarray(x, dtype=np.float64), requires_grad=True) for x in inputs]
    with _float64(params, module):
        with no_tape():
            shape = np.shape(fn(*xs).data)
        weights = rng.standard_normal(shape)

        def objective():
            with no_tape(), ops.log_decisions() as decisions:
                value = float((fn(*xs).data * weights).sum())
            return value, decisions

        def same(a, b):
            return all(np.array_equal(u, v) for u, v in zip(a, b))

        center, base = objective()
        skipped = 0

        for p in params:
            p.grad = None
        with GradTape() as tape:
            out = fn(*xs)
            loss = Var(np.asarray((out.data * weights).sum()))
            tape.record("projection", (out,), loss, lambda g: (g * weights,))
        tape.backward(loss)

        worst = 0.0
        for v in xs + params:
            analytic = np.zeros_like(v.data) if v.grad is None else v.grad
            flat = v.data.reshape(-1)
            for j in range(flat.size):
                old = flat[j]
                flat[j] = old + h
                up, d_up = objective()
                flat[j] = old - h
                down, d_down = objective()
                flat[j] = old
                clean_up, clean_down = same(d_up, base), same(d_down, base)
                if clean_up and clean_down:
                    numeric = (up - down) / (2 * h)
                elif clean_up:
                    numeric = (up - center) / h
                elif clean_down:
                    numeric = (center - down) / h
                else:
                    skipped += 1
                    continue
                err = abs(analytic.reshape(-1)[j] - numeric) / max(1.0, abs(numeric))
                worst = max(worst, err)
    if skipped:
        log.debug("grad_check skipped %d elements straddling kinks", skipped)
    return worst
