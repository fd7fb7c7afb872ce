"""Central finite-difference gradient checking (64-bit)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import GradTape, Tensor
from .tensor.core import KinkProbe

# Denominator floor for the relative error; coordinates whose true gradient is
# ~0 (e.g. off-centre taps of a 3x3 conv on a 1x1 map) are compared absolutely.
REL_FLOOR = 1e-6


def rel_error(a, n, floor=REL_FLOOR):
    a, n = np.asarray(a, dtype=np.float64), np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


@dataclass
class GradCheckReport:
    max_rel_error: float = 0.0
    checked: int = 0
    skipped_kinks: int = 0
    worst: tuple = ()
    per_tensor: dict = field(default_factory=dict)

    def ok(self, tol=1e-4) -> bool:
        return self.checked > 0 and self.max_rel_error < tol


def numeric_grad(loss_fn, arr: np.ndarray, idx, step=1e-4) -> float:
    orig = arr[idx]
    arr[idx] = orig + step
    up = float(loss_fn())
    arr[idx] = orig - step
    down = float(loss_fn())
    arr[idx] = orig
    return (up - down) / (2 * step)


def _probe(forward):
    with KinkProbe() as probe:
        value = float(forward().data)
    return value, probe.signature()


def check_gradients(forward, tensors, *, step=1e-4, samples=12, seed=0,
                    floor=REL_FLOOR, max_attempts=None) -> GradCheckReport:
    """Compare tape gradients with central differences.

    ``forward()`` must build the graph and return a scalar :class:`Tensor`
    (it is called once under a tape and repeatedly without one). Up to
    ``samples`` coordinates per tensor are probed. A coordinate whose +/-step
    evaluations flip a relu mask or a max-pool winner straddles a kink, where
    central differences do not estimate the derivative; it is counted in
    ``skipped_kinks`` and replaced by another coordinate of the same tensor.
    """
    for t in tensors:
        if t.data.dtype != np.float64:
            raise TypeError(f"gradient check needs float64 tensors, {t.name or t} is {t.data.dtype}")
        t.grad = None
        t.requires_grad = True
    with GradTape() as tape:
        loss = forward()
    tape.backward(loss)
    analytic = [np.array(t.grad, copy=True) for t in tensors]
    _, base_sig = _probe(forward)

    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    for k, (t, g) in enumerate(zip(tensors, analytic)):
        arr = t.data
        label = t.name or f"tensor{k}"
        order = rng.permutation(arr.size)
        limit = max_attempts or 4 * samples
        worst_t, done = 0.0, 0
        for f in order[:limit]:
            if done >= samples:
                break
            idx = np.unravel_index(int(f), arr.shape)
            orig = arr[idx]
            arr[idx] = orig + step
            up, sig_up = _probe(forward)
            arr[idx] = orig - step
            down, sig_down = _probe(forward)
            arr[idx] = orig
            if sig_up != base_sig or sig_down != base_sig:
                report.skipped_kinks += 1
                continue
            n = (up - down) / (2 * step)
            err = float(rel_error(g[idx], n, floor))
            report.checked += 1
            done += 1
            worst_t = max(worst_t, err)
            if err > report.max_rel_error:
                report.max_rel_error = err
                report.worst = (label, idx, float(g[idx]), n)
        report.per_tensor[label] = worst_t
    return report


def model_loss_fn(model, x: np.ndarray, labels: np.ndarray, train: bool = True):
    """Cross-entropy closure over a model for :func:`check_gradients`.

    Batchnorm running stats are snapshotted and restored around each call so
    repeated evaluations see identical state.
    """
    from .tensor import softmax_cross_entropy

    bufs = [arr for _, arr in model.buffers()]
    saved = [b.copy() for b in bufs]
    xt = Tensor(x, dtype=np.float64)

    def forward():
        logits = model.forward(xt, train=train)
        loss, _ = softmax_cross_entropy(logits, labels)
        for b, s in zip(bufs, saved):
            b[...] = s
        return loss

    return forward
