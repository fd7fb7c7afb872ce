"""Confusion-matrix metrics, model size and single-thread latency."""
from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from .errors import MetricsError, MissingFileError


def confusion(preds, labels, num_classes: int) -> np.ndarray:
    """``cm[t, p]`` counts samples of true class t predicted as p."""
    preds = np.asarray(preds, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if preds.shape != labels.shape:
        raise ValueError(f"preds and labels differ in length: {preds.size} vs {labels.size}")
    for what, arr in (("prediction", preds), ("label", labels)):
        bad = np.flatnonzero((arr < 0) | (arr >= num_classes))
        if bad.size:
            raise IndexError(f"{what} {arr[bad[0]]} at position {bad[0]} outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def _div(a, b):
    # 0/0 (and x/0) -> 0
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    out = np.zeros(np.broadcast(a, b).shape)
    np.divide(a, b, out=out, where=b != 0)
    return out


@dataclass
class MetricsReport:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    accuracy: float

    def as_dict(self) -> dict:
        return {"precision": self.weighted_precision, "recall": self.weighted_recall,
                "f1": self.weighted_f1, "accuracy": self.accuracy}


def weighted_metrics(cm) -> MetricsReport:
    cm = np.asarray(cm, dtype=np.int64)
    total = int(cm.sum())
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or total == 0:
        raise MetricsError(f"need a non-empty square confusion matrix, got shape {cm.shape} total {total}")
    tp = np.diag(cm)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    p = _div(tp, predicted)
    r = _div(tp, support)
    f1 = _div(2 * p * r, p + r)
    w = support / total
    return MetricsReport(
        precision=p, recall=r, f1=f1, support=support,
        weighted_precision=float(w @ p), weighted_recall=float(w @ r),
        weighted_f1=float(w @ f1), accuracy=float(tp.sum() / total),
    )


def evaluate(model, x: np.ndarray, y: np.ndarray, batch_size: int = 64) -> MetricsReport:
    from .models import predict_batched

    logits = predict_batched(model, x, batch_size)
    return weighted_metrics(confusion(logits.argmax(axis=1), y, model.num_classes))


# -- size / latency ----------------------------------------------------------------------

def model_size(weights_path) -> float:
    """Serialized size in MB (10**6 bytes)."""
    path = os.fspath(weights_path)
    try:
        return os.path.getsize(path) / 1e6
    except FileNotFoundError:
        raise MissingFileError(f"weight file not found: {path}") from None


@dataclass
class LatencyStats:
    median_ms: float
    p90_ms: float
    samples: int

    def __str__(self):
        return f"median {self.median_ms:.3f} ms, p90 {self.p90_ms:.3f} ms over {self.samples} runs"


def measure_latency(model, input_res: int | None = None, warmup: int = 10, reps: int = 100,
                    seed: int = 0) -> LatencyStats:
    """Wall-clock batch-1 forward passes on a single BLAS thread.

    The first ``warmup`` runs are discarded; ``reps`` timed runs follow.
    """
    from threadpoolctl import threadpool_limits

    if reps < 10:
        raise ValueError(f"reps must be >= 10, got {reps}")
    c = model.input_shape[0]
    res = input_res or model.input_res
    x = np.random.default_rng(seed).random((1, c, res, res), dtype=np.float32).astype(model.dtype)
    times = []
    with threadpool_limits(limits=1):
        for _ in range(warmup):
            model.forward(x, train=False)
        for _ in range(reps):
            t0 = time.perf_counter()
            model.forward(x, train=False)
            times.append((time.perf_counter() - t0) * 1e3)
    times = np.asarray(times)
    return LatencyStats(float(np.median(times)), float(np.percentile(times, 90)), len(times))
