"""Adam with coupled L2, multi-step schedule, minibatching and early stopping."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ConfigurationError, NonFiniteError, OptimizerError, TrainingError
from .metrics import confusion, weighted_metrics
from .tensor import GradTape, Tensor, softmax_cross_entropy


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 1e-4
    patience: float = 10
    milestones: tuple = (30, 60)
    gamma: float = 0.1
    multistep: bool = False
    seed: int = 0
    min_delta: float = 1e-6

    def __post_init__(self):
        self.milestones = tuple(sorted(int(m) for m in self.milestones))
        self.validate()

    def validate(self):
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ConfigurationError(f"epochs must be a positive integer, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 < self.gamma < 1:
            raise ConfigurationError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.patience < 1:
            raise ConfigurationError(f"patience must be >= 1, got {self.patience}")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ConfigurationError(f"bad lr/weight_decay {self.lr}/{self.weight_decay}")

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **changes})

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


# -- optimizer -------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def like(cls, param: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param))


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              weight_decay: float = 0.0) -> np.ndarray:
    """One Adam update of ``param`` in place (coupled L2: ``g = grad + wd * param``)."""
    if param.shape != grad.shape:
        raise OptimizerError(f"grad shape {grad.shape} != param shape {param.shape}")
    if not np.isfinite(grad).all():
        raise OptimizerError("non-finite gradient, step aborted")
    g = grad + weight_decay * param if weight_decay else grad
    state.t += 1
    state.m *= beta1
    state.m += (1 - beta1) * g
    state.v *= beta2
    state.v += (1 - beta2) * g * g
    m_hat = state.m / (1 - beta1 ** state.t)
    v_hat = state.v / (1 - beta2 ** state.t)
    param -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype, copy=False)
    return param


class Adam:
    def __init__(self, params, weight_decay: float = 0.0, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.weight_decay = weight_decay
        self.betas, self.eps = betas, eps
        self.state = [AdamState.like(p.data) for p in self.params]

    def step(self, lr: float):
        # validate everything first so a bad gradient leaves all weights untouched
        for p in self.params:
            if not np.isfinite(p.grad).all():
                raise OptimizerError(f"non-finite gradient in {p.name}, step aborted")
        for p, s in zip(self.params, self.state):
            adam_step(p.data, p.grad, s, lr, *self.betas, self.eps, self.weight_decay)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def multistep_lr(epoch: int, cfg: TrainConfig) -> float:
    """``base_lr * gamma**k`` with k = number of milestones <= epoch (0-based)."""
    k = sum(1 for m in cfg.milestones if m <= epoch)
    return cfg.lr * cfg.gamma ** k


def minibatches(n, batch_size: int, epoch: int, seed: int) -> list[np.ndarray]:
    """Index batches of a fresh permutation keyed by (seed, epoch); last batch may be short."""
    n = n if isinstance(n, (int, np.integer)) else len(n)
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng([seed, epoch]).permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


# -- early stopping ----------------------------------------------------------------------

class EarlyStopping:
    """Tracks the best validation loss; ``update`` returns True when training should stop."""

    def __init__(self, patience: float = 10, min_delta: float = 1e-6):
        self.patience, self.min_delta = patience, min_delta
        self.best = math.inf
        self.best_epoch = 0
        self.wait = 0
        self.epoch = 0

    def update(self, val_loss: float) -> bool:
        self.epoch += 1
        if val_loss < self.best - self.min_delta:
            self.best, self.best_epoch, self.wait = val_loss, self.epoch, 0
        else:
            self.wait += 1
        return self.wait >= self.patience

    @property
    def improved(self) -> bool:
        return self.best_epoch == self.epoch


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_f1: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = 0

    def __len__(self):
        return len(self.train_loss)

    def rows(self):
        for i in range(len(self)):
            yield (i + 1, self.train_loss[i], self.val_loss[i], self.val_f1[i], self.lr[i])


LOG_HEADER = ("epoch", "train_loss", "val_loss", "val_f1", "lr")


def evaluate_loss(model, x, y, batch_size=256):
    """Eval-mode mean cross-entropy (float64 accumulation) and weighted F1."""
    total, preds = 0.0, []
    for i in range(0, len(x), batch_size):
        logits = model.forward(x[i:i + batch_size], train=False).data.astype(np.float64)
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        yb = y[i:i + batch_size]
        total += -logp[np.arange(len(yb)), yb].sum()
        preds.append(logits.argmax(axis=1))
    cm = confusion(np.concatenate(preds), y, model.num_classes)
    return total / len(x), weighted_metrics(cm).weighted_f1


def train_model(model, train, val, cfg: TrainConfig, augment=None, *, log_path=None,
                progress=None):
    """Fit ``model`` on ``train = (x, y)``; early-stop on ``val``; restore best weights.

    ``augment`` (optional) must provide ``apply_batch(x, seed, epoch, indices)``.
    Returns ``(model, TrainHistory)``.
    """
    x_tr, y_tr = train
    x_va, y_va = val
    if len(x_tr) == 0 or len(x_va) == 0:
        raise TrainingError("train and val splits must be non-empty")
    top = int(max(y_tr.max(), y_va.max()))
    if top >= model.num_classes:
        raise TrainingError(f"label {top} does not fit a {model.num_classes}-class head")

    opt = Adam(model.trainable_parameters(), weight_decay=cfg.weight_decay)
    stopper = EarlyStopping(cfg.patience, cfg.min_delta)
    hist = TrainHistory()
    best_state = model.state_dict()
    log = None
    if log_path is not None:
        log = open(os.fspath(log_path), "w", newline="")
        writer = csv.writer(log, lineterminator="\n")
        writer.writerow(LOG_HEADER)
    try:
        for epoch in range(1, int(cfg.epochs) + 1):
            lr = multistep_lr(epoch - 1, cfg) if cfg.multistep else cfg.lr
            running, seen = 0.0, 0
            for b, idx in enumerate(minibatches(len(x_tr), cfg.batch_size, epoch, cfg.seed)):
                xb = x_tr[idx]
                if augment is not None:
                    xb = augment.apply_batch(xb, cfg.seed, epoch, idx)
                opt.zero_grad()
                try:
                    with GradTape() as tape:
                        logits = model.forward(Tensor(xb, dtype=model.dtype), train=True)
                        loss, _ = softmax_cross_entropy(logits, y_tr[idx])
                    value = loss.item()
                    if not math.isfinite(value):
                        raise NonFiniteError("loss is not finite")
                    tape.backward(loss)
                    opt.step(lr)
                except (NonFiniteError, OptimizerError) as exc:
                    raise TrainingError(f"epoch {epoch}, batch {b}: {exc}", epoch, b) from exc
                running += value * len(idx)
                seen += len(idx)
            val_loss, val_f1 = evaluate_loss(model, x_va, y_va)
            hist.train_loss.append(running / seen)
            hist.val_loss.append(val_loss)
            hist.val_f1.append(val_f1)
            hist.lr.append(lr)
            stop = stopper.update(val_loss)
            if stopper.improved:
                best_state = model.state_dict()
                hist.best_epoch = epoch
            if log is not None:
                writer.writerow([epoch, repr(hist.train_loss[-1]), repr(val_loss), repr(val_f1), repr(lr)])
                log.flush()
            if progress is not None:
                progress(epoch, hist)
            if stop:
                break
    finally:
        if log is not None:
            log.close()
    model.load_state_dict(best_state)
    return model, hist
