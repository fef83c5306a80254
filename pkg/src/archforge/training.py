"""Losses, metrics, optimizers and the mini-batch training loop."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import kernels
from .errors import ConfigError, ContractError, DivergenceError
from .numerics import Rng

PROB_FLOOR = 1e-12
RMSPROP_EPS = 1e-8
MONITORS = ("val_accuracy", "val_loss")
RUN_CSV_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "seconds")
_EVAL_CHUNK = 8192


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and stopping settings for :func:`fit`.

    ``learning_rate=None`` resolves to 0.001 for rmsprop and 0.01 for sgd.
    ``patience=None`` disables early stopping.
    """

    loss: str = "crossentropy"
    optimizer: str = "rmsprop"
    learning_rate: float | None = None
    momentum: float = 0.9
    weight_decay: float = 1e-6
    gamma: float = 0.9
    batch_size: int = 128
    max_epochs: int = 100
    monitor: str = "val_accuracy"
    patience: int | None = 5
    restore_best: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.loss != "crossentropy":
            raise ConfigError(f"unsupported loss {self.loss!r}")
        if self.optimizer not in ("sgd", "rmsprop"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.monitor not in MONITORS:
            raise ConfigError(f"unknown monitor {self.monitor!r}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("rmsprop gamma must lie in (0, 1)")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise ConfigError("learning rate must be positive")

    @property
    def lr(self):
        if self.learning_rate is not None:
            return self.learning_rate
        return 0.001 if self.optimizer == "rmsprop" else 0.01

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass
class RunRecord:
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0
    test_acc: float | None = None
    diverged: bool = False

    @property
    def epochs(self):
        return len(self.val_acc)

    @property
    def total_seconds(self):
        return float(sum(self.seconds))

    def final(self, name):
        values = getattr(self, name)
        return values[-1] if values else float("nan")

    def best(self, name):
        values = getattr(self, name)
        return values[self.best_epoch - 1] if self.best_epoch else float("nan")

    def csv_rows(self, timing=True):
        for i in range(self.epochs):
            yield {
                "epoch": i + 1,
                "train_loss": self.train_loss[i],
                "train_acc": self.train_acc[i],
                "val_loss": self.val_loss[i],
                "val_acc": self.val_acc[i],
                "seconds": self.seconds[i] if timing else "",
            }

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# -- losses and metrics ------------------------------------------------------

def crossentropy(probabilities, onehot):
    P = np.asarray(probabilities, dtype=np.float64)
    Y = np.asarray(onehot, dtype=np.float64)
    if P.shape != Y.shape or P.ndim != 2:
        raise ContractError(f"crossentropy shapes {P.shape} and {Y.shape} differ")
    picked = np.sum(P * Y, axis=1)
    return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))


def accuracy(probabilities, labels):
    """Fraction of rows whose argmax (first index on ties) equals the label."""
    P = np.asarray(probabilities)
    labels = np.asarray(labels)
    if P.ndim != 2 or labels.shape != (P.shape[0],):
        raise ContractError("accuracy: probabilities and labels disagree in length")
    if labels.size and (labels.min() < 0 or labels.max() >= P.shape[1]):
        raise ContractError("accuracy: label out of range")
    return float(np.mean(np.argmax(P, axis=1) == labels)) if labels.size else 0.0


def _check_correlation_args(V, E):
    V = np.ascontiguousarray(V, dtype=np.float64)
    E = np.ascontiguousarray(E, dtype=np.float64)
    if E.ndim != 2 or E.shape[0] < 1 or E.shape[1] < 1:
        raise ContractError("E must be a non-empty patterns x outputs matrix")
    if V.shape[0] != E.shape[0]:
        raise ContractError(f"{V.shape[0]} candidate values for {E.shape[0]} patterns")
    return V, E


def error_correlation(V, E):
    """``S = sum_o |sum_p (V_p - mean V)(E_po - mean E_o)|`` for one unit."""
    V, E = _check_correlation_args(V, E)
    if V.ndim != 1:
        raise ContractError("V must be one value per pattern")
    return float(kernels.error_correlation(V, E))


def correlation_with_grad(V, E):
    """Summed correlation of every unit (column of ``V``) and dS/dV.

    Uses sign(.) as the subgradient of |.|, with sign(0) = 0.
    """
    V, E = _check_correlation_args(V, E)
    if V.ndim == 1:
        V = V[:, None]
    Ec = E - E.mean(axis=0)
    C = (V - V.mean(axis=0)).T @ Ec
    return float(np.abs(C).sum()), Ec @ np.sign(C).T


# -- optimizers --------------------------------------------------------------

class OptimizerState:
    """Per-tensor accumulators: momentum buffers (sgd) or running squares (rmsprop)."""

    def __init__(self, kind, shapes):
        if kind not in ("sgd", "rmsprop"):
            raise ConfigError(f"unknown optimizer {kind!r}")
        self.kind = kind
        self.buffers = [np.zeros(s) for s in shapes]
        self.t = 0

    @classmethod
    def for_params(cls, kind, params):
        return cls(kind, [np.shape(p) for p in params])


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def _flat(a):
    if not a.flags.c_contiguous:
        raise ContractError("parameter tensors must be C-contiguous")
    return a.reshape(-1)


def sgd_step(params, grads, state: OptimizerState, cfg: TrainConfig, frozen=None):
    """``buf = mu*buf + g``; ``theta = (1 - decay)*theta - lr*buf`` (in place)."""
    params, grads = _as_list(params), _as_list(grads)
    frozen = frozen or [False] * len(params)
    for p, g, buf, fz in zip(params, grads, state.buffers, frozen):
        if fz:
            continue
        kernels.sgd_update(_flat(p), np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
                           _flat(buf), cfg.lr, cfg.momentum, cfg.weight_decay)
    state.t += 1
    return params, state


def rmsprop_step(params, grads, state: OptimizerState, cfg: TrainConfig, frozen=None):
    """``v = gamma*v + (1-gamma)*g^2``; ``theta -= lr*g/(sqrt(v) + 1e-8)`` (in place)."""
    params, grads = _as_list(params), _as_list(grads)
    frozen = frozen or [False] * len(params)
    for p, g, v, fz in zip(params, grads, state.buffers, frozen):
        if fz:
            continue
        kernels.rmsprop_update(_flat(p), np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
                               _flat(v), cfg.lr, cfg.gamma, RMSPROP_EPS)
    state.t += 1
    return params, state


def optimizer_step(net, grads, state, cfg):
    step = rmsprop_step if state.kind == "rmsprop" else sgd_step
    step(net.tensors(), grads, state, cfg, net.frozen_flags())
    net.touch()


# -- early stopping ----------------------------------------------------------

class EarlyStopping:
    """Stops after ``patience`` consecutive epochs without strict improvement."""

    def __init__(self, monitor="val_accuracy", patience=5):
        if monitor not in MONITORS:
            raise ConfigError(f"unknown monitor {monitor!r}")
        self.maximize = monitor == "val_accuracy"
        self.patience = patience
        self.best = None
        self.best_epoch = 0
        self.wait = 0
        self.epoch = 0

    def update(self, value):
        """Feed one epoch's metric; returns True if it is a new best."""
        self.epoch += 1
        if self.best is None or (value > self.best if self.maximize else value < self.best):
            self.best = value
            self.best_epoch = self.epoch
            self.wait = 0
            return True
        self.wait += 1
        return False

    @property
    def should_stop(self):
        return self.patience is not None and self.wait >= self.patience


def replay_early_stopping(values, patience, monitor="val_accuracy"):
    """Run the stopping rule over a metric sequence; returns (stopped_epoch, best_epoch)."""
    stopper = EarlyStopping(monitor, patience)
    for v in values:
        stopper.update(v)
        if stopper.should_stop:
            break
    return stopper.epoch, stopper.best_epoch


# -- training loop -----------------------------------------------------------

def evaluate(net, data):
    """Crossentropy and accuracy of ``net`` over a whole dataset."""
    if len(data) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    loss_sum = 0.0
    correct = 0
    for start in range(0, len(data), _EVAL_CHUNK):
        stop = start + _EVAL_CHUNK
        P = net.predict(data.inputs[start:stop])
        n = P.shape[0]
        loss_sum += crossentropy(P, data.targets[start:stop]) * n
        correct += int(np.sum(np.argmax(P, axis=1) == data.labels[start:stop]))
    return loss_sum / len(data), correct / len(data)


def fit(net, train, val, cfg: TrainConfig, rng: Rng, on_epoch=None):
    """Mini-batch training with early stopping and best-epoch restoration.

    Each epoch visits a fresh permutation of ``train`` in batches of
    ``cfg.batch_size`` (the last one may be short). Train metrics are the
    running means over the epoch's batches. Raises :class:`DivergenceError`
    when a batch loss is not finite.
    """
    if len(train) == 0 or len(val) == 0:
        raise ContractError("fit needs non-empty train and validation sets")
    state = OptimizerState.for_params(cfg.optimizer, net.tensors())
    stopper = EarlyStopping(cfg.monitor, cfg.patience)
    record = RunRecord()
    best = None
    trainable = not all(net.frozen_flags())
    n = len(train)
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, cfg.max_epochs + 1):
            t0 = time.perf_counter()
            order = rng.permutation(n)
            loss_sum = 0.0
            correct = 0
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                X = train.inputs[idx]
                Y = train.targets[idx]
                P, cache = net.forward(X)
                loss = crossentropy(P, Y)
                if not math.isfinite(loss) or not np.all(np.isfinite(P)):
                    record.diverged = True
                    raise DivergenceError(f"non-finite loss at epoch {epoch}")
                b = idx.size
                loss_sum += loss * b
                correct += int(np.sum(np.argmax(P, axis=1) == train.labels[idx]))
                if trainable:
                    grads = net.backward(cache, d_logits=(P - Y) / b)
                    optimizer_step(net, grads, state, cfg)
            val_loss, val_acc = evaluate(net, val)
            record.train_loss.append(loss_sum / n)
            record.train_acc.append(correct / n)
            record.val_loss.append(val_loss)
            record.val_acc.append(val_acc)
            record.seconds.append(time.perf_counter() - t0)
            record.stopped_epoch = epoch
            improved = stopper.update(val_acc if cfg.monitor == "val_accuracy" else val_loss)
            if improved:
                record.best_epoch = epoch
                if cfg.restore_best:
                    best = net.snapshot()
            if on_epoch is not None:
                on_epoch(epoch, record)
            if stopper.should_stop:
                break
    if best is not None:
        net.restore(best)
    return net, record
