"""Mini-batch MSE training with Adam and early stopping on the test split."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import RngStream, Tensor, no_grad
from .dataset import DatasetSplit, fit_normalization
from .errors import DivergenceError, InvalidInputError, ShapeError

log = logging.getLogger(__name__)

CLIP_NORM = 5.0


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    clip_norm: float | None = CLIP_NORM

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidInputError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise InvalidInputError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise InvalidInputError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            raise InvalidInputError(f"max_epochs must be >= 1, got {self.max_epochs}")


@dataclass
class TrainHistory:
    train_mse: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0
    wall_time: float = 0.0

    @property
    def best_val_mse(self) -> float:
        return min(self.val_mse) if self.val_mse else math.inf

    @property
    def best_train_mse(self) -> float:
        """Train MSE recorded in the epoch that won on validation."""
        return self.train_mse[self.best_epoch - 1] if self.best_epoch else math.inf

    def to_dict(self, include_timing: bool = False) -> dict:
        d = asdict(self)
        if not include_timing:
            d.pop("wall_time")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainHistory":
        return cls(list(d["train_mse"]), list(d["val_mse"]), int(d["stopped_epoch"]),
                   int(d["best_epoch"]), float(d.get("wall_time", 0.0)))


# ---------------------------------------------------------------------------


def mse_loss(pred, target) -> Tensor:
    """Mean over every step of every path of the squared error."""
    pred = ag.as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    return (diff * diff).mean()


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, config: TrainConfig, t: int) -> None:
    """Bias-corrected Adam update of the arrays in ``params`` (in place)."""
    if t < 1:
        raise InvalidInputError(f"Adam step count starts at 1, got {t}")
    b1, b2, eps, lr = config.beta1, config.beta2, config.epsilon, config.learning_rate
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in parameter block {name!r}")
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        params[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)
    state.t = t


def _clip(grads: dict, max_norm: float) -> None:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


def evaluate_mse(model, features: np.ndarray, targets: np.ndarray, batch_size: int = 256) -> float:
    """Inference-mode MSE on already-normalised features, averaged per step."""
    total, count = 0.0, 0
    with no_grad():
        for i in range(0, len(features), batch_size):
            pred = model(features[i:i + batch_size], training=False).data
            diff = pred - targets[i:i + batch_size]
            total += float(np.sum(diff * diff))
            count += diff.size
    return total / count


def train(model, split: DatasetSplit, config: TrainConfig):
    """Fit ``model`` on ``split.train``; the test split drives early stopping.

    Normalisation is fitted on the train paths and stored on the returned
    model.  The returned model carries the parameters of the best epoch.
    ``model`` itself is not modified.
    """
    if len(split.train) == 0 or len(split.test) == 0:
        raise InvalidInputError("both sides of the split must be nonempty")
    model = model.copy()
    norm = fit_normalization(split.train)
    model.normalization = norm
    x_train = norm.apply(split.train.features())
    y_train = split.train.targets()
    x_test = norm.apply(split.test.features())
    y_test = split.test.targets()

    rng = RngStream(config.seed)
    shuffle_rng = rng.child(0)
    dropout_rng = rng.child(1)
    state = AdamState()
    hist = TrainHistory()
    best_state = model.get_state()
    wait = 0
    started = time.perf_counter()
    n = len(x_train)
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        running, seen = 0.0, 0
        for i in range(0, n, config.batch_size):
            idx = order[i:i + config.batch_size]
            model.zero_grad()
            loss = mse_loss(model(x_train[idx], training=True, rng=dropout_rng), y_train[idx])
            value = loss.item()
            if not math.isfinite(value):
                hist.stopped_epoch = epoch
                hist.wall_time = time.perf_counter() - started
                raise DivergenceError(f"non-finite training loss at epoch {epoch}", history=hist)
            loss.backward()
            grads = {k: p.grad for k, p in model.params.items()}
            if config.clip_norm is not None:
                _clip(grads, config.clip_norm)
            try:
                adam_step({k: p.data for k, p in model.params.items()}, grads, state, config, state.t + 1)
            except DivergenceError as exc:
                hist.stopped_epoch = epoch
                exc.history = hist
                raise
            running += value * len(idx)
            seen += len(idx)
        hist.train_mse.append(running / seen)
        val = evaluate_mse(model, x_test, y_test)
        if not math.isfinite(val):
            hist.stopped_epoch = epoch
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}", history=hist)
        hist.val_mse.append(val)
        hist.stopped_epoch = epoch
        log.debug("epoch %d train %.3e val %.3e", epoch, hist.train_mse[-1], val)
        if hist.best_epoch == 0 or val < hist.val_mse[hist.best_epoch - 1]:
            hist.best_epoch = epoch
            best_state = model.get_state()
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                break
    model.set_state(best_state)
    hist.wall_time = time.perf_counter() - started
    return model, hist
