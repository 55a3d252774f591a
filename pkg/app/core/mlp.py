# app/core/mlp.py
"""Fully connected ReLU network trained with mini-batch SGD (momentum).

Two heads share the body: a scalar regression output trained on squared
error and a 2-way softmax trained on cross-entropy. Regression targets are
standardized internally; the output layer starts at zero so an untrained
network predicts the training mean.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp, softmax

from app.core.errors import ConfigError, DivergenceError, FitError
from app.core.linear import check_training_data

logger = logging.getLogger(__name__)

Layer = Tuple[np.ndarray, np.ndarray]


class Head(str, Enum):
    REGRESSION = "regression"
    SOFTMAX = "softmax"

    @property
    def outputs(self) -> int:
        return 1 if self is Head.REGRESSION else 2


@dataclass(frozen=True)
class MlpConfig:
    hidden: Tuple[int, ...] = (64, 32)
    activation: str = "relu"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 5
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigError(f"hidden widths must be >= 1, got {self.hidden}")
        if self.activation != "relu":
            raise ConfigError(f"only the rectifier activation is supported, got {self.activation!r}")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError(f"invalid training schedule {self}")
        if not 0.0 <= self.momentum < 1.0 or not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError("momentum and validation_fraction must lie in [0, 1)")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        return out


@dataclass
class MlpFit:
    layers: List[Layer]
    head: Head
    target_mean: float = 0.0
    target_scale: float = 1.0
    history: List[Tuple[int, float]] = field(default_factory=list)


def init_layers(n_in: int, hidden: Tuple[int, ...], head: Head, rng: np.random.Generator,
                zero_head: bool = True) -> List[Layer]:
    """Uniform fan-in scaled weights, zero biases."""
    layers: List[Layer] = []
    widths = (n_in,) + tuple(hidden)
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / fan_in)
        layers.append((rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out)))
    fan_in = widths[-1]
    if zero_head:
        w_out = np.zeros((fan_in, head.outputs))
    else:
        limit = np.sqrt(1.0 / fan_in)
        w_out = rng.uniform(-limit, limit, size=(fan_in, head.outputs))
    layers.append((w_out, np.zeros(head.outputs)))
    return layers


def forward(layers: List[Layer], X: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Output pre-activations plus each layer's input, for backprop."""
    inputs = []
    a = X
    for i, (W, b) in enumerate(layers):
        inputs.append(a)
        z = a @ W + b
        a = z if i == len(layers) - 1 else np.maximum(z, 0.0)
    return a, inputs


def loss_and_gradients(layers: List[Layer], X: np.ndarray, y: np.ndarray, head: Head) -> Tuple[float, List[Layer]]:
    """Mean loss over the batch and its gradient for every (W, b)."""
    out, inputs = forward(layers, X)
    n = X.shape[0]
    if head is Head.REGRESSION:
        resid = out[:, 0] - y
        loss = 0.5 * float(np.mean(resid ** 2))
        delta = resid[:, None] / n
    else:
        labels = y.astype(int)
        loss = float(np.mean(logsumexp(out, axis=1) - out[np.arange(n), labels]))
        delta = softmax(out, axis=1)
        delta[np.arange(n), labels] -= 1.0
        delta /= n

    grads: List[Layer] = [None] * len(layers)  # type: ignore[list-item]
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        a_in = inputs[i]
        grads[i] = (a_in.T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ W.T) * (a_in > 0)
    return loss, grads


def _loss(layers: List[Layer], X: np.ndarray, y: np.ndarray, head: Head) -> float:
    out, _ = forward(layers, X)
    if head is Head.REGRESSION:
        return 0.5 * float(np.mean((out[:, 0] - y) ** 2))
    labels = y.astype(int)
    return float(np.mean(logsumexp(out, axis=1) - out[np.arange(len(labels)), labels]))


def fit_network(
    X: np.ndarray,
    y: np.ndarray,
    cfg: MlpConfig,
    head: Head,
    X_val: Optional[np.ndarray] = None,
    y_val: Optional[np.ndarray] = None,
) -> MlpFit:
    X, y = check_training_data(X, y)
    rng = np.random.default_rng(cfg.seed)

    if head is Head.SOFTMAX:
        if not np.all(np.isin(y, (0.0, 1.0))):
            raise FitError("softmax head expects 0/1 labels")
        target_mean, target_scale = 0.0, 1.0
    else:
        target_mean = float(y.mean())
        target_scale = float(y.std()) or 1.0
    scale = lambda t: t if head is Head.SOFTMAX else (t - target_mean) / target_scale  # noqa: E731

    if X_val is None or len(X_val) == 0:
        n_val = int(round(cfg.validation_fraction * X.shape[0]))
        if n_val >= 1 and X.shape[0] - n_val >= 1:
            perm = rng.permutation(X.shape[0])
            X_val, y_val = X[perm[:n_val]], y[perm[:n_val]]
            X, y = X[perm[n_val:]], y[perm[n_val:]]
        else:
            X_val, y_val = X, y
    else:
        X_val, y_val = check_training_data(X_val, y_val)
    y_train, y_check = scale(y), scale(y_val)

    layers = init_layers(X.shape[1], cfg.hidden, head, rng)
    velocity = [(np.zeros_like(W), np.zeros_like(b)) for W, b in layers]
    best_loss, best_layers, waited = np.inf, [(W.copy(), b.copy()) for W, b in layers], 0
    fit = MlpFit(layers=best_layers, head=head, target_mean=target_mean, target_scale=target_scale)

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(X.shape[0])
        for start in range(0, X.shape[0], cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            loss, grads = loss_and_gradients(layers, X[batch], y_train[batch], head)
            if not np.isfinite(loss):
                raise DivergenceError(epoch, cfg.learning_rate)
            for i, ((W, b), (gW, gb)) in enumerate(zip(layers, grads)):
                vW, vb = velocity[i]
                vW *= cfg.momentum
                vW -= cfg.learning_rate * gW
                vb *= cfg.momentum
                vb -= cfg.learning_rate * gb
                W += vW
                b += vb

        val_loss = _loss(layers, X_val, y_check, head)
        if not np.isfinite(val_loss):
            raise DivergenceError(epoch, cfg.learning_rate)
        fit.history.append((epoch, val_loss))
        if val_loss < best_loss - 1e-12:
            best_loss, waited = val_loss, 0
            best_layers = [(W.copy(), b.copy()) for W, b in layers]
        else:
            waited += 1
            if waited >= cfg.patience:
                logger.debug("Early stop at epoch %d (best validation loss %.5f)", epoch, best_loss)
                break

    fit.layers = best_layers
    logger.info("Trained %s network %s for %d epochs", head.value, list(cfg.hidden), len(fit.history))
    return fit


def network_output(layers: List[Layer], head: Head, X: np.ndarray,
                   target_mean: float = 0.0, target_scale: float = 1.0) -> np.ndarray:
    """Predicted score difference (regression) or P(team 1 wins) (softmax)."""
    out, _ = forward(layers, X)
    if head is Head.REGRESSION:
        return target_mean + target_scale * out[:, 0]
    return softmax(out, axis=1)[:, 1]
