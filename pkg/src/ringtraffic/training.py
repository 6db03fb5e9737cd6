"""Mini-batch training loop for the CNN-LSTM predictor."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import Dataset, SplitDataset
from .predictor import (
    PredictorConfig,
    PredictorModel,
    backward,
    batch_loss,
    forward_batch,
    predict_proba,
)

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainingHistory:
    train_loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    test_loss: list[float] = field(default_factory=list)
    test_accuracy: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)

    def append(self, train_loss, train_acc, test_loss, test_acc):
        self.train_loss.append(train_loss)
        self.train_accuracy.append(train_acc)
        self.test_loss.append(test_loss)
        self.test_accuracy.append(test_acc)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "train_accuracy", "test_loss", "test_accuracy"])
            for k in range(len(self)):
                writer.writerow(
                    [
                        k + 1,
                        repr(self.train_loss[k]),
                        repr(self.train_accuracy[k]),
                        repr(self.test_loss[k]),
                        repr(self.test_accuracy[k]),
                    ]
                )


class Momentum:
    def __init__(self, params, lr, mu):
        self.lr, self.mu = lr, mu
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        for k, g in grads.items():
            v = self.velocity[k]
            v *= self.mu
            v -= self.lr * g
            params[k] += v


class Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(model: PredictorModel):
    cfg = model.config
    if cfg.optimizer == "adam":
        return Adam(model.params, cfg.learning_rate)
    return Momentum(model.params, cfg.learning_rate, cfg.momentum)


def clip_gradients(grads, max_norm):
    if not max_norm:
        return grads
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        return {k: g * scale for k, g in grads.items()}
    return grads


def evaluate(model: PredictorModel, data: Dataset) -> tuple[float, float]:
    """Loss and site accuracy in inference mode; ``(nan, nan)`` for an empty set."""
    if len(data) == 0:
        return float("nan"), float("nan")
    probs = predict_proba(model, data.inputs)
    targets = data.targets.astype(np.float64)
    acc = float(np.mean((probs >= 0.5) == (targets >= 0.5)))
    return batch_loss(probs, targets, model.config.alpha), acc


def train(
    model: PredictorModel,
    data: SplitDataset,
    config: PredictorConfig | None = None,
    progress=None,
) -> tuple[PredictorModel, TrainingHistory]:
    """Train a copy of ``model``; the input model is left untouched.

    ``config`` overrides the model's training hyperparameters (learning rate,
    epochs, batch size, optimizer, alpha); architecture fields must match.
    ``progress(epoch, history)`` is called after every epoch if given.
    """
    cfg = config or model.config
    if cfg.param_shapes() != model.config.param_shapes():
        raise TrainingError("training config does not match the model architecture")
    for part in (data.train, data.test):
        if len(part) and (part.window, part.n_sites) != (cfg.window, cfg.n_sites):
            raise TrainingError(
                f"dataset windows are {part.window}x{part.n_sites}, "
                f"model expects {cfg.window}x{cfg.n_sites}"
            )
    if len(data.train) == 0:
        raise TrainingError("training set is empty")

    params = {k: v.copy() for k, v in model.params.items()}
    net = PredictorModel(cfg, params, np.random.default_rng([cfg.init_seed, 1]))
    order_rng = np.random.default_rng([cfg.init_seed, 2])
    opt = make_optimizer(net)
    history = TrainingHistory()
    x_all = data.train.inputs
    y_all = data.train.targets.astype(np.float64)
    n = len(data.train)

    for epoch in range(cfg.epochs):
        perm = order_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            probs, cache = forward_batch(net, x_all[idx], training=True)
            batch = batch_loss(probs, y_all[idx], cfg.alpha)
            if not np.isfinite(batch):
                raise TrainingError(
                    f"non-finite loss {batch} at epoch {epoch + 1}, batch starting {start}; "
                    f"probability range [{probs.min()}, {probs.max()}]"
                )
            grads = clip_gradients(backward(net, cache, y_all[idx]), cfg.clip_norm)
            opt.step(net.params, grads)
        tr_loss, tr_acc = evaluate(net, data.train)
        te_loss, te_acc = evaluate(net, data.test)
        if not np.isfinite(tr_loss):
            raise TrainingError(f"non-finite training loss after epoch {epoch + 1}")
        history.append(tr_loss, tr_acc, te_loss, te_acc)
        log.info(
            "epoch %d: train loss %.4f acc %.4f | test loss %.4f acc %.4f",
            epoch + 1, tr_loss, tr_acc, te_loss, te_acc,
        )  # fmt: skip
        if progress is not None:
            progress(epoch + 1, history)
    return net, history


def with_overrides(config: PredictorConfig, **changes) -> PredictorConfig:
    changes = {k: v for k, v in changes.items() if v is not None}
    return replace(config, **changes)
