"""A small dense network trained with BCE and Adam, in float64 numpy.

Hidden layers use ReLU, the output layer a sigmoid. Gradients are
hand-derived; :func:`gradient` is checked against finite differences in
the test suite.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ShapeError, TrainingError

logger = logging.getLogger(__name__)

EPS = 1e-7
CHECKPOINT_FORMAT = "topic-exposure-mlp"
CHECKPOINT_VERSION = 1


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class MlpModel:
    layer_dims: list[int]
    weights: list[np.ndarray] = field(repr=False)
    biases: list[np.ndarray] = field(repr=False)

    def __post_init__(self):
        if len(self.layer_dims) < 2:
            raise ShapeError("need at least an input and an output dimension")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("one weight matrix and bias per layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_dims[k], self.layer_dims[k + 1])
            if w.shape != shape or b.shape != (shape[1],):
                raise ShapeError(f"layer {k}: expected weights {shape}, got {w.shape}")

    @classmethod
    def init(cls, layer_dims: Sequence[int], seed: int = 0) -> "MlpModel":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        dims = [int(d) for d in layer_dims]
        ws, bs = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            ws.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
            bs.append(np.zeros(fan_out))
        return cls(dims, ws, bs)

    @classmethod
    def encoder_decoder(cls, n_in: int, n_out: int, hidden=(64, 32), seed: int = 0):
        """``n_in -> 64 -> 32 -> 64 -> n_out``: the encoder mirrored up to the output."""
        hidden = list(hidden)
        return cls.init([n_in, *hidden, *hidden[-2::-1], n_out], seed)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        return [p for wb in zip(self.weights, self.biases) for p in wb]

    def copy(self) -> "MlpModel":
        return MlpModel(list(self.layer_dims), [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases])

    # -- persistence --

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "layer_dims": self.layer_dims,
            "params": [float(v) for p in self.params() for v in p.ravel()],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MlpModel":
        if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
            raise ShapeError("not a version-1 model checkpoint")
        dims = doc["layer_dims"]
        flat = np.asarray(doc["params"], dtype=float)
        ws, bs, pos = [], [], 0
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            ws.append(flat[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out))
            pos += fan_in * fan_out
            bs.append(flat[pos:pos + fan_out].copy())
            pos += fan_out
        if pos != flat.size:
            raise ShapeError("parameter count does not match layer_dims")
        return cls(list(dims), ws, bs)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MlpModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _as_batch(model: MlpModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.layer_dims[0]:
        raise ShapeError(f"expected inputs of width {model.layer_dims[0]}, got shape {x.shape}")
    return x


def _forward_cache(model: MlpModel, x: np.ndarray):
    acts = [x]
    pre = []
    h = x
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        pre.append(z)
        h = sigmoid(z) if k == model.n_layers - 1 else np.maximum(z, 0.0)
        acts.append(h)
    return acts, pre


def forward(model: MlpModel, x) -> np.ndarray:
    """Predictions in (0, 1); a 1-D input gives a 1-D output."""
    squeeze = np.ndim(x) == 1
    out = _forward_cache(model, _as_batch(model, x))[0][-1]
    return out[0] if squeeze else out


def bce_loss(e_hat, e, eps: float = EPS) -> float:
    """Mean binary cross-entropy over outputs (and rows, for 2-D input)."""
    e_hat = np.asarray(e_hat, dtype=float)
    e = np.asarray(e, dtype=float)
    if e_hat.shape != e.shape:
        raise ShapeError(f"prediction shape {e_hat.shape} != target shape {e.shape}")
    p = np.clip(e_hat, eps, 1.0 - eps)
    return float(-np.mean(e * np.log(p) + (1.0 - e) * np.log(1.0 - p)))


def gradient(model: MlpModel, x, e, eps: float = EPS):
    """Gradients of ``bce_loss(forward(model, x), e)``.

    Returns ``(loss, [(dW, db), ...])`` with one pair per layer.
    """
    x = _as_batch(model, x)
    e = np.asarray(e, dtype=float)
    if e.ndim == 1:
        e = e[None, :]
    if e.shape != (x.shape[0], model.layer_dims[-1]):
        raise ShapeError(f"targets must have shape {(x.shape[0], model.layer_dims[-1])}")
    acts, pre = _forward_cache(model, x)
    out = acts[-1]
    loss = bce_loss(out, e, eps)
    # clipping zeroes the derivative outside [eps, 1 - eps]
    live = (out > eps) & (out < 1.0 - eps)
    delta = (out - e) * live / e.size
    grads = []
    for k in range(model.n_layers - 1, -1, -1):
        grads.append((acts[k].T @ delta, delta.sum(axis=0)))
        if k:
            delta = (delta @ model.weights[k].T) * (pre[k - 1] > 0)
    return loss, grads[::-1]


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list, repr=False)
    v: list[np.ndarray] = field(default_factory=list, repr=False)

    def update(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """In-place Adam step on ``params``."""
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step += 1
        c1 = 1.0 - self.beta1 ** self.step
        c2 = 1.0 - self.beta2 ** self.step
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    seed: int = 0
    shuffle: bool = True
    lr: float = 1e-4
    patience: int | None = 20
    validation_fraction: float = 0.1
    # indices of layers to update; None trains every layer
    trainable: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in [0, 1)")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int | None = None

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss"])
            for k, loss in enumerate(self.train_loss):
                val = self.val_loss[k] if k < len(self.val_loss) else ""
                w.writerow([k + 1, repr(loss), repr(val) if val != "" else ""])


def train(model: MlpModel, inputs, targets, cfg: TrainConfig = TrainConfig(),
          validation=None) -> tuple[MlpModel, TrainHistory]:
    """Mini-batch Adam on BCE.

    ``validation`` is an optional ``(inputs, targets)`` pair; without it a
    seeded ``cfg.validation_fraction`` of the rows is held out. With a
    validation set and ``cfg.patience``, training stops once validation
    loss has not improved for that many epochs and the best parameters are
    returned. ``train_loss`` is the mean mini-batch loss seen in each epoch.
    """
    x = _as_batch(model, inputs)
    y = np.asarray(targets, dtype=float)
    if y.shape != (x.shape[0], model.layer_dims[-1]):
        raise ShapeError(f"targets must have shape {(x.shape[0], model.layer_dims[-1])}")
    rng = np.random.default_rng(cfg.seed)
    if validation is None and cfg.validation_fraction > 0 and x.shape[0] > 1:
        perm = rng.permutation(x.shape[0])
        n_val = max(1, int(round(cfg.validation_fraction * x.shape[0])))
        validation = (x[perm[:n_val]], y[perm[:n_val]])
        x, y = x[perm[n_val:]], y[perm[n_val:]]
    if validation is not None:
        xv = _as_batch(model, validation[0])
        yv = np.asarray(validation[1], dtype=float)

    model = model.copy()
    layers = range(model.n_layers) if cfg.trainable is None else cfg.trainable
    params = [p for k in layers for p in (model.weights[k], model.biases[k])]
    opt = AdamState(lr=cfg.lr)
    hist = TrainHistory()
    best, best_loss, stale = None, np.inf, 0
    n = x.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        batch_losses = []
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            loss, grads = gradient(model, x[idx], y[idx])
            if not np.isfinite(loss) or not all(np.isfinite(g).all() for gw in grads for g in gw):
                raise TrainingError(f"non-finite loss or gradient at epoch {epoch + 1}, "
                                    f"batch {b + 1} (loss={loss})")
            batch_losses.append(loss * len(idx))
            opt.update(params, [g for k in layers for g in grads[k]])
        hist.train_loss.append(float(np.sum(batch_losses) / n))
        if validation is None:
            continue
        val = bce_loss(forward(model, xv), yv)
        hist.val_loss.append(val)
        if val < best_loss:
            best, best_loss, stale = model.copy(), val, 0
            hist.best_epoch = epoch + 1
        else:
            stale += 1
            if cfg.patience is not None and stale >= cfg.patience:
                logger.debug("early stop at epoch %d (best %d)", epoch + 1, hist.best_epoch)
                break
    if best is not None and cfg.patience is not None:
        model = best
    return model, hist
