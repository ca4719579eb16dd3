"""A small attentive tabular learner with masked-reconstruction pretraining.

Encoder, per step ``s``::

    a_s = softmax(logits_s)                  # attention over features
    h_s = tanh((z * F * a_s) @ W_s + b_s)    # gated features -> hidden
    rep = sum_s h_s

``z`` is the standardized input. Supervised training standardizes each
mini-batch with its own statistics and folds them into running statistics
that prediction uses, as batch normalization does. The running statistics are
set from the first data the encoder is fit on and travel with the weights on
transfer.
The decoder (``rep @ Wd + bd``) is used for pretraining, the head
(``softmax(rep @ Wh + bh)``) for classification. Gradients are analytic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import LabeledBatch
from .evaluation import macro_f1

ENCODER_KEYS = ("logits", "W", "b")
STAT_MOMENTUM = 0.01


def parameter_count(feature_count: int, hidden_width: int = 64, step_count: int = 2,
                    class_count: int = 0) -> int:
    F, H, S, K = feature_count, hidden_width, step_count, class_count
    encoder = S * (F + F * H + H)
    decoder = H * F + F
    head = H * K + K if K else 0
    return encoder + decoder + head


def softmax_rows(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class AttentiveTabularLearner:
    feature_count: int
    hidden_width: int = 64
    step_count: int = 2
    class_count: int = 0
    rng_seed: int = 0
    params: dict = field(default_factory=dict)
    mean: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.feature_count < 1 or self.hidden_width < 1 or self.step_count < 1:
            raise ValueError("feature_count, hidden_width and step_count must be positive")
        if not self.params:
            self.params = self._init_params(np.random.default_rng(self.rng_seed))

    def _init_params(self, rng):
        F, H, S = self.feature_count, self.hidden_width, self.step_count
        p = {
            "logits": np.zeros((S, F)),
            "W": rng.normal(0.0, 1.0 / np.sqrt(F), size=(S, F, H)),
            "b": np.zeros((S, H)),
            "Wd": rng.normal(0.0, 1.0 / np.sqrt(H * S), size=(H, F)),
            "bd": np.zeros(F),
        }
        if self.class_count:
            p.update(self._init_head(rng, self.class_count))
        return p

    def _init_head(self, rng, class_count):
        H, S = self.hidden_width, self.step_count
        return {"Wh": rng.normal(0.0, 1.0 / np.sqrt(H * S), size=(H, class_count)),
                "bh": np.zeros(class_count)}

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def attention(self) -> np.ndarray:
        """(step_count, feature_count) attention distributions."""
        return softmax_rows(self.params["logits"])

    # -- standardization ---------------------------------------------------

    def fit_statistics(self, X: np.ndarray) -> None:
        self.mean = X.mean(axis=0)
        sd = X.std(axis=0)
        self.scale = np.where(sd > 1e-12, sd, 1.0)

    def update_statistics(self, X: np.ndarray, momentum: float = STAT_MOMENTUM) -> None:
        sd = X.std(axis=0)
        self.mean = (1 - momentum) * self.mean + momentum * X.mean(axis=0)
        self.scale = (1 - momentum) * self.scale + momentum * np.where(sd > 1e-12, sd, 1.0)

    def standardize(self, X: np.ndarray) -> np.ndarray:
        if self.mean is None:
            raise RuntimeError("standardization statistics are not set")
        return (X - self.mean) / self.scale

    # -- forward / backward ------------------------------------------------

    def encode(self, z: np.ndarray):
        p = self.params
        F = self.feature_count
        att = softmax_rows(p["logits"])
        hs, gated = [], []
        for s in range(self.step_count):
            g = z * (F * att[s])
            gated.append(g)
            hs.append(np.tanh(g @ p["W"][s] + p["b"][s]))
        rep = np.sum(hs, axis=0)
        return rep, (z, att, gated, hs)

    def encode_backward(self, d_rep: np.ndarray, cache) -> dict:
        p = self.params
        z, att, gated, hs = cache
        F = self.feature_count
        grads = {k: np.zeros_like(p[k]) for k in ENCODER_KEYS}
        for s in range(self.step_count):
            d_pre = d_rep * (1.0 - hs[s] ** 2)
            grads["W"][s] = gated[s].T @ d_pre
            grads["b"][s] = d_pre.sum(axis=0)
            d_att = F * np.sum((d_pre @ p["W"][s].T) * z, axis=0)
            a = att[s]
            grads["logits"][s] = a * (d_att - np.dot(d_att, a))
        return grads

    def reconstruct(self, z: np.ndarray) -> np.ndarray:
        rep, _ = self.encode(z)
        return rep @ self.params["Wd"] + self.params["bd"]

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        if not self.class_count:
            raise RuntimeError("learner has no classification head")
        rep, _ = self.encode(self.standardize(np.asarray(X, dtype=float)))
        return softmax_rows(rep @ self.params["Wh"] + self.params["bh"])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def copy(self) -> "AttentiveTabularLearner":
        out = AttentiveTabularLearner(self.feature_count, self.hidden_width, self.step_count,
                                      self.class_count, self.rng_seed,
                                      {k: v.copy() for k, v in self.params.items()})
        out.mean = None if self.mean is None else self.mean.copy()
        out.scale = None if self.scale is None else self.scale.copy()
        return out


def reconstruction_loss(model: AttentiveTabularLearner, z: np.ndarray, mask: np.ndarray,
                        with_grads: bool = True):
    """Mean squared error on the masked entries of standardized ``z``.

    ``mask`` is boolean, True where an entry is hidden from the encoder.
    """
    p = model.params
    rep, cache = model.encode(np.where(mask, 0.0, z))
    recon = rep @ p["Wd"] + p["bd"]
    count = max(int(mask.sum()), 1)
    err = np.where(mask, recon - z, 0.0)
    loss = float(np.sum(err ** 2) / count)
    if not with_grads:
        return loss, None
    d_recon = 2.0 * err / count
    grads = model.encode_backward(d_recon @ p["Wd"].T, cache)
    grads["Wd"] = rep.T @ d_recon
    grads["bd"] = d_recon.sum(axis=0)
    return loss, grads


def classification_loss(model: AttentiveTabularLearner, z: np.ndarray, y: np.ndarray,
                        with_grads: bool = True):
    """Mean cross-entropy of the head on standardized ``z``."""
    p = model.params
    rep, cache = model.encode(z)
    prob = softmax_rows(rep @ p["Wh"] + p["bh"])
    n = len(y)
    loss = float(-np.mean(np.log(np.maximum(prob[np.arange(n), y], 1e-300))))
    if not with_grads:
        return loss, None
    d_logits = prob.copy()
    d_logits[np.arange(n), y] -= 1.0
    d_logits /= n
    grads = model.encode_backward(d_logits @ p["Wh"].T, cache)
    grads["Wh"] = rep.T @ d_logits
    grads["bh"] = d_logits.sum(axis=0)
    return loss, grads


@dataclass(frozen=True)
class TrainTrace:
    loss: tuple
    macro_f1: tuple = ()


def standardize_batch(X: np.ndarray) -> np.ndarray:
    sd = X.std(axis=0)
    return (X - X.mean(axis=0)) / np.where(sd > 1e-12, sd, 1.0)


def _minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


class Optimizer:
    """Adam (default) or plain gradient descent over a learner's parameters."""

    def __init__(self, kind: str = "adam", learning_rate: float = 0.02,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.kind, self.lr = kind, learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m, self.v = {}, {}

    def step(self, model: AttentiveTabularLearner, grads: dict) -> None:
        if self.kind == "sgd":
            for k, g in grads.items():
                model.params[k] -= self.lr * g
            return
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for k, g in grads.items():
            m = self.m.get(k, 0.0) * self.beta1 + (1 - self.beta1) * g
            v = self.v.get(k, 0.0) * self.beta2 + (1 - self.beta2) * g * g
            self.m[k], self.v[k] = m, v
            model.params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def pretrain_masked(d1: LabeledBatch, mask_ratio: float = 0.25, epochs: int = 5,
                    rng_seed: int = 0, hidden_width: int = 64, step_count: int = 2,
                    learning_rate: float = 0.02, batch_size: int = 256,
                    optimizer: str = "adam"):
    """Fit a fresh encoder and decoder to fill in randomly hidden entries of ``d1``.

    Each mini-batch hides ``round(mask_ratio * entries)`` entries (at least
    one). Labels on ``d1`` are ignored.
    """
    if not 0.0 < mask_ratio < 1.0:
        raise ValueError("mask_ratio must lie in (0, 1)")
    if epochs < 1:
        raise ValueError("epochs must be positive")
    if d1.n_rows == 0:
        raise ValueError("empty batch")
    model = AttentiveTabularLearner(d1.n_features, hidden_width, step_count, 0, rng_seed)
    model.fit_statistics(d1.features)
    z = model.standardize(d1.features)
    rng = np.random.default_rng([rng_seed, 1])
    size = min(batch_size, d1.n_rows)
    opt = Optimizer(optimizer, learning_rate)
    losses = []
    for _ in range(epochs):
        total, seen = 0.0, 0
        for rows in _minibatches(d1.n_rows, size, rng):
            zb = z[rows]
            k = max(1, int(round(mask_ratio * zb.size)))
            mask = np.zeros(zb.size, dtype=bool)
            mask[rng.choice(zb.size, size=k, replace=False)] = True
            loss, grads = reconstruction_loss(model, zb, mask.reshape(zb.shape))
            opt.step(model, grads)
            total += loss * len(rows)
            seen += len(rows)
        losses.append(total / seen)
    return model, TrainTrace(tuple(losses))


def train_classifier(train: LabeledBatch, epochs: int = 5, rng_seed: int = 0,
                     init: Optional[AttentiveTabularLearner] = None,
                     class_count: Optional[int] = None, hidden_width: int = 64,
                     step_count: int = 2, learning_rate: float = 0.02, batch_size: int = 256,
                     optimizer: str = "adam", shuffle_seed: Optional[int] = None):
    """Supervised training with a fresh head.

    With ``init`` the encoder weights and standardization statistics are copied
    from it (transfer); otherwise the encoder is random and the statistics come
    from ``train``. Macro-F1 on ``train`` is recorded after every epoch.
    """
    if train.labels is None:
        raise ValueError("training batch needs labels")
    if epochs < 1:
        raise ValueError("epochs must be positive")
    if train.n_rows == 0:
        raise ValueError("empty batch")
    K = class_count or int(train.labels.max()) + 1
    if init is not None:
        if init.feature_count != train.n_features:
            raise ValueError(f"encoder expects {init.feature_count} features, "
                             f"batch has {train.n_features}")
        if init.mean is None:
            raise ValueError("transferred encoder has no standardization statistics")
        model = init.copy()
        model.class_count = K
        model.params.update(model._init_head(np.random.default_rng([rng_seed, 2]), K))
        for k in ("Wd", "bd"):
            model.params.pop(k, None)
    else:
        model = AttentiveTabularLearner(train.n_features, hidden_width, step_count, K, rng_seed)
        for k in ("Wd", "bd"):
            model.params.pop(k)
        model.fit_statistics(train.features)
    rng = np.random.default_rng([rng_seed if shuffle_seed is None else shuffle_seed, 3])
    size = min(batch_size, train.n_rows)
    X, y = train.features, train.labels
    opt = Optimizer(optimizer, learning_rate)
    losses, f1s = [], []
    for _ in range(epochs):
        total = 0.0
        for rows in _minibatches(train.n_rows, size, rng):
            # like batch normalization: fit on batch statistics, predict with running ones
            zb = standardize_batch(X[rows])
            model.update_statistics(X[rows])
            loss, grads = classification_loss(model, zb, y[rows])
            opt.step(model, grads)
            total += loss * len(rows)
        losses.append(total / train.n_rows)
        f1s.append(macro_f1(y, model.predict(X), class_count=K))
    return model, TrainTrace(tuple(losses), tuple(f1s))
