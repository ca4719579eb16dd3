"""Scoring: macro-F1, the retraining reward, alarm confusion and trimmed means."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import DriftVerdict, LabeledBatch, concat_batches


def macro_f1(truth, pred, class_count: Optional[int] = None, classes=None) -> float:
    """Unweighted mean of per-class F1.

    The class set is ``classes`` when given, else ``range(class_count)``, else
    every id up to the largest one seen. A declared class that appears in
    neither vector scores 0.
    """
    truth = np.asarray(truth, dtype=np.int64).reshape(-1)
    pred = np.asarray(pred, dtype=np.int64).reshape(-1)
    if truth.shape != pred.shape:
        raise ValueError("truth and pred lengths differ")
    if truth.size == 0:
        raise ValueError("macro_f1 needs at least one sample")
    if classes is None:
        if class_count is None:
            class_count = int(max(truth.max(), pred.max())) + 1
        classes = np.arange(class_count)
    classes = np.asarray(classes, dtype=np.int64)
    if classes.size == 0:
        raise ValueError("empty class set")
    classes = np.unique(classes)
    k = len(classes)
    t_idx = _positions(truth, classes)
    p_idx = _positions(pred, classes)
    tp = np.zeros(k)
    hit = (t_idx == p_idx) & (t_idx >= 0)
    np.add.at(tp, t_idx[hit], 1)
    support = np.bincount(t_idx[t_idx >= 0], minlength=k).astype(float)
    predicted = np.bincount(p_idx[p_idx >= 0], minlength=k).astype(float)
    denom = support + predicted
    f1 = np.divide(2 * tp, denom, out=np.zeros(k), where=denom > 0)
    return float(f1.mean())


def _positions(v, classes):
    pos = np.searchsorted(classes, v)
    pos = np.minimum(pos, len(classes) - 1)
    return np.where(classes[pos] == v, pos, -1)


class Decision(enum.Enum):
    TP = "TP"
    TN = "TN"
    FP = "FP"
    FN = "FN"

    @classmethod
    def classify(cls, alarm: bool, drift: bool) -> "Decision":
        if alarm:
            return cls.TP if drift else cls.FP
        return cls.FN if drift else cls.TN


@dataclass(frozen=True)
class RewardParams:
    t_s: float = 0.1

    def __post_init__(self):
        if not self.t_s > 0:
            raise ValueError("t_s must be positive")


def reward(decision, f1_gain: float = 0.0, params: RewardParams = RewardParams()) -> float:
    decision = Decision(decision)
    if decision is Decision.TP:
        return f1_gain
    if decision is Decision.TN:
        return params.t_s
    if decision is Decision.FP:
        return f1_gain - params.t_s
    return -f1_gain


@dataclass
class AlarmConfusion:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def add(self, decision: Decision) -> None:
        name = Decision(decision).value.lower()
        setattr(self, name, getattr(self, name) + 1)

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def precision(self) -> Optional[float]:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else None

    @property
    def recall(self) -> Optional[float]:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else None

    @property
    def f1(self) -> Optional[float]:
        p, r = self.precision, self.recall
        if p is None or r is None:
            return None
        return 2 * p * r / (p + r) if p + r else 0.0

    def as_dict(self) -> dict:
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn,
                "precision": self.precision, "recall": self.recall, "f1": self.f1}


def score_sequence(verdicts: Sequence, truth: Sequence[bool], gains: Sequence[float],
                   params: RewardParams = RewardParams()):
    """Sum the per-batch rewards and tally alarm outcomes.

    ``verdicts`` may hold DriftVerdict objects or plain booleans.
    """
    if not len(verdicts) == len(truth) == len(gains):
        raise ValueError("verdicts, truth and gains must have equal length")
    total = 0.0
    confusion = AlarmConfusion()
    for v, drift, gain in zip(verdicts, truth, gains):
        alarm = v.retrain if isinstance(v, DriftVerdict) else bool(v)
        d = Decision.classify(alarm, bool(drift))
        confusion.add(d)
        total += reward(d, float(gain), params)
    return total, confusion


def aggregate_trimmed(values: Sequence[float]) -> float:
    """Drop one max and one min, average the rest."""
    vals = sorted(float(v) for v in values)
    if len(vals) < 3:
        raise ValueError("trimmed aggregation needs at least 3 values")
    return float(np.mean(vals[1:-1]))


def f1_gain(m0, d0: LabeledBatch, d_new: LabeledBatch, rng_seed: int = 0,
            holdout_fraction: float = 0.3) -> float:
    """Macro-F1 the deployed forest would gain by retraining with ``d_new``.

    ``d_new`` is split 70/30; a forest with M0's hyperparameters is refit on
    ``d0`` plus the 70% part and both models are scored on the 30% holdout.
    """
    from .trees import predict_with_confidence, refit_like

    if d_new.labels is None:
        raise ValueError("f1_gain needs ground-truth labels on the new batch")
    n = d_new.n_rows
    n_hold = int(round(holdout_fraction * n))
    if n_hold < 1 or n - n_hold < 1:
        raise ValueError("too few rows for the 70/30 split")
    rng = np.random.default_rng(rng_seed)
    perm = rng.permutation(n)
    hold, fit_part = np.sort(perm[:n_hold]), np.sort(perm[n_hold:])
    holdout = d_new.take(hold)
    retrained = refit_like(m0, concat_batches([d0, d_new.take(fit_part)]),
                           rng_seed=rng_seed)
    classes = np.union1d(d0.labels, d_new.labels)
    before, _ = predict_with_confidence(m0, holdout)
    after, _ = predict_with_confidence(retrained, holdout)
    gain = (macro_f1(holdout.labels, after, classes=classes)
            - macro_f1(holdout.labels, before, classes=classes))
    return float(min(max(gain, 0.0), 1.0))
