"""Confidence-filtered pseudo-label transfer (CFPT) drift detector.

A boosted proxy classifier is fit on the labeled reference batch for a few
rounds, then warm-started on the incoming batch labeled by the deployed
model's most confident votes. The mean absolute gap between the two per-round
macro-F1 traces is the expected utility of retraining.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import DetectorConfig, DriftVerdict, LabeledBatch
from .pseudo_label import pseudo_label
from .trees import RandomForest, boosted_fit_stages


@dataclass(frozen=True)
class UtilityTrace:
    f1_train: tuple
    f1_retrain: tuple
    utility: float


def compute_utility(f1_train: Sequence[float], f1_retrain: Sequence[float]) -> float:
    """Mean of ``|f1_retrain[i] - f1_train[i]|``."""
    a = np.asarray(f1_train, dtype=float)
    b = np.asarray(f1_retrain, dtype=float)
    if a.size == 0 or a.shape != b.shape:
        raise ValueError("traces must be non-empty and of equal length")
    if np.any((a < 0) | (a > 1)) or np.any((b < 0) | (b > 1)):
        raise ValueError("trace entries must lie in [0, 1]")
    return float(np.mean(np.abs(b - a)))


def align_train_trace(f1_train: Sequence[float], n: int) -> list:
    """Pair a training trace with an ``n``-epoch retraining trace.

    Epoch ``i`` of retraining is compared with epoch ``i`` of training; a
    shorter training trace is extended with its final value, a longer one is cut.
    """
    f1_train = list(f1_train)
    if not f1_train:
        raise ValueError("empty training trace")
    return [f1_train[min(i, len(f1_train) - 1)] for i in range(n)]


def _boost_params(cfg: DetectorConfig) -> dict:
    return dict(cfg.extra.get("boost", {}))


def cfpt_utility(m0: RandomForest, d0: LabeledBatch, d1: LabeledBatch,
                 cfg: DetectorConfig = DetectorConfig()) -> UtilityTrace:
    if d0.labels is None:
        raise ValueError("reference batch needs labels")
    pl = pseudo_label(m0, d1.without_labels(), cfg.confidence_keep_fraction)
    class_count = max(int(d0.labels.max()) + 1, m0.class_count)
    proxy, f1_train = boosted_fit_stages(None, d0, cfg.train_epochs, eval_on=d0,
                                         class_count=class_count, **_boost_params(cfg))
    _, f1_retrain = boosted_fit_stages(proxy, pl.batch, cfg.retrain_epochs, eval_on=pl.batch)
    paired = align_train_trace(f1_train, len(f1_retrain))
    return UtilityTrace(tuple(paired), tuple(f1_retrain), compute_utility(paired, f1_retrain))


def cfpt_detect(m0: RandomForest, d0: LabeledBatch, d1: LabeledBatch,
                cfg: DetectorConfig = DetectorConfig()):
    """Run CFPT on one (reference, incoming) pair.

    Calibrates a threshold on ``d0`` first when ``cfg.utility_threshold`` is unset.
    """
    threshold = cfg.utility_threshold
    if threshold is None:
        threshold = calibrate_threshold(m0, d0, cfg, margin=cfg.threshold_margin)
    trace = cfpt_utility(m0, d0, d1, cfg)
    verdict = DriftVerdict(trace.utility >= threshold, trace.utility, float(threshold), "cfpt")
    return verdict, trace


def stratified_halves(labels: np.ndarray, rng: np.random.Generator):
    """Split row indices into two disjoint halves, class by class."""
    first, second = [], []
    for c in np.unique(labels):
        rows = rng.permutation(np.nonzero(labels == c)[0])
        cut = len(rows) // 2
        if len(rows) % 2 and rng.random() < 0.5:
            cut += 1
        first.append(rows[:cut])
        second.append(rows[cut:])
    return np.sort(np.concatenate(first)), np.sort(np.concatenate(second))


UtilityFn = Callable[..., UtilityTrace]


def calibrate_threshold(m0, d0: LabeledBatch, cfg: DetectorConfig = DetectorConfig(),
                        resamples: Optional[int] = None,
                        utility_fn: UtilityFn = cfpt_utility, margin: float = 0.0) -> float:
    """No-drift threshold: mean + max(3 std, ``margin``) of utilities on resampled ``d0``.

    Each resample draws a stratified random half of ``d0`` and scores it as
    incoming data, against the full ``d0`` or against the other half depending
    on ``cfg.calibration_pairing``.
    """
    resamples = cfg.calibration_resamples if resamples is None else resamples
    if resamples < 1:
        raise ValueError("resamples must be positive")
    if d0.labels is None:
        raise ValueError("reference batch needs labels")
    if d0.n_rows < 4:
        raise ValueError("too few rows to split the reference batch")
    rng = np.random.default_rng([cfg.rng_seed, 7])
    utilities = []
    for _ in range(resamples):
        a, b = stratified_halves(d0.labels, rng)
        ref = d0 if cfg.calibration_pairing == "reference" else d0.take(a)
        utilities.append(utility_fn(m0, ref, d0.take(b), cfg).utility)
    return threshold_from_utilities(utilities, margin)


def threshold_from_utilities(utilities: Sequence[float], margin: float = 0.0) -> float:
    u = np.asarray(utilities, dtype=float)
    sd = u.std(ddof=1) if u.size > 1 else 0.0
    return float(np.clip(u.mean() + max(3.0 * sd, margin), 0.0, 1.0))


class CFPTDetector:
    name = "cfpt"

    def __init__(self, cfg: DetectorConfig = DetectorConfig()):
        self.cfg = cfg
        self.threshold = cfg.utility_threshold

    def calibrate(self, m0, d0: LabeledBatch) -> float:
        if self.cfg.utility_threshold is None:
            self.threshold = calibrate_threshold(m0, d0, self.cfg, margin=self.cfg.threshold_margin)
        return self.threshold

    def detect(self, m0, d0: LabeledBatch, d1: LabeledBatch) -> DriftVerdict:
        if self.threshold is None:
            self.calibrate(m0, d0)
        verdict, _ = cfpt_detect(m0, d0, d1, self.cfg.with_threshold(self.threshold))
        return verdict
