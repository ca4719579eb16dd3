"""Shared data model: batches, verdicts, sequences and detector configuration."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Protocol, Sequence

import numpy as np


@dataclass(frozen=True)
class ClassLabel:
    id: int
    display_name: Optional[str] = None


@dataclass(frozen=True, eq=False)
class LabeledBatch:
    """A feature matrix with optional per-row class ids.

    Rows are samples, columns are features. ``labels`` is ``None`` for batches
    that arrive after deployment without ground truth.
    """

    features: np.ndarray
    labels: Optional[np.ndarray] = None
    batch_id: int = 0

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1) if X.size else X.reshape(0, 0)
        X.setflags(write=False)
        object.__setattr__(self, "features", X)
        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.size and not np.issubdtype(y.dtype, np.integer):
                y = y.astype(np.int64)
            y = y.astype(np.int64, copy=False).reshape(-1)
            y.setflags(write=False)
            object.__setattr__(self, "labels", y)

    @property
    def n_rows(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1]) if self.features.ndim == 2 else 0

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def take(self, rows, batch_id: Optional[int] = None) -> "LabeledBatch":
        rows = np.asarray(rows, dtype=np.int64)
        return LabeledBatch(
            self.features[rows],
            None if self.labels is None else self.labels[rows],
            self.batch_id if batch_id is None else batch_id,
        )

    def without_labels(self) -> "LabeledBatch":
        return LabeledBatch(self.features, None, self.batch_id)

    def with_labels(self, labels) -> "LabeledBatch":
        return LabeledBatch(self.features, labels, self.batch_id)

    def class_ids(self) -> np.ndarray:
        if self.labels is None:
            return np.empty(0, dtype=np.int64)
        return np.unique(self.labels)


def concat_batches(batches: Sequence[LabeledBatch], batch_id: int = 0) -> LabeledBatch:
    X = np.vstack([b.features for b in batches])
    if all(b.labels is not None for b in batches):
        y = np.concatenate([b.labels for b in batches])
    else:
        y = None
    return LabeledBatch(X, y, batch_id)


def validate_batch(batch: LabeledBatch) -> list[str]:
    """Return every invariant violation found in ``batch`` (empty list = ok)."""
    problems = []
    X = batch.features
    if X.ndim != 2:
        problems.append("feature matrix is not rectangular")
        return problems
    if not np.all(np.isfinite(X)):
        problems.append("non-finite feature")
    if batch.labels is not None:
        if batch.labels.shape[0] != X.shape[0]:
            problems.append("label length mismatch")
        if batch.labels.size and batch.labels.min() < 0:
            problems.append("negative class id")
    return problems


@dataclass(frozen=True)
class DriftVerdict:
    """Retrain trigger together with the statistic that produced it."""

    retrain: bool
    utility: float
    threshold_used: float
    detector_name: str


@dataclass(frozen=True)
class BatchSequence:
    reference: LabeledBatch
    incoming: tuple
    ground_truth_drift: tuple
    drift_onset: Optional[int] = None
    class_names: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "incoming", tuple(self.incoming))
        object.__setattr__(self, "ground_truth_drift",
                           tuple(bool(f) for f in self.ground_truth_drift))
        if len(self.incoming) != len(self.ground_truth_drift):
            raise ValueError("ground_truth_drift length must equal number of incoming batches")
        if self.reference.labels is None:
            raise ValueError("reference batch must carry labels")
        if self.drift_onset is None and any(self.ground_truth_drift):
            object.__setattr__(self, "drift_onset", self.ground_truth_drift.index(True))

    def __len__(self):
        return len(self.incoming)


PAIRINGS = ("reference", "halves")


@dataclass(frozen=True)
class DetectorConfig:
    """Knobs shared by the two utility-based detectors.

    ``utility_threshold=None`` means "calibrate on the reference batch".
    A calibrated threshold sits at least ``threshold_margin`` above the mean
    no-drift utility, so a zero-variance calibration does not alarm on ties.
    ``calibration_pairing`` picks the no-drift pairs: ``"reference"`` keeps the
    full reference batch and scores random halves of it as incoming data,
    ``"halves"`` scores one disjoint half against the other.
    """

    utility_threshold: Optional[float] = None
    train_epochs: int = 5
    retrain_epochs: int = 5
    confidence_keep_fraction: float = 0.8
    rng_seed: int = 0
    calibration_resamples: int = 10
    threshold_margin: float = 1e-3
    calibration_pairing: str = "reference"
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.utility_threshold is not None and not 0.0 <= self.utility_threshold <= 1.0:
            raise ValueError("utility_threshold must lie in [0, 1]")
        if self.train_epochs < 1 or self.retrain_epochs < 1:
            raise ValueError("epoch counts must be positive")
        if not 0.0 < self.confidence_keep_fraction <= 1.0:
            raise ValueError("confidence_keep_fraction must lie in (0, 1]")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be non-negative")
        if self.calibration_resamples < 1:
            raise ValueError("calibration_resamples must be positive")
        if not 0.0 <= self.threshold_margin <= 1.0:
            raise ValueError("threshold_margin must lie in [0, 1]")
        if self.calibration_pairing not in PAIRINGS:
            raise ValueError(f"calibration_pairing must be one of {PAIRINGS}")

    def with_threshold(self, threshold: float) -> "DetectorConfig":
        return replace(self, utility_threshold=float(threshold))

    def with_seed(self, seed: int) -> "DetectorConfig":
        return replace(self, rng_seed=int(seed))


class DriftDetector(Protocol):
    """A batch detector: reference data in, retrain verdict out."""

    name: str

    def calibrate(self, m0, d0: LabeledBatch) -> None: ...

    def detect(self, m0, d0: LabeledBatch, d1: LabeledBatch) -> DriftVerdict: ...
