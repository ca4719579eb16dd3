"""Confidence-filtered pseudo-labels from a frozen deployed forest."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import LabeledBatch
from .trees import RandomForest, predict_with_confidence


@dataclass(frozen=True)
class PseudoLabeledBatch:
    batch: LabeledBatch
    kept_indices: np.ndarray
    mean_confidence: float


def select_most_confident(confidence, keep_fraction: float) -> np.ndarray:
    """Row indices of the top ``keep_fraction`` confidences, returned in row order.

    Ranking is by confidence descending with ties going to the lower row index;
    at least one row is always kept.
    """
    confidence = np.asarray(confidence, dtype=float)
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError("keep_fraction must lie in (0, 1]")
    n = confidence.size
    if n == 0:
        raise ValueError("empty batch")
    # round away float noise before ceil so that 0.8 * 5 keeps 4, not 5
    n_keep = max(1, math.ceil(round(keep_fraction * n, 9)))
    ranked = np.lexsort((np.arange(n), -confidence))
    return np.sort(ranked[:n_keep])


def pseudo_label(model: RandomForest, batch: LabeledBatch, keep_fraction: float = 0.8) -> PseudoLabeledBatch:
    """Label ``batch`` with the forest's own votes and keep the most confident rows.

    Any labels already on ``batch`` are ignored. The model is only read.
    """
    if batch.n_rows == 0:
        raise ValueError("empty batch")
    pred, conf = predict_with_confidence(model, batch)
    kept = select_most_confident(conf, keep_fraction)
    out = LabeledBatch(batch.features[kept], pred[kept], batch.batch_id)
    return PseudoLabeledBatch(out, kept, float(conf[kept].mean()))
