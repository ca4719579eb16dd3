import numpy as np

from driftbench.core import LabeledBatch


def blobs(centers, n_per_class=50, seed=0, scale=1.0, batch_id=0):
    """Isotropic Gaussian blobs, one per center, labels 0..k-1 in center order."""
    rng = np.random.default_rng(seed)
    centers = np.asarray(centers, dtype=float)
    X = np.vstack([rng.normal(c, scale, size=(n_per_class, centers.shape[1])) for c in centers])
    y = np.repeat(np.arange(len(centers)), n_per_class)
    return LabeledBatch(X, y, batch_id)


def macro_f1_loop(truth, pred, classes):
    """Per-class F1 by explicit counting; a class with no support and no predictions scores 0."""
    scores = []
    for c in classes:
        tp = sum(1 for t, p in zip(truth, pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(truth, pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(truth, pred) if t == c and p != c)
        scores.append(0.0 if tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn))
    return sum(scores) / len(scores)
