"""Decision trees grown from scratch: a random forest and a softmax gradient-boosted ensemble.

Both learners use exact greedy split search over the sorted values of each
candidate feature. Trees are stored as flat arrays so that prediction is a
vectorized walk of at most ``depth`` steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import LabeledBatch
from ._kernels import forest_votes, gradient_tree_levelwise, grow_gini_tree
from .evaluation import macro_f1

LEAF = -1


@dataclass(frozen=True, eq=False)
class DecisionTree:
    feature: np.ndarray      # split feature per node, LEAF for leaves
    threshold: np.ndarray    # go left when x[feature] <= threshold
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray        # (n_nodes, k) leaf payload
    max_depth: int

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature == LEAF))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.nonzero(self.feature[node] != LEAF)[0]
        while active.size:
            nd = node[active]
            f = self.feature[nd]
            go_left = X[active, f] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] != LEAF]
        return node

    def predict_value(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def leaf_values(self) -> np.ndarray:
        return self.value[self.feature == LEAF]

    def equals(self, other: "DecisionTree") -> bool:
        return (np.array_equal(self.feature, other.feature)
                and np.array_equal(self.threshold, other.threshold)
                and np.array_equal(self.left, other.left)
                and np.array_equal(self.right, other.right)
                and np.array_equal(self.value, other.value))

    def dump(self) -> str:
        """Text dump, one node per line: ``id split f thr left right`` or ``id leaf v...``."""
        lines = []
        for i in range(self.n_nodes):
            if self.feature[i] == LEAF:
                vals = " ".join(f"{v:.6g}" for v in self.value[i])
                lines.append(f"{i} leaf {vals}")
            else:
                lines.append(f"{i} split {self.feature[i]} {self.threshold[i]:.6g} "
                             f"{self.left[i]} {self.right[i]}")
        return "\n".join(lines)


# --------------------------------------------------------------------------
# classification trees (gini) and the random forest


def fit_decision_tree(X: np.ndarray, y: np.ndarray, class_count: int,
                      max_depth: Optional[int] = None,
                      features_per_split: Optional[int] = None,
                      rng: Optional[np.random.Generator] = None,
                      min_samples_split: int = 2) -> DecisionTree:
    """Gini tree whose nodes hold class-frequency vectors.

    With ``features_per_split`` below the column count a fresh feature subset
    is drawn at every node, seeded from ``rng``.
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=np.int64)
    n, n_feat = X.shape
    k_feat = n_feat if features_per_split is None else min(features_per_split, n_feat)
    if k_feat < n_feat and rng is None:
        raise ValueError("feature subsampling needs an rng")
    seed = int(rng.integers(0, 2**31 - 1)) if rng is not None else 0
    f, thr, lft, rgt, val, depth = grow_gini_tree(
        X, y, np.arange(n), class_count, -1 if max_depth is None else max_depth,
        k_feat, seed, min_samples_split)
    return DecisionTree(f, thr, lft, rgt, val, int(depth))


@dataclass(frozen=True, eq=False)
class RandomForest:
    trees: tuple
    tree_count: int
    features_per_split: int
    max_depth: Optional[int]
    rng_seed: int
    class_count: int
    n_features: int
    bootstrap: bool = True

    def _packed(self):
        packed = self.__dict__.get("_packed_arrays")
        if packed is None:
            width = max(t.n_nodes for t in self.trees)
            shape = (len(self.trees), width)
            feature = np.full(shape, LEAF, dtype=np.int64)
            threshold = np.zeros(shape)
            left = np.zeros(shape, dtype=np.int64)
            right = np.zeros(shape, dtype=np.int64)
            leaf_class = np.zeros(shape, dtype=np.int64)
            for i, t in enumerate(self.trees):
                k = t.n_nodes
                feature[i, :k], threshold[i, :k] = t.feature, t.threshold
                left[i, :k], right[i, :k] = t.left, t.right
                # leaf payload is a frequency vector; argmax breaks ties to the lowest id
                leaf_class[i, :k] = np.argmax(t.value, axis=1)
            packed = (feature, threshold, left, right, leaf_class)
            object.__setattr__(self, "_packed_arrays", packed)
        return packed

    def votes(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        return forest_votes(X, *self._packed(), self.class_count)

    def equals(self, other: "RandomForest") -> bool:
        return (len(self.trees) == len(other.trees)
                and all(a.equals(b) for a, b in zip(self.trees, other.trees)))


def fit_random_forest(train: LabeledBatch, tree_count: int = 100,
                      max_depth: Optional[int] = None, rng_seed: int = 0,
                      features_per_split: Optional[int] = None,
                      bootstrap: bool = True) -> RandomForest:
    if train.n_rows == 0:
        raise ValueError("empty training set")
    if train.labels is None:
        raise ValueError("random forest needs labels")
    if tree_count < 1:
        raise ValueError("tree_count must be positive")
    X, y = train.features, train.labels
    n, n_feat = X.shape
    class_count = int(y.max()) + 1
    if features_per_split is None:
        features_per_split = max(1, int(np.sqrt(n_feat)))
    features_per_split = min(features_per_split, n_feat)
    seeds = np.random.SeedSequence(rng_seed).spawn(tree_count)
    trees = []
    for ss in seeds:
        rng = np.random.default_rng(ss)
        rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        trees.append(fit_decision_tree(X[rows], y[rows], class_count, max_depth,
                                       features_per_split, rng))
    return RandomForest(tuple(trees), tree_count, features_per_split, max_depth,
                        rng_seed, class_count, n_feat, bootstrap)


def refit_like(model: RandomForest, train: LabeledBatch, rng_seed: Optional[int] = None) -> RandomForest:
    """Fit a new forest with ``model``'s hyperparameters on ``train``."""
    return fit_random_forest(train, model.tree_count, model.max_depth,
                             model.rng_seed if rng_seed is None else rng_seed,
                             features_per_split=None, bootstrap=model.bootstrap)


def predict_with_confidence(model: RandomForest, batch: LabeledBatch):
    """Majority vote per row and the winning vote fraction."""
    X = batch.features
    if X.shape[0] == 0:
        return np.empty(0, dtype=np.int64), np.empty(0)
    if X.shape[1] != model.n_features:
        raise ValueError(f"batch has {X.shape[1]} columns, model expects {model.n_features}")
    votes = model.votes(X)
    pred = np.argmax(votes, axis=1)
    conf = votes[np.arange(len(pred)), pred] / len(model.trees)
    return pred.astype(np.int64), conf


# --------------------------------------------------------------------------
# gradient boosting


def column_order(X: np.ndarray) -> np.ndarray:
    """Row indices sorted by each column, shape (n_features, n_rows)."""
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)


def fit_gradient_tree(X: np.ndarray, grad: np.ndarray, hess: np.ndarray,
                      max_depth: int = 6, reg_lambda: float = 1.0,
                      reg_gamma: float = 0.0, min_child_weight: float = 1.0,
                      order: Optional[np.ndarray] = None) -> DecisionTree:
    """Regression tree on first/second-order gradients.

    Split gain is ``0.5 * (GL^2/(HL+lam) + GR^2/(HR+lam) - G^2/(H+lam)) - gamma``
    (a split needs positive gain) and each leaf holds the Newton step
    ``-G / (H + lam)``. Pass ``order`` from :func:`column_order` to reuse the
    column sort across trees fit on the same matrix.
    """
    X = np.ascontiguousarray(X, dtype=float)
    if order is None:
        order = column_order(X)
    feature, threshold, left, right, value, depth = gradient_tree_levelwise(
        X, order, np.ascontiguousarray(grad, dtype=float),
        np.ascontiguousarray(hess, dtype=float), int(max_depth),
        float(reg_lambda), float(reg_gamma), float(min_child_weight))
    return DecisionTree(feature.copy(), threshold.copy(), left.copy(), right.copy(),
                        value.reshape(-1, 1).copy(), int(depth))


@dataclass(frozen=True, eq=False)
class BoostedEnsemble:
    """Softmax boosting: every stage holds one regression tree per class."""

    class_count: int
    learning_rate: float = 0.3
    reg_lambda: float = 1.0
    reg_gamma: float = 0.0
    max_depth: int = 6
    min_child_weight: float = 1.0
    stages: tuple = field(default=())

    def raw_scores(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros((X.shape[0], self.class_count))
        for stage in self.stages:
            for k, tree in enumerate(stage):
                out[:, k] += self.learning_rate * tree.predict_value(X)[:, 0]
        return out

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return softmax(self.raw_scores(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.raw_scores(X), axis=1)

    def penalty(self) -> float:
        """Sum over all trees of gamma*T + lambda/2 * sum(w^2), w = shrunk leaf outputs."""
        total = 0.0
        for stage in self.stages:
            for tree in stage:
                w = self.learning_rate * tree.leaf_values()
                total += self.reg_gamma * len(w) + 0.5 * self.reg_lambda * float(np.sum(w ** 2))
        return total


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(raw: np.ndarray, y: np.ndarray) -> float:
    z = raw - raw.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1))
    return float(np.sum(logz - z[np.arange(len(y)), y]))


def boosted_objective(ensemble: BoostedEnsemble, batch: LabeledBatch) -> float:
    """Training objective: summed softmax cross-entropy plus tree penalties."""
    return cross_entropy(ensemble.raw_scores(batch.features), batch.labels) + ensemble.penalty()


def boosted_fit_stages(ensemble: Optional[BoostedEnsemble], train: LabeledBatch,
                       rounds: int, eval_on: Optional[LabeledBatch] = None,
                       class_count: Optional[int] = None, **params):
    """Append ``rounds`` boosting stages fit on ``train``.

    Returns the new ensemble (earlier stages shared, not copied) and the
    macro-F1 on ``eval_on`` after each appended round. ``params`` configure a
    fresh ensemble and are ignored when continuing one.
    """
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    if train.labels is None:
        raise ValueError("boosting needs labels on the training batch")
    eval_on = train if eval_on is None else eval_on
    if eval_on.labels is None:
        raise ValueError("eval_on needs labels")
    y = train.labels
    if ensemble is None:
        if class_count is None:
            class_count = int(y.max()) + 1 if y.size else 1
        ensemble = BoostedEnsemble(class_count=class_count, **params)
    K = ensemble.class_count
    if y.size and y.max() >= K:
        raise ValueError(f"unseen class id {int(y.max())} for ensemble with {K} classes")
    X = train.features
    raw = ensemble.raw_scores(X)
    same = eval_on is train
    raw_eval = raw if same else ensemble.raw_scores(eval_on.features)
    onehot = np.eye(K)[y]
    order = column_order(X)
    stages = list(ensemble.stages)
    trace = []
    for _ in range(rounds):
        p = softmax(raw)
        grad = p - onehot
        hess = p * (1.0 - p)
        stage = tuple(
            fit_gradient_tree(X, grad[:, k], hess[:, k], ensemble.max_depth,
                              ensemble.reg_lambda, ensemble.reg_gamma,
                              ensemble.min_child_weight, order)
            for k in range(K)
        )
        stages.append(stage)
        for k, tree in enumerate(stage):
            raw[:, k] += ensemble.learning_rate * tree.predict_value(X)[:, 0]
            if not same:
                raw_eval[:, k] += ensemble.learning_rate * tree.predict_value(eval_on.features)[:, 0]
        pred = np.argmax(raw_eval if not same else raw, axis=1)
        trace.append(macro_f1(eval_on.labels, pred, class_count=K))
    new = BoostedEnsemble(K, ensemble.learning_rate, ensemble.reg_lambda,
                          ensemble.reg_gamma, ensemble.max_depth,
                          ensemble.min_child_weight, tuple(stages))
    return new, trace
