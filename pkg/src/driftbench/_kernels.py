"""Numba kernels behind the tree learners."""

import numpy as np
from numba import njit

LEAF = -1


@njit(cache=True)
def gradient_tree_levelwise(X, order, grad, hess, max_depth, reg_lambda, reg_gamma,
                            min_child_weight):
    """Exact greedy regression tree grown one level at a time.

    ``order[f]`` holds the row indices sorted by column ``f``; one pass over it
    per level evaluates every split of every open node. Nodes are numbered
    breadth first. Returns (feature, threshold, left, right, value, depth).
    """
    n, n_feat = X.shape
    cap = 2 ** (max_depth + 1) - 1
    feature = np.full(cap, LEAF, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, LEAF, dtype=np.int64)
    right = np.full(cap, LEAF, dtype=np.int64)
    value = np.zeros(cap)
    node_of = np.zeros(n, dtype=np.int64)
    G = np.zeros(cap)
    H = np.zeros(cap)
    for i in range(n):
        G[0] += grad[i]
        H[0] += hess[i]
    n_nodes = 1
    level_start, level_end = 0, 1
    depth = 0
    gl = np.zeros(cap)
    hl = np.zeros(cap)
    last = np.zeros(cap)
    seen = np.zeros(cap, dtype=np.int64)
    best_gain = np.zeros(cap)
    best_feat = np.full(cap, LEAF, dtype=np.int64)
    best_thr = np.zeros(cap)
    while depth < max_depth and level_end > level_start:
        for v in range(level_start, level_end):
            best_gain[v] = 0.0
            best_feat[v] = LEAF
        for f in range(n_feat):
            for v in range(level_start, level_end):
                gl[v] = 0.0
                hl[v] = 0.0
                seen[v] = 0
            for t in range(n):
                r = order[f, t]
                v = node_of[r]
                if v < level_start:
                    continue
                x = X[r, f]
                if seen[v] > 0 and x != last[v]:
                    hr = H[v] - hl[v]
                    if hl[v] >= min_child_weight and hr >= min_child_weight:
                        gr = G[v] - gl[v]
                        gain = 0.5 * (gl[v] * gl[v] / (hl[v] + reg_lambda)
                                      + gr * gr / (hr + reg_lambda)
                                      - G[v] * G[v] / (H[v] + reg_lambda)) - reg_gamma
                        if gain > best_gain[v]:
                            best_gain[v] = gain
                            best_feat[v] = f
                            thr = 0.5 * (last[v] + x)
                            if thr >= x:
                                thr = last[v]
                            best_thr[v] = thr
                gl[v] += grad[r]
                hl[v] += hess[r]
                last[v] = x
                seen[v] += 1
        new_start = n_nodes
        for v in range(level_start, level_end):
            if best_feat[v] != LEAF:
                feature[v] = best_feat[v]
                threshold[v] = best_thr[v]
                left[v] = n_nodes
                right[v] = n_nodes + 1
                G[n_nodes] = 0.0
                H[n_nodes] = 0.0
                G[n_nodes + 1] = 0.0
                H[n_nodes + 1] = 0.0
                n_nodes += 2
        if n_nodes == new_start:
            break
        for i in range(n):
            v = node_of[i]
            if v >= level_start and feature[v] != LEAF:
                if X[i, feature[v]] <= threshold[v]:
                    c = left[v]
                else:
                    c = right[v]
                node_of[i] = c
                G[c] += grad[i]
                H[c] += hess[i]
            elif v >= level_start:
                node_of[i] = -1 - v   # parked in a finished leaf
        level_start, level_end = new_start, n_nodes
        depth += 1
    for v in range(n_nodes):
        value[v] = -G[v] / (H[v] + reg_lambda)
    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], depth)


@njit(cache=True)
def best_gini_split(X, rows, y, feats, class_count):
    """Best (feature, threshold) by weighted gini over ``feats``; feature -1 if none."""
    m = rows.shape[0]
    totals = np.zeros(class_count)
    for i in range(m):
        totals[y[rows[i]]] += 1.0
    best = np.inf
    best_f = -1
    best_thr = 0.0
    vals = np.empty(m)
    counts = np.zeros(class_count)
    for j in range(feats.shape[0]):
        f = feats[j]
        for i in range(m):
            vals[i] = X[rows[i], f]
        order = np.argsort(vals, kind="mergesort")
        counts[:] = 0.0
        sq_left = 0.0
        sq_right = 0.0
        for k in range(class_count):
            sq_right += totals[k] * totals[k]
        for t in range(m - 1):
            c = y[rows[order[t]]]
            # incremental update of sum of squared counts on each side
            sq_left += 2.0 * counts[c] + 1.0
            sq_right -= 2.0 * (totals[c] - counts[c]) - 1.0
            counts[c] += 1.0
            a = vals[order[t]]
            b = vals[order[t + 1]]
            if a == b:
                continue
            n_left = t + 1.0
            imp = m - sq_left / n_left - sq_right / (m - n_left)
            if imp < best:
                best = imp
                best_f = f
                thr = 0.5 * (a + b)
                if thr >= b:
                    thr = a
                best_thr = thr
    return best_f, best_thr


@njit(cache=True)
def _sample_features(n_feat, k, buf):
    # partial Fisher-Yates on buf, first k entries sorted
    for i in range(n_feat):
        buf[i] = i
    for i in range(k):
        j = i + np.random.randint(0, n_feat - i)
        tmp = buf[i]
        buf[i] = buf[j]
        buf[j] = tmp
    return np.sort(buf[:k])


@njit(cache=True)
def grow_gini_tree(X, y, rows, class_count, max_depth, k_feat, seed, min_samples_split):
    """Depth-first gini tree on ``X[rows]``; ``max_depth < 0`` means unbounded.

    Nodes are numbered in creation order with the left child expanded first.
    A fresh sorted subset of ``k_feat`` features is drawn at every node.
    Returns (feature, threshold, left, right, value, depth).
    """
    np.random.seed(seed)
    n, n_feat = X.shape
    m = rows.shape[0]
    cap = 2 * m + 1
    feature = np.full(cap, LEAF, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, LEAF, dtype=np.int64)
    right = np.full(cap, LEAF, dtype=np.int64)
    value = np.zeros((cap, class_count))
    # each stack entry owns the slice [start, stop) of `work`
    work = rows.copy()
    scratch = np.empty(m, dtype=rows.dtype)
    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_stop = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    buf = np.empty(n_feat, dtype=np.int64)
    all_feats = np.arange(n_feat)
    n_nodes = 1
    top = 0
    st_node[0], st_start[0], st_stop[0], st_depth[0] = 0, 0, m, 0
    deepest = 0
    while top >= 0:
        node = st_node[top]
        start = st_start[top]
        stop = st_stop[top]
        depth = st_depth[top]
        top -= 1
        if depth > deepest:
            deepest = depth
        idx = work[start:stop]
        size = stop - start
        pure = True
        for i in range(size):
            value[node, y[idx[i]]] += 1.0
            if y[idx[i]] != y[idx[0]]:
                pure = False
        for c in range(class_count):
            value[node, c] /= size
        if pure or size < min_samples_split or (max_depth >= 0 and depth >= max_depth):
            continue
        if k_feat < n_feat:
            feats = _sample_features(n_feat, k_feat, buf)
        else:
            feats = all_feats
        f, thr = best_gini_split(X, idx, y, feats, class_count)
        if f < 0:
            continue
        n_left = 0
        n_right = 0
        for i in range(size):
            r = idx[i]
            if X[r, f] <= thr:
                work[start + n_left] = r
                n_left += 1
            else:
                scratch[n_right] = r
                n_right += 1
        for i in range(n_right):
            work[start + n_left + i] = scratch[i]
        feature[node] = f
        threshold[node] = thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        n_nodes += 2
        # push right first so the left subtree is expanded next
        top += 1
        st_node[top], st_start[top], st_stop[top], st_depth[top] = (
            right[node], start + n_left, stop, depth + 1)
        top += 1
        st_node[top], st_start[top], st_stop[top], st_depth[top] = (
            left[node], start, start + n_left, depth + 1)
    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], deepest)


@njit(cache=True)
def forest_votes(X, feature, threshold, left, right, leaf_class, class_count):
    """Per-row vote counts of a forest packed into (n_trees, max_nodes) arrays."""
    n = X.shape[0]
    votes = np.zeros((n, class_count))
    for i in range(n):
        for t in range(feature.shape[0]):
            v = 0
            while feature[t, v] != LEAF:
                if X[i, feature[t, v]] <= threshold[t, v]:
                    v = left[t, v]
                else:
                    v = right[t, v]
            votes[i, leaf_class[t, v]] += 1.0
    return votes
