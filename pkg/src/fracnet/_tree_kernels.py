"""Numba kernels for CART regression trees.

Trees are stored as flat arrays (feature index, threshold, left/right child,
leaf value); -1 in the feature array marks a leaf. Split search is greedy
best-first by sum-of-squared-error reduction with thresholds at midpoints
between consecutive distinct sorted values. Candidate features are drawn
as a seeded random subset per node and scanned in ascending column order,
so exact gain ties resolve to the lowest column index.
"""

import numba as nb
import numpy as np

LEAF = -1
NO_DEPTH_LIMIT = 1 << 30


@nb.njit(cache=True, nogil=True)
def build_tree(x, y, sample_idx, max_depth, max_features, min_samples_split,
               min_samples_leaf, feature_seed):
    """Grow one CART regression tree on x[sample_idx], y[sample_idx].

    Returns (feature, threshold, left, right, value, n_samples) arrays
    truncated to the number of nodes actually built.
    """
    np.random.seed(feature_seed)
    n = sample_idx.shape[0]
    p = x.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, LEAF, np.int32)
    threshold = np.zeros(cap, np.float64)
    left = np.full(cap, LEAF, np.int32)
    right = np.full(cap, LEAF, np.int32)
    value = np.zeros(cap, np.float64)
    n_samples = np.zeros(cap, np.int32)
    idx = sample_idx.copy()
    # explicit DFS stack: (node id, start, end, depth)
    stack = np.zeros((cap, 4), np.int64)
    stack[0] = (0, 0, n, 0)
    top = 1
    n_nodes = 1
    feat_pool = np.arange(p)
    while top > 0:
        top -= 1
        node, start, end, depth = stack[top]
        m = end - start
        s1 = 0.0
        s2 = 0.0
        ylo = y[idx[start]]
        yhi = ylo
        for i in range(start, end):
            yi = y[idx[i]]
            s1 += yi
            s2 += yi * yi
            if yi < ylo:
                ylo = yi
            if yi > yhi:
                yhi = yi
        mean = s1 / m
        value[node] = mean
        n_samples[node] = m
        node_sse = s2 - s1 * s1 / m
        # ylo == yhi is the exact purity test; node_sse can carry float dust
        if depth >= max_depth or m < min_samples_split or ylo == yhi \
                or node_sse <= 0.0:
            continue
        # seeded candidate subset, scanned in ascending column order
        for i in range(max_features):
            j = i + np.random.randint(0, p - i)
            feat_pool[i], feat_pool[j] = feat_pool[j], feat_pool[i]
        cand = np.sort(feat_pool[:max_features])
        best_gain = 0.0
        best_feat = -1
        best_thr = 0.0
        vals = np.empty(m, np.float64)
        ysort = np.empty(m, np.float64)
        for ci in range(max_features):
            f = cand[ci]
            for i in range(m):
                vals[i] = x[idx[start + i], f]
            order = np.argsort(vals)
            prev = vals[order[0]]
            for i in range(m):
                ysort[i] = y[idx[start + order[i]]]
            # scan split positions between distinct values
            acc1 = 0.0
            acc2 = 0.0
            for k in range(1, m):
                yk = ysort[k - 1]
                acc1 += yk
                acc2 += yk * yk
                vk = vals[order[k]]
                if vk == prev:
                    continue
                if k >= min_samples_leaf and (m - k) >= min_samples_leaf:
                    sse_l = acc2 - acc1 * acc1 / k
                    sse_r = (s2 - acc2) - (s1 - acc1) * (s1 - acc1) / (m - k)
                    gain = node_sse - sse_l - sse_r
                    if gain > best_gain:
                        best_gain = gain
                        best_feat = f
                        best_thr = 0.5 * (prev + vk)
                prev = vk
        if best_feat < 0:
            continue
        # stable partition of idx[start:end] by the chosen split
        left_buf = np.empty(m, np.int64)
        right_buf = np.empty(m, np.int64)
        nl = 0
        nr = 0
        for i in range(start, end):
            if x[idx[i], best_feat] <= best_thr:
                left_buf[nl] = idx[i]
                nl += 1
            else:
                right_buf[nr] = idx[i]
                nr += 1
        for i in range(nl):
            idx[start + i] = left_buf[i]
        for i in range(nr):
            idx[start + nl + i] = right_buf[i]
        feature[node] = best_feat
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack[top] = (n_nodes, start, start + nl, depth + 1)
        top += 1
        stack[top] = (n_nodes + 1, start + nl, end, depth + 1)
        top += 1
        n_nodes += 2
    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes],
            right[:n_nodes], value[:n_nodes], n_samples[:n_nodes])


@nb.njit(cache=True, nogil=True)
def predict_tree(feature, threshold, left, right, value, x, row_idx, out):
    """Route rows x[row_idx] through one tree, writing into out."""
    for r in range(row_idx.shape[0]):
        i = row_idx[r]
        node = 0
        while feature[node] != LEAF:
            if x[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = value[node]


@nb.njit(cache=True, nogil=True)
def predict_tree_permuted(feature, threshold, left, right, value, x, row_idx,
                          perm_col, perm_values, out):
    """predict_tree with one column virtually replaced by perm_values."""
    for r in range(row_idx.shape[0]):
        i = row_idx[r]
        node = 0
        while feature[node] != LEAF:
            f = feature[node]
            v = perm_values[r] if f == perm_col else x[i, f]
            if v <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = value[node]
