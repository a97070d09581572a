"""Numba kernels for tree growth and evaluation.

Everything here is deterministic given the seed passed in: the only RNG is an
in-kernel splitmix64 stream (matching :mod:`gcforest.rng`), kernels release
the GIL, and no kernel mutates its inputs, so trees may be grown/evaluated
from any number of threads with identical results.

Tree encoding (shared with :mod:`gcforest.trees`): parallel arrays in
pre-order; ``feature[i] < 0`` marks a leaf, in which case ``left[i]`` is the
row of that leaf in the ``leaf_counts`` matrix. Routing rule: go left iff
value <= threshold.
"""

from __future__ import annotations

import numpy as np
from numba import njit, uint64

KIND_GINI = 0
KIND_COMPLETELY_RANDOM = 1

# Minimum impurity decrease for a gini split to count as a positive gain.
# True gains are rationals with denominator <= n**3, far above this for any
# node a test will ever check; float rounding noise sits far below it.
_GAIN_EPS = 1e-12

_U64_GOLDEN = uint64(0x9E3779B97F4A7C15)
_U64_MIX1 = uint64(0xBF58476D1CE4E5B9)
_U64_MIX2 = uint64(0x94D049BB133111EB)
_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53


@njit(cache=True, nogil=True, inline="always")
def _rng_next(state):
    """Advance a one-element uint64 state array; return the next output."""
    state[0] = state[0] + _U64_GOLDEN
    z = state[0]
    z = (z ^ (z >> uint64(30))) * _U64_MIX1
    z = (z ^ (z >> uint64(27))) * _U64_MIX2
    return z ^ (z >> uint64(31))


@njit(cache=True, nogil=True, inline="always")
def _rng_uniform(state):
    """Uniform float64 in [0, 1)."""
    return float(_rng_next(state) >> uint64(11)) * _INV_2_53


@njit(cache=True, nogil=True, inline="always")
def _rng_below(state, n):
    """Uniform integer in [0, n); modulo bias is negligible for n << 2**64."""
    return int(_rng_next(state) % uint64(n))


@njit(cache=True, nogil=True)
def rng_stream(seed, count):
    """First ``count`` outputs of the in-kernel stream (for cross-checks)."""
    state = np.empty(1, np.uint64)
    state[0] = seed
    out = np.empty(count, np.uint64)
    for i in range(count):
        out[i] = _rng_next(state)
    return out


@njit(cache=True, nogil=True)
def _random_split_try(X, idx, start, end, feat_order, state):
    """Completely-random split: uniform feature among those non-constant on
    the node, threshold uniform in that feature's (min, max) over the node.

    Walks ``feat_order`` with an incremental Fisher-Yates shuffle, so the
    first non-constant feature encountered is uniform among all non-constant
    ones. Returns (-1, 0.0) when every feature is constant.
    """
    d = feat_order.shape[0]
    for pos in range(d):
        j = pos + _rng_below(state, d - pos)
        tmp = feat_order[pos]
        feat_order[pos] = feat_order[j]
        feat_order[j] = tmp
        f = feat_order[pos]
        vmin = X[idx[start], f]
        vmax = vmin
        for r in range(start + 1, end):
            v = X[idx[r], f]
            if v < vmin:
                vmin = v
            elif v > vmax:
                vmax = v
        if vmax > vmin:
            thr = vmin + _rng_uniform(state) * (vmax - vmin)
            # Guard rounding at the top end; '<= goes left' then still sends
            # at least one instance each way.
            if thr >= vmax:
                thr = vmin
            return f, thr
    return -1, 0.0


@njit(cache=True, nogil=True)
def _gini_split_search(X, y, idx, start, end, cand, ncand, counts, cl, cr):
    """Best gini split over ``cand[:ncand]`` (ascending feature indices).

    Thresholds are midpoints between consecutive distinct sorted values.
    Equal gains are resolved to the lowest feature index, then the lowest
    threshold, by scanning features/thresholds in ascending order and only
    accepting strict improvements.

    Returns (feature, threshold, gain); feature == -1 when no candidate split
    has positive gain.
    """
    m = end - start
    n_classes = counts.shape[0]
    s_parent = 0.0
    for c in range(n_classes):
        s_parent += float(counts[c]) * float(counts[c])
    parent_score = s_parent / m

    best_score = parent_score
    best_f = -1
    best_thr = 0.0
    vals = np.empty(m, np.float64)
    for ci in range(ncand):
        f = cand[ci]
        for j in range(m):
            vals[j] = X[idx[start + j], f]
        order = np.argsort(vals)
        if vals[order[0]] == vals[order[m - 1]]:
            continue  # constant on this node
        for c in range(n_classes):
            cl[c] = 0
            cr[c] = counts[c]
        s_left = 0
        s_right = 0
        for c in range(n_classes):
            s_right += int(counts[c]) * int(counts[c])
        for j in range(m - 1):
            c = y[idx[start + order[j]]]
            cl[c] += 1
            s_left += 2 * cl[c] - 1
            s_right -= 2 * cr[c] - 1
            cr[c] -= 1
            vj = vals[order[j]]
            vj1 = vals[order[j + 1]]
            if vj < vj1:
                n_left = j + 1
                score = float(s_left) / n_left + float(s_right) / (m - n_left)
                if score > best_score:
                    best_score = score
                    best_f = f
                    best_thr = 0.5 * (vj + vj1)
    gain = (best_score - parent_score) / m
    if best_f >= 0 and gain > _GAIN_EPS:
        return best_f, best_thr, gain
    return -1, 0.0, 0.0


@njit(cache=True, nogil=True)
def grow_tree_arrays(X, y, rows, n_classes, kind, mtry, depth_cap, bootstrap, seed):
    """Grow one tree; return (feature, threshold, left, right, leaf_counts).

    Nodes are emitted in pre-order. ``depth_cap < 0`` means unlimited. When
    ``bootstrap`` is set, the training sample is ``rows.size`` draws with
    replacement from ``rows``, taken from the tree's own stream before any
    split decision.
    """
    n = rows.shape[0]
    d = X.shape[1]
    state = np.empty(1, np.uint64)
    state[0] = seed

    idx = np.empty(n, np.int64)
    if bootstrap:
        for i in range(n):
            idx[i] = rows[_rng_below(state, n)]
    else:
        for i in range(n):
            idx[i] = rows[i]

    max_nodes = 2 * n + 1
    feature = np.empty(max_nodes, np.int32)
    threshold = np.zeros(max_nodes, np.float64)
    left = np.zeros(max_nodes, np.int32)
    right = np.zeros(max_nodes, np.int32)
    leaf_counts = np.zeros((n + 1, n_classes), np.uint32)

    # Work stack of [start, end, depth, parent, is_left] spans over idx.
    stack = np.empty((n + 2, 5), np.int64)
    sp = 0
    stack[sp, 0] = 0
    stack[sp, 1] = n
    stack[sp, 2] = 0
    stack[sp, 3] = -1
    stack[sp, 4] = 0
    sp += 1

    counts = np.zeros(n_classes, np.int64)
    cl = np.zeros(n_classes, np.int64)
    cr = np.zeros(n_classes, np.int64)
    feat_order = np.arange(d)
    cand = np.empty(d, np.int64)
    buf = np.empty(n, np.int64)

    n_nodes = 0
    n_leaves = 0
    while sp > 0:
        sp -= 1
        start = stack[sp, 0]
        end = stack[sp, 1]
        depth = stack[sp, 2]
        parent = stack[sp, 3]
        is_left = stack[sp, 4]

        node = n_nodes
        n_nodes += 1
        if parent >= 0:
            if is_left == 1:
                left[parent] = node
            else:
                right[parent] = node

        m = end - start
        for c in range(n_classes):
            counts[c] = 0
        for r in range(start, end):
            counts[y[idx[r]]] += 1
        pure = False
        for c in range(n_classes):
            if counts[c] == m:
                pure = True
                break

        split_f = -1
        split_thr = 0.0
        if (not pure) and m >= 2 and (depth_cap < 0 or depth < depth_cap):
            if kind == KIND_COMPLETELY_RANDOM:
                split_f, split_thr = _random_split_try(X, idx, start, end, feat_order, state)
            else:
                k = mtry if mtry < d else d
                # Sample k distinct features, then scan them in ascending
                # index order so the tie rule is well defined.
                for pos in range(k):
                    j = pos + _rng_below(state, d - pos)
                    tmp = feat_order[pos]
                    feat_order[pos] = feat_order[j]
                    feat_order[j] = tmp
                    cand[pos] = feat_order[pos]
                cand[:k].sort()
                split_f, split_thr, _ = _gini_split_search(
                    X, y, idx, start, end, cand, k, counts, cl, cr
                )

        if split_f < 0:
            feature[node] = -1
            left[node] = n_leaves
            right[node] = -1
            for c in range(n_classes):
                leaf_counts[n_leaves, c] = np.uint32(counts[c])
            n_leaves += 1
        else:
            feature[node] = split_f
            threshold[node] = split_thr
            # Stable partition: left block keeps <= threshold in order.
            n_left = 0
            n_right = 0
            for r in range(start, end):
                if X[idx[r], split_f] <= split_thr:
                    idx[start + n_left] = idx[r]
                    n_left += 1
                else:
                    buf[n_right] = idx[r]
                    n_right += 1
            for r in range(n_right):
                idx[start + n_left + r] = buf[r]
            mid = start + n_left
            # Push right first so the left subtree is laid out next: pre-order.
            stack[sp, 0] = mid
            stack[sp, 1] = end
            stack[sp, 2] = depth + 1
            stack[sp, 3] = node
            stack[sp, 4] = 0
            sp += 1
            stack[sp, 0] = start
            stack[sp, 1] = mid
            stack[sp, 2] = depth + 1
            stack[sp, 3] = node
            stack[sp, 4] = 1
            sp += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        leaf_counts[:n_leaves].copy(),
    )


@njit(cache=True, nogil=True)
def gini_split_for_rows(X, y, rows, cand_sorted, n_classes):
    """Standalone entry for the best-gini-split contract (no sampling)."""
    n = rows.shape[0]
    idx = np.empty(n, np.int64)
    for i in range(n):
        idx[i] = rows[i]
    counts = np.zeros(n_classes, np.int64)
    for i in range(n):
        counts[y[idx[i]]] += 1
    cl = np.zeros(n_classes, np.int64)
    cr = np.zeros(n_classes, np.int64)
    return _gini_split_search(
        X, y, idx, 0, n, cand_sorted, cand_sorted.shape[0], counts, cl, cr
    )


@njit(cache=True, nogil=True)
def random_split_for_rows(X, rows, seed):
    """Standalone entry for the completely-random split contract."""
    n = rows.shape[0]
    idx = np.empty(n, np.int64)
    for i in range(n):
        idx[i] = rows[i]
    state = np.empty(1, np.uint64)
    state[0] = seed
    feat_order = np.arange(X.shape[1])
    return _random_split_try(X, idx, 0, n, feat_order, state)


@njit(cache=True, nogil=True)
def tree_accumulate(feature, threshold, left, right, leaf_counts, leaf_totals, X, out):
    """Route every row of X, adding the normalized leaf distribution to out.

    Accumulation is per row, so splitting X into row chunks across threads
    changes nothing in the result.
    """
    n = X.shape[0]
    n_classes = out.shape[1]
    for i in range(n):
        node = 0
        f = feature[node]
        while f >= 0:
            if X[i, f] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
            f = feature[node]
        row = left[node]
        total = leaf_totals[row]
        for c in range(n_classes):
            out[i, c] += leaf_counts[row, c] / total


@njit(cache=True, nogil=True)
def tree_apply(feature, threshold, left, right, X):
    """Leaf row index reached by every row of X."""
    n = X.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        node = 0
        f = feature[node]
        while f >= 0:
            if X[i, f] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
            f = feature[node]
        out[i] = left[node]
    return out
