"""Compiled tree growing and traversal.

Trees are grown on binned codes with squared-error splits. A split of a
node with ``n`` rows into ``(nL, nR)`` has gain ``nL*nR/n * (meanL - meanR)^2``,
the reduction in the sum of squared deviations. Candidate splits are scanned
feature by feature, bin by bin, and only a strictly larger gain replaces the
incumbent, so ties resolve to the lowest feature and then the lowest bin.
"""
from __future__ import annotations

import numpy as np
from numba import njit

BEST_FIRST = 0
BREADTH_FIRST = 1
DEPTH_FIRST = 2

# means closer than this (relative) are treated as equal: no split
MEAN_RTOL = 1e-10


@njit(cache=True, nogil=True)
def _split_gain(s_left, c_left, total, n):
    c_right = n - c_left
    m_l = s_left / c_left
    m_r = (total - s_left) / c_right
    d = m_l - m_r
    if abs(d) <= MEAN_RTOL * (abs(m_l) + abs(m_r)):
        return 0.0
    return c_left * c_right / n * d * d


@njit(cache=True, nogil=True)
def find_split(codes, target, rows, start, end, n_bins, min_leaf, hsum, hcnt, keys):
    """Best ``(feature, bin, gain)`` for rows[start:end]; feature is -1 when nothing splits."""
    n = end - start
    best_f = -1
    best_b = -1
    best_g = 0.0
    if n < 2 * min_leaf or n < 2:
        return best_f, best_b, best_g
    n_feat = codes.shape[1]
    total = 0.0
    for k in range(start, end):
        total += target[rows[k]]

    max_nb = hsum.shape[1]
    if n * 4 < max_nb:
        # few rows relative to bins: sort the node's codes instead of histogramming
        sub = keys[:n]
        for f in range(n_feat):
            if n_bins[f] < 2:
                continue
            for k in range(n):
                sub[k] = codes[rows[start + k], f]
            order = np.argsort(sub, kind="mergesort")
            s_left = 0.0
            c_left = 0
            for k in range(n - 1):
                idx = order[k]
                s_left += target[rows[start + idx]]
                c_left += 1
                code = sub[idx]
                if sub[order[k + 1]] == code:
                    continue
                if c_left < min_leaf:
                    continue
                if n - c_left < min_leaf:
                    break
                g = _split_gain(s_left, c_left, total, n)
                if g > best_g:
                    best_g = g
                    best_f = f
                    best_b = code
        return best_f, best_b, best_g

    hsum[:, :] = 0.0
    hcnt[:, :] = 0
    for k in range(start, end):
        r = rows[k]
        t = target[r]
        for f in range(n_feat):
            c = codes[r, f]
            hsum[f, c] += t
            hcnt[f, c] += 1
    for f in range(n_feat):
        s_left = 0.0
        c_left = 0
        for b in range(n_bins[f] - 1):
            cnt = hcnt[f, b]
            if cnt == 0:
                continue
            s_left += hsum[f, b]
            c_left += cnt
            if c_left < min_leaf:
                continue
            if n - c_left < min_leaf:
                break
            g = _split_gain(s_left, c_left, total, n)
            if g > best_g:
                best_g = g
                best_f = f
                best_b = b
    return best_f, best_b, best_g


@njit(cache=True, nogil=True)
def _node_mean(target, rows, start, end):
    s = 0.0
    for k in range(start, end):
        s += target[rows[k]]
    return s / (end - start)


@njit(cache=True, nogil=True)
def grow_tree(codes, target, rows, n_bins, max_depth, max_leaves, min_leaf, mode):
    """Grow one regression tree over ``rows`` (permuted in place).

    ``max_depth``/``max_leaves`` < 0 mean unlimited. Returns node arrays
    ``(feature, bin, left, right, value, gain, count, start, end)`` with
    tree-local child indices (-1 marks a leaf); ``rows[start[i]:end[i]]``
    are the rows reaching node ``i``.
    """
    m = rows.size
    cap = 2 * m + 1
    feature = np.full(cap, -1, dtype=np.int32)
    split_bin = np.full(cap, -1, dtype=np.int32)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    value = np.zeros(cap)
    gain = np.zeros(cap)
    count = np.zeros(cap, dtype=np.int64)
    start = np.zeros(cap, dtype=np.int64)
    end = np.zeros(cap, dtype=np.int64)
    depth = np.zeros(cap, dtype=np.int64)
    cand_f = np.full(cap, -1, dtype=np.int32)
    cand_b = np.full(cap, -1, dtype=np.int32)
    cand_g = np.zeros(cap)

    n_feat = codes.shape[1]
    max_nb = 2
    for f in range(n_feat):
        if n_bins[f] > max_nb:
            max_nb = n_bins[f]
    hsum = np.zeros((n_feat, max_nb))
    hcnt = np.zeros((n_feat, max_nb), dtype=np.int64)
    keys = np.empty(m, dtype=np.int64)
    scratch = np.empty(m, dtype=rows.dtype)
    queue = np.empty(cap, dtype=np.int64)
    qhead = 0
    qtail = 0

    start[0] = 0
    end[0] = m
    count[0] = m
    value[0] = _node_mean(target, rows, 0, m)
    n_nodes = 1
    if max_depth != 0:
        f, b, g = find_split(codes, target, rows, 0, m, n_bins, min_leaf, hsum, hcnt, keys)
        if f >= 0:
            cand_f[0] = f
            cand_b[0] = b
            cand_g[0] = g
            queue[qtail] = 0
            qtail += 1

    leaves = 1
    while qtail > qhead:
        if max_leaves > 0 and leaves >= max_leaves:
            break
        if mode == BEST_FIRST:
            pick = qhead
            for q in range(qhead + 1, qtail):
                if cand_g[queue[q]] > cand_g[queue[pick]]:
                    pick = q
            node = queue[pick]
            for q in range(pick, qtail - 1):
                queue[q] = queue[q + 1]
            qtail -= 1
        elif mode == BREADTH_FIRST:
            node = queue[qhead]
            qhead += 1
        else:
            qtail -= 1
            node = queue[qtail]

        f = cand_f[node]
        b = cand_b[node]
        s = start[node]
        e = end[node]
        wl = s
        wr = 0
        for k in range(s, e):
            r = rows[k]
            if codes[r, f] <= b:
                rows[wl] = r
                wl += 1
            else:
                scratch[wr] = r
                wr += 1
        for k in range(wr):
            rows[wl + k] = scratch[k]

        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        feature[node] = f
        split_bin[node] = b
        left[node] = lc
        right[node] = rc
        gain[node] = cand_g[node]
        leaves += 1

        start[lc] = s
        end[lc] = wl
        start[rc] = wl
        end[rc] = e
        for child in (lc, rc):
            depth[child] = depth[node] + 1
            count[child] = end[child] - start[child]
            value[child] = _node_mean(target, rows, start[child], end[child])

        # depth-first pops from the tail, so push the right child first
        if mode == DEPTH_FIRST:
            first, second = rc, lc
        else:
            first, second = lc, rc
        for child in (first, second):
            if max_depth >= 0 and depth[child] >= max_depth:
                continue
            cf, cb, cg = find_split(codes, target, rows, start[child], end[child],
                                    n_bins, min_leaf, hsum, hcnt, keys)
            if cf >= 0:
                cand_f[child] = cf
                cand_b[child] = cb
                cand_g[child] = cg
                queue[qtail] = child
                qtail += 1

    return (feature[:n_nodes], split_bin[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], gain[:n_nodes], count[:n_nodes], start[:n_nodes], end[:n_nodes])


@njit(cache=True, nogil=True)
def add_tree(x, feature, threshold, left, right, value, weight, out):
    """``out += weight * tree(x)`` for one tree (local indices)."""
    for i in range(x.shape[0]):
        node = 0
        while left[node] >= 0:
            if x[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] += weight * value[node]


@njit(cache=True, nogil=True)
def predict_ensemble(x, feature, threshold, left, right, value, offsets, base, weight):
    n_trees = offsets.size - 1
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        acc = base
        for t in range(n_trees):
            off = offsets[t]
            node = 0
            while left[off + node] >= 0:
                if x[i, feature[off + node]] <= threshold[off + node]:
                    node = left[off + node]
                else:
                    node = right[off + node]
            acc += weight * value[off + node]
        out[i] = acc
    return out


@njit(cache=True, nogil=True)
def apply_leaves(rows, start, end, left, value, weight, out):
    """``out[r] += weight * leaf value`` for the training rows held by each leaf."""
    for node in range(left.size):
        if left[node] < 0:
            v = weight * value[node]
            for k in range(start[node], end[node]):
                out[rows[k]] += v
