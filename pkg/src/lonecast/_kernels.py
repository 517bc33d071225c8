"""Compiled inner loops for tree growth, routing and TreeSHAP.

Trees are stored as flat parallel arrays in preorder: ``feature`` is -1 on
leaves, ``left``/``right`` hold child node ids (-1 on leaves), ``cover`` is
the bootstrap-weighted training count reaching the node and ``value`` is the
class-1 fraction (meaningful on leaves, kept on internal nodes too).

A forest concatenates its trees; ``offsets[i]`` is the first node of tree i
and child ids are local to their tree.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True)
def _next_u64(state):
    # splitmix64; state is a length-1 uint64 array
    state[0] = state[0] + _GOLDEN
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _randbelow(state, n):
    return np.int64(_next_u64(state) % np.uint64(n))


@njit(cache=True)
def _sort_pairs(keys, idx, n):
    """In-place ascending sort of ``keys[:n]`` carrying ``idx`` along."""
    # explicit-stack quicksort, insertion sort below 16 elements
    stack = np.empty(128, np.int64)
    top = 0
    lo = 0
    hi = n - 1
    while True:
        if hi - lo < 16:
            for i in range(lo + 1, hi + 1):
                k = keys[i]
                v = idx[i]
                j = i - 1
                while j >= lo and keys[j] > k:
                    keys[j + 1] = keys[j]
                    idx[j + 1] = idx[j]
                    j -= 1
                keys[j + 1] = k
                idx[j + 1] = v
            if top == 0:
                break
            top -= 2
            lo = stack[top]
            hi = stack[top + 1]
            continue
        mid = (lo + hi) >> 1
        # median of three into keys[mid]
        if keys[mid] < keys[lo]:
            keys[mid], keys[lo] = keys[lo], keys[mid]
            idx[mid], idx[lo] = idx[lo], idx[mid]
        if keys[hi] < keys[lo]:
            keys[hi], keys[lo] = keys[lo], keys[hi]
            idx[hi], idx[lo] = idx[lo], idx[hi]
        if keys[hi] < keys[mid]:
            keys[hi], keys[mid] = keys[mid], keys[hi]
            idx[hi], idx[mid] = idx[mid], idx[hi]
        pivot = keys[mid]
        i = lo
        j = hi
        while i <= j:
            while keys[i] < pivot:
                i += 1
            while keys[j] > pivot:
                j -= 1
            if i <= j:
                keys[i], keys[j] = keys[j], keys[i]
                idx[i], idx[j] = idx[j], idx[i]
                i += 1
                j -= 1
        # recurse into the smaller side first to bound the stack
        if j - lo < hi - i:
            stack[top] = i
            stack[top + 1] = hi
            top += 2
            hi = j
        else:
            stack[top] = lo
            stack[top + 1] = j
            top += 2
            lo = i


@njit(cache=True, nogil=True)
def grow_tree(XT, weight, pos_weight, samples, mtry, max_depth, min_samples_split, seed):
    """Grow one CART tree on the rows listed in ``samples``.

    ``weight`` is the in-bag multiplicity of each row and ``pos_weight`` the
    part of it carrying label 1 (identical rows are merged upstream, so a
    row may hold both classes). Every listed row must have positive weight.
    ``XT`` is feature-major (features x rows) so per-feature gathers stay in
    cache. Returns the node arrays trimmed to the used size.
    """
    n_features = XT.shape[0]
    n = samples.shape[0]
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    cover = np.zeros(cap, np.float64)
    value = np.zeros(cap, np.float64)

    rng = np.empty(1, np.uint64)
    rng[0] = np.uint64(seed)
    feat_pool = np.arange(n_features)
    buf = np.empty(n, np.int64)
    vals = np.empty(n, np.float64)
    order = np.empty(n, np.int64)
    ww = np.empty(n, np.float64)
    wy = np.empty(n, np.float64)

    # stack of (start, end, depth, parent, is_left)
    stack = np.empty((cap, 5), np.int64)
    top = 0
    stack[0, 0] = 0
    stack[0, 1] = n
    stack[0, 2] = 0
    stack[0, 3] = -1
    stack[0, 4] = 0
    top = 1
    n_nodes = 0

    while top > 0:
        top -= 1
        start = stack[top, 0]
        end = stack[top, 1]
        depth = stack[top, 2]
        parent = stack[top, 3]
        is_left = stack[top, 4]

        node = n_nodes
        n_nodes += 1
        if parent >= 0:
            if is_left == 1:
                left[parent] = node
            else:
                right[parent] = node

        w_tot = 0.0
        w_pos = 0.0
        for k in range(start, end):
            s = samples[k]
            w_tot += weight[s]
            w_pos += pos_weight[s]
        cover[node] = w_tot
        value[node] = w_pos / w_tot

        if depth >= max_depth or w_tot < min_samples_split or w_pos == 0.0 or w_pos == w_tot:
            continue
        m = end - start
        if m == 1:
            continue

        # partial Fisher-Yates draw of mtry features without replacement
        for k in range(mtry):
            j = k + _randbelow(rng, n_features - k)
            tmp = feat_pool[k]
            feat_pool[k] = feat_pool[j]
            feat_pool[j] = tmp

        best_score = np.inf
        best_f = -1
        best_thr = 0.0
        for k in range(mtry):
            f = feat_pool[k]
            vmin = np.inf
            vmax = -np.inf
            for q in range(m):
                s = samples[start + q]
                v = XT[f, s]
                vals[q] = v
                order[q] = s
                if v < vmin:
                    vmin = v
                if v > vmax:
                    vmax = v
            if vmin == vmax:
                continue
            _sort_pairs(vals, order, m)
            for q in range(m):
                s = order[q]
                ww[q] = weight[s]
                wy[q] = pos_weight[s]
            wl = 0.0
            wl_pos = 0.0
            for q in range(m - 1):
                wl += ww[q]
                wl_pos += wy[q]
                lo = vals[q]
                hi = vals[q + 1]
                if lo == hi:
                    continue
                wr = w_tot - wl
                wr_pos = w_pos - wl_pos
                wl_neg = wl - wl_pos
                wr_neg = wr - wr_pos
                score = (wl - (wl_pos * wl_pos + wl_neg * wl_neg) / wl) + (
                    wr - (wr_pos * wr_pos + wr_neg * wr_neg) / wr
                )
                thr = 0.5 * (lo + hi)
                if thr >= hi:
                    thr = lo
                if score < best_score or (score == best_score and f < best_f):
                    best_score = score
                    best_f = f
                    best_thr = thr

        if best_f < 0:
            continue

        # stable partition of the node's rows
        nl = 0
        for q in range(start, end):
            s = samples[q]
            if XT[best_f, s] <= best_thr:
                buf[nl] = s
                nl += 1
        nr = nl
        for q in range(start, end):
            s = samples[q]
            if not XT[best_f, s] <= best_thr:
                buf[nr] = s
                nr += 1
        for q in range(m):
            samples[start + q] = buf[q]

        feature[node] = best_f
        threshold[node] = best_thr
        # right pushed first so the left subtree is numbered next (preorder)
        stack[top, 0] = start + nl
        stack[top, 1] = end
        stack[top, 2] = depth + 1
        stack[top, 3] = node
        stack[top, 4] = 0
        top += 1
        stack[top, 0] = start
        stack[top, 1] = start + nl
        stack[top, 2] = depth + 1
        stack[top, 3] = node
        stack[top, 4] = 1
        top += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        cover[:n_nodes].copy(),
        value[:n_nodes].copy(),
    )


@njit(cache=True)
def predict_forest(X, offsets, feature, threshold, left, right, value):
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    out = np.zeros(n, np.float64)
    for i in range(n):
        acc = 0.0
        for t in range(n_trees):
            base = offsets[t]
            node = 0
            while feature[base + node] >= 0:
                if X[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            acc += value[base + node]
        out[i] = acc / n_trees
    return out


@njit(cache=True)
def leaf_indices(X, offsets, feature, threshold, left, right):
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    out = np.empty((n, n_trees), np.int64)
    for i in range(n):
        for t in range(n_trees):
            base = offsets[t]
            node = 0
            while feature[base + node] >= 0:
                if X[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            out[i, t] = node
    return out


# ---------------------------------------------------------------------------
# TreeSHAP (path-dependent): the unique-path bookkeeping of the polynomial
# algorithm. Path element slots live in a preallocated pool; each recursion
# level copies its parent's path into a fresh slice of the pool.


@njit(cache=True)
def _extend_path(pf, pz, po, pw, off, depth, zero_fraction, one_fraction, feature_index):
    pf[off + depth] = feature_index
    pz[off + depth] = zero_fraction
    po[off + depth] = one_fraction
    pw[off + depth] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        pw[off + i + 1] += one_fraction * pw[off + i] * (i + 1) / (depth + 1)
        pw[off + i] = zero_fraction * pw[off + i] * (depth - i) / (depth + 1)


@njit(cache=True)
def _unwind_path(pf, pz, po, pw, off, depth, path_index):
    one_fraction = po[off + path_index]
    zero_fraction = pz[off + path_index]
    next_one_portion = pw[off + depth]
    for i in range(depth - 1, -1, -1):
        if one_fraction != 0.0:
            tmp = pw[off + i]
            pw[off + i] = next_one_portion * (depth + 1) / ((i + 1) * one_fraction)
            next_one_portion = tmp - pw[off + i] * zero_fraction * (depth - i) / (depth + 1)
        else:
            pw[off + i] = (pw[off + i] * (depth + 1)) / (zero_fraction * (depth - i))
    for i in range(path_index, depth):
        pf[off + i] = pf[off + i + 1]
        pz[off + i] = pz[off + i + 1]
        po[off + i] = po[off + i + 1]


@njit(cache=True)
def _unwound_path_sum(pf, pz, po, pw, off, depth, path_index):
    one_fraction = po[off + path_index]
    zero_fraction = pz[off + path_index]
    next_one_portion = pw[off + depth]
    total = 0.0
    for i in range(depth - 1, -1, -1):
        if one_fraction != 0.0:
            tmp = next_one_portion * (depth + 1) / ((i + 1) * one_fraction)
            total += tmp
            next_one_portion = pw[off + i] - tmp * zero_fraction * ((depth - i) / (depth + 1))
        else:
            total += (pw[off + i] / zero_fraction) / ((depth - i) / (depth + 1))
    return total


@njit(cache=True)
def _tree_shap_iter(x, base, feature, threshold, left, right, cover, value, phi, max_depth):
    """Iterative form of the recursive TreeSHAP walk for one tree.

    Each frame owns a path slice of length ``max_depth + 2``; frames are
    processed depth-first so at most ``max_depth + 2`` slices are live.
    """
    slot = max_depth + 2
    n_frames = max_depth + 3
    pf = np.empty(slot * n_frames, np.int64)
    pz = np.empty(slot * n_frames, np.float64)
    po = np.empty(slot * n_frames, np.float64)
    pw = np.empty(slot * n_frames, np.float64)

    # frame stack: node, depth, parent frame, zero_fraction, one_fraction, feature
    st_node = np.empty(2 * n_frames + 2, np.int64)
    st_depth = np.empty(2 * n_frames + 2, np.int64)
    st_parent = np.empty(2 * n_frames + 2, np.int64)
    st_level = np.empty(2 * n_frames + 2, np.int64)
    st_z = np.empty(2 * n_frames + 2, np.float64)
    st_o = np.empty(2 * n_frames + 2, np.float64)
    st_f = np.empty(2 * n_frames + 2, np.int64)

    top = 0
    st_node[0] = 0
    st_depth[0] = 0
    st_parent[0] = -1
    st_level[0] = 0
    st_z[0] = 1.0
    st_o[0] = 1.0
    st_f[0] = -1
    top = 1

    while top > 0:
        top -= 1
        node = st_node[top]
        depth = st_depth[top]
        parent_off = st_parent[top]
        level = st_level[top]
        off = level * slot
        if parent_off >= 0:
            for i in range(depth):
                pf[off + i] = pf[parent_off + i]
                pz[off + i] = pz[parent_off + i]
                po[off + i] = po[parent_off + i]
                pw[off + i] = pw[parent_off + i]
        _extend_path(pf, pz, po, pw, off, depth, st_z[top], st_o[top], st_f[top])

        g = base + node
        if feature[g] < 0:
            for i in range(1, depth + 1):
                w = _unwound_path_sum(pf, pz, po, pw, off, depth, i)
                phi[pf[off + i]] += w * (po[off + i] - pz[off + i]) * value[g]
            continue

        split = feature[g]
        if x[split] <= threshold[g]:
            hot = left[g]
            cold = right[g]
        else:
            hot = right[g]
            cold = left[g]
        w_node = cover[g]
        hot_zero = cover[base + hot] / w_node
        cold_zero = cover[base + cold] / w_node
        inc_zero = 1.0
        inc_one = 1.0
        path_index = 0
        while path_index <= depth:
            if pf[off + path_index] == split:
                break
            path_index += 1
        d = depth
        if path_index != depth + 1:
            inc_zero = pz[off + path_index]
            inc_one = po[off + path_index]
            _unwind_path(pf, pz, po, pw, off, d, path_index)
            d -= 1
        # Both children copy this frame's unwound path. Each child gets slice
        # level + 1; the cold sibling is popped only after the whole hot
        # subtree is done, and nothing in that subtree writes to this slice.
        st_node[top] = cold
        st_depth[top] = d + 1
        st_parent[top] = off
        st_level[top] = level + 1
        st_z[top] = cold_zero * inc_zero
        st_o[top] = 0.0
        st_f[top] = split
        top += 1
        st_node[top] = hot
        st_depth[top] = d + 1
        st_parent[top] = off
        st_level[top] = level + 1
        st_z[top] = hot_zero * inc_zero
        st_o[top] = inc_one
        st_f[top] = split
        top += 1


@njit(cache=True, nogil=True)
def shap_forest(X, offsets, depths, feature, threshold, left, right, cover, value):
    """Per-tree TreeSHAP averaged over trees, for every row of ``X``."""
    n, d = X.shape
    n_trees = offsets.shape[0] - 1
    out = np.zeros((n, d), np.float64)
    for i in range(n):
        for t in range(n_trees):
            _tree_shap_iter(
                X[i], offsets[t], feature, threshold, left, right, cover, value, out[i], depths[t]
            )
        for j in range(d):
            out[i, j] /= n_trees
    return out


@njit(cache=True)
def tree_depths(offsets, left, right):
    n_trees = offsets.shape[0] - 1
    out = np.zeros(n_trees, np.int64)
    for t in range(n_trees):
        base = offsets[t]
        size = offsets[t + 1] - base
        depth = np.zeros(size, np.int64)
        best = 0
        # preorder: a node's parent always precedes it
        for node in range(size):
            if left[base + node] >= 0:
                depth[left[base + node]] = depth[node] + 1
                depth[right[base + node]] = depth[node] + 1
                if depth[node] + 1 > best:
                    best = depth[node] + 1
        out[t] = best
    return out
