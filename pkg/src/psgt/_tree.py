"""Numba kernels for bagged CART regression trees.

Trees of one forest are stored in flat node arrays. ``left == -1`` marks a
leaf. Randomness comes from a splitmix64 stream keyed by ``(seed, tree
index)``, so each tree is reproducible on its own and independent of the
order in which trees are built.
"""

import numba as nb
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)

NO_DEPTH_LIMIT = 1 << 30


@nb.njit(cache=True)
def _next(state):
    state[0] += _GOLDEN
    z = state[0]
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@nb.njit(cache=True)
def _randint(state, n):
    return np.int64(_next(state) % np.uint64(n))


@nb.njit(cache=True)
def _tree_state(seed, tree):
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed ^ (np.uint64(tree + 1) * _MIX1)
    _next(state)
    return state


@nb.njit(cache=True)
def bootstrap_sample(n, seed, tree):
    """Bootstrap row indices drawn for ``tree`` (size ``n``, with replacement)."""
    state = _tree_state(seed, tree)
    idx = np.empty(n, dtype=np.int64)
    for i in range(n):
        idx[i] = _randint(state, n)
    return idx, state


@nb.njit(cache=True)
def _sort_pairs(keys, vals, n):
    """Sort ``keys[:n]`` ascending in place, permuting ``vals`` alongside."""
    stack = np.empty(128, dtype=np.int64)
    top = 0
    lo = 0
    hi = n - 1
    while True:
        while hi - lo > 16:
            mid = (lo + hi) >> 1
            # median of three moved to hi
            if keys[mid] < keys[lo]:
                keys[mid], keys[lo] = keys[lo], keys[mid]
                vals[mid], vals[lo] = vals[lo], vals[mid]
            if keys[hi] < keys[lo]:
                keys[hi], keys[lo] = keys[lo], keys[hi]
                vals[hi], vals[lo] = vals[lo], vals[hi]
            if keys[mid] < keys[hi]:
                keys[mid], keys[hi] = keys[hi], keys[mid]
                vals[mid], vals[hi] = vals[hi], vals[mid]
            pivot = keys[hi]
            i = lo
            for j in range(lo, hi):
                if keys[j] < pivot:
                    keys[i], keys[j] = keys[j], keys[i]
                    vals[i], vals[j] = vals[j], vals[i]
                    i += 1
            keys[i], keys[hi] = keys[hi], keys[i]
            vals[i], vals[hi] = vals[hi], vals[i]
            # recurse into the smaller side later, loop on the larger
            if i - lo < hi - i:
                stack[top] = i + 1
                stack[top + 1] = hi
                hi = i - 1
            else:
                stack[top] = lo
                stack[top + 1] = i - 1
                lo = i + 1
            top += 2
        for a in range(lo + 1, hi + 1):
            k = keys[a]
            v = vals[a]
            b = a - 1
            while b >= lo and keys[b] > k:
                keys[b + 1] = keys[b]
                vals[b + 1] = vals[b]
                b -= 1
            keys[b + 1] = k
            vals[b + 1] = v
        if top == 0:
            break
        top -= 2
        lo = stack[top]
        hi = stack[top + 1]


@nb.njit(cache=True)
def _grow(X, y, idx, max_depth, min_leaf, mtry, state,
          feature, threshold, left, right, value, base):
    """Grow one tree over rows ``idx`` into node slots starting at ``base``.

    Returns the number of nodes written.
    """
    n = idx.shape[0]
    d = X.shape[1]
    cap = 2 * n + 1
    st_node = np.empty(cap, dtype=np.int64)
    st_lo = np.empty(cap, dtype=np.int64)
    st_hi = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    feats = np.arange(d)
    buf = np.empty(n, dtype=np.int64)
    keys = np.empty(n, dtype=np.float64)
    ys = np.empty(n, dtype=np.float64)

    n_nodes = 1
    top = 0
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = n
    st_depth[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = st_node[top]
        lo = st_lo[top]
        hi = st_hi[top]
        depth = st_depth[top]
        m = hi - lo
        slot = base + node

        total = 0.0
        ymin = np.inf
        ymax = -np.inf
        for i in range(lo, hi):
            v = y[idx[i]]
            total += v
            if v < ymin:
                ymin = v
            if v > ymax:
                ymax = v
        mean = total / m
        # leaf means stay inside the node's target range
        if mean < ymin:
            mean = ymin
        elif mean > ymax:
            mean = ymax
        feature[slot] = -1
        threshold[slot] = 0.0
        left[slot] = -1
        right[slot] = -1
        value[slot] = mean
        if depth >= max_depth or m < 2 * min_leaf or ymin == ymax:
            continue

        for j in range(mtry):
            r = j + _randint(state, d - j)
            tmp = feats[j]
            feats[j] = feats[r]
            feats[r] = tmp
        cand = np.sort(feats[:mtry])

        parent = total * total / m
        best_gain = 0.0
        best_f = -1
        best_thr = 0.0
        for f in cand:
            for i in range(m):
                r = idx[lo + i]
                keys[i] = X[r, f]
                ys[i] = y[r]
            _sort_pairs(keys, ys, m)
            sl = 0.0
            for i in range(m - 1):
                sl += ys[i]
                nl = i + 1
                nr = m - nl
                if nl < min_leaf:
                    continue
                if nr < min_leaf:
                    break
                xv = keys[i]
                xn = keys[i + 1]
                if xv == xn:
                    continue
                sr = total - sl
                gain = sl * sl / nl + sr * sr / nr - parent
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    t = 0.5 * (xv + xn)
                    if t >= xn:
                        t = xv
                    best_thr = t
        if best_f < 0:
            continue

        # stable partition: rows with x <= threshold first
        nl = 0
        for i in range(lo, hi):
            if X[idx[i], best_f] <= best_thr:
                buf[nl] = idx[i]
                nl += 1
        k = nl
        for i in range(lo, hi):
            if X[idx[i], best_f] > best_thr:
                buf[k] = idx[i]
                k += 1
        for i in range(m):
            idx[lo + i] = buf[i]

        feature[slot] = best_f
        threshold[slot] = best_thr
        left[slot] = base + n_nodes
        right[slot] = base + n_nodes + 1
        st_node[top] = n_nodes + 1
        st_lo[top] = lo + nl
        st_hi[top] = hi
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = n_nodes
        st_lo[top] = lo
        st_hi[top] = lo + nl
        st_depth[top] = depth + 1
        top += 1
        n_nodes += 2
    return n_nodes


@nb.njit(cache=True)
def fit_forest_kernel(X, y, n_trees, max_depth, min_leaf, mtry, seed, bootstrap):
    n = X.shape[0]
    per_tree = 2 * n + 1
    total = n_trees * per_tree
    feature = np.empty(total, dtype=np.int64)
    threshold = np.empty(total, dtype=np.float64)
    left = np.empty(total, dtype=np.int64)
    right = np.empty(total, dtype=np.int64)
    value = np.empty(total, dtype=np.float64)
    roots = np.empty(n_trees, dtype=np.int64)
    sizes = np.empty(n_trees, dtype=np.int64)
    base = 0
    for t in range(n_trees):
        if bootstrap:
            idx, state = bootstrap_sample(n, seed, t)
        else:
            idx = np.arange(n)
            state = _tree_state(seed, t)
        roots[t] = base
        used = _grow(X, y, idx, max_depth, min_leaf, mtry, state,
                     feature, threshold, left, right, value, base)
        sizes[t] = used
        base += used
    return (feature[:base].copy(), threshold[:base].copy(), left[:base].copy(),
            right[:base].copy(), value[:base].copy(), roots, sizes)


@nb.njit(cache=True)
def predict_kernel(X, feature, threshold, left, right, value, roots):
    n = X.shape[0]
    n_trees = roots.shape[0]
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        acc = 0.0
        lo = np.inf
        hi = -np.inf
        for t in range(n_trees):
            node = roots[t]
            while left[node] != -1:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            v = value[node]
            acc += v
            if v < lo:
                lo = v
            if v > hi:
                hi = v
        acc /= n_trees
        if acc < lo:
            acc = lo
        elif acc > hi:
            acc = hi
        out[i] = acc
    return out
