"""Compiled inner loops for tree growing, ensemble prediction and TreeSHAP.

Trees are flat arrays: ``feature`` (-1 marks a leaf), ``threshold``,
``left``, ``right``, ``value`` and ``cover``. Samples with
``x[feature] < threshold`` go left. An ensemble is the concatenation of its
trees with ``offsets[t]`` giving the root index of tree ``t``; child indices
are local to their tree.
"""

import numpy as np
from numba import njit


# Split scores that agree to this relative precision are treated as ties.
# Mathematically equal candidates (e.g. two features inducing the same
# partition) can differ by a few ulps because their sums run in different
# orders; without the tolerance that noise, not the tie rule, would pick.
TIE_RTOL = 1e-10


@njit(cache=True, nogil=True)
def grow_tree(order, sorted_values, X, features, g, h, max_depth, reg_lambda, gamma,
              min_child_weight, learning_rate):
    """Fit one depth-limited regression tree to (g, h) by exact greedy search.

    ``order[f]`` lists sample indices sorted by column ``features[f]`` and
    ``sorted_values[f]`` holds the matching values. Returns the node arrays
    and the leaf index reached by every training sample.
    """
    n = g.shape[0]
    n_feat = features.shape[0]
    max_nodes = 2 ** (max_depth + 1) - 1
    feat = np.full(max_nodes, -1, np.int64)
    thr = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    value = np.zeros(max_nodes)
    cover = np.zeros(max_nodes)

    node_of = np.zeros(n, np.int64)
    open_nodes = np.zeros(1, np.int64)
    n_nodes = 1
    slot_of = np.full(max_nodes, -1, np.int64)

    for depth in range(max_depth + 1):
        n_open = open_nodes.shape[0]
        if n_open == 0:
            break
        slot_of[:] = -1
        for s in range(n_open):
            slot_of[open_nodes[s]] = s
        G = np.zeros(n_open)
        H = np.zeros(n_open)
        for i in range(n):
            s = slot_of[node_of[i]]
            if s >= 0:
                G[s] += g[i]
                H[s] += h[i]
        for s in range(n_open):
            k = open_nodes[s]
            cover[k] = H[s]
            value[k] = -G[s] / (H[s] + reg_lambda) * learning_rate
        if depth == max_depth:
            break

        best_gain = np.zeros(n_open)
        best_f = np.full(n_open, -1, np.int64)
        best_t = np.zeros(n_open)
        acc_g = np.zeros(n_open)
        acc_h = np.zeros(n_open)
        last = np.zeros(n_open)
        f_gain = np.zeros(n_open)
        f_thr = np.zeros(n_open)
        # per-sample slot (or -1 when its node is closed) and interleaved g/h
        slot = np.empty(n, np.int32)
        gh = np.empty((n, 2))
        for i in range(n):
            slot[i] = slot_of[node_of[i]]
            gh[i, 0] = g[i]
            gh[i, 1] = h[i]
        parent_score = np.empty(n_open)
        for s in range(n_open):
            parent_score[s] = G[s] * G[s] / (H[s] + reg_lambda)
        for fi in range(n_feat):
            acc_g[:] = 0.0
            acc_h[:] = 0.0
            f_gain[:] = -np.inf
            for r in range(n):
                i = order[fi, r]
                s = slot[i]
                if s < 0:
                    continue
                v = sorted_values[fi, r]
                HL = acc_h[s]
                # hessians are strictly positive, so HL > 0 means the slot has members already
                if HL > 0.0 and v != last[s]:
                    GL = acc_g[s]
                    GR = G[s] - GL
                    HR = H[s] - HL
                    if HL >= min_child_weight and HR >= min_child_weight:
                        # split score GL^2/(HL+l) + GR^2/(HR+l) over one division
                        a = HL + reg_lambda
                        b = HR + reg_lambda
                        score = (GL * GL * b + GR * GR * a) / (a * b)
                        if score > f_gain[s] + TIE_RTOL * f_gain[s]:
                            f_gain[s] = score
                            t = last[s] + (v - last[s]) * 0.5
                            if t <= last[s]:
                                t = v
                            f_thr[s] = t
                acc_g[s] += gh[i, 0]
                acc_h[s] = HL + gh[i, 1]
                last[s] = v
            # features are visited in ascending order, so a gain must beat the
            # incumbent by more than rounding noise; ties keep the lowest index
            for s in range(n_open):
                gain = 0.5 * (f_gain[s] - parent_score[s]) - gamma
                if gain > best_gain[s] + TIE_RTOL * f_gain[s]:
                    best_gain[s] = gain
                    best_f[s] = features[fi]
                    best_t[s] = f_thr[s]

        n_next = 0
        for s in range(n_open):
            if best_f[s] >= 0:
                n_next += 2
        next_nodes = np.zeros(n_next, np.int64)
        q = 0
        for s in range(n_open):
            if best_f[s] >= 0:
                k = open_nodes[s]
                feat[k] = best_f[s]
                thr[k] = best_t[s]
                value[k] = 0.0
                left[k] = n_nodes
                right[k] = n_nodes + 1
                next_nodes[q] = n_nodes
                next_nodes[q + 1] = n_nodes + 1
                q += 2
                n_nodes += 2
        for i in range(n):
            k = node_of[i]
            if feat[k] >= 0 and slot_of[k] >= 0:
                if X[i, feat[k]] < thr[k]:
                    node_of[i] = left[k]
                else:
                    node_of[i] = right[k]
        open_nodes = next_nodes

    return (feat[:n_nodes].copy(), thr[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), cover[:n_nodes].copy(), node_of)


@njit(cache=True, nogil=True)
def predict_margins(X, offsets, feat, thr, left, right, value, base_margin):
    n = X.shape[0]
    out = np.full(n, base_margin)
    n_trees = offsets.shape[0]
    for i in range(n):
        acc = 0.0
        for t in range(n_trees):
            root = offsets[t]
            k = 0
            while feat[root + k] >= 0:
                if X[i, feat[root + k]] < thr[root + k]:
                    k = left[root + k]
                else:
                    k = right[root + k]
            acc += value[root + k]
        out[i] += acc
    return out


@njit(nogil=True)
def _extend_path(pf, pz, po, pw, base, depth, zero_fraction, one_fraction, feature):
    pf[base + depth] = feature
    pz[base + depth] = zero_fraction
    po[base + depth] = one_fraction
    pw[base + depth] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        pw[base + i + 1] += one_fraction * pw[base + i] * (i + 1) / (depth + 1)
        pw[base + i] = zero_fraction * pw[base + i] * (depth - i) / (depth + 1)


@njit(nogil=True)
def _unwind_path(pf, pz, po, pw, base, depth, path_index):
    one_fraction = po[base + path_index]
    zero_fraction = pz[base + path_index]
    next_one_portion = pw[base + depth]
    for i in range(depth - 1, -1, -1):
        if one_fraction != 0.0:
            tmp = pw[base + i]
            pw[base + i] = next_one_portion * (depth + 1) / ((i + 1) * one_fraction)
            next_one_portion = tmp - pw[base + i] * zero_fraction * (depth - i) / (depth + 1)
        else:
            pw[base + i] = pw[base + i] * (depth + 1) / (zero_fraction * (depth - i))
    for i in range(path_index, depth):
        pf[base + i] = pf[base + i + 1]
        pz[base + i] = pz[base + i + 1]
        po[base + i] = po[base + i + 1]


@njit(nogil=True)
def _unwound_path_sum(pz, po, pw, base, depth, path_index):
    one_fraction = po[base + path_index]
    zero_fraction = pz[base + path_index]
    next_one_portion = pw[base + depth]
    total = 0.0
    if one_fraction != 0.0:
        for i in range(depth - 1, -1, -1):
            tmp = next_one_portion / ((i + 1) * one_fraction)
            total += tmp
            next_one_portion = pw[base + i] - tmp * zero_fraction * (depth - i)
    else:
        for i in range(depth - 1, -1, -1):
            total += pw[base + i] / (zero_fraction * (depth - i))
    return total * (depth + 1)


@njit(nogil=True)
def _tree_shap_recurse(x, phi, root, feat, thr, left, right, value, cover,
                       node, depth, pf, pz, po, pw, parent_base,
                       zero_fraction, one_fraction, feature):
    # each recursion level owns a fresh copy of the path, stacked in the buffers
    base = parent_base + depth + 1 if depth > 0 else parent_base
    if depth > 0:
        for i in range(depth):
            pf[base + i] = pf[parent_base + i]
            pz[base + i] = pz[parent_base + i]
            po[base + i] = po[parent_base + i]
            pw[base + i] = pw[parent_base + i]
    _extend_path(pf, pz, po, pw, base, depth, zero_fraction, one_fraction, feature)

    k = root + node
    split = feat[k]
    if split < 0:
        for i in range(1, depth + 1):
            w = _unwound_path_sum(pz, po, pw, base, depth, i)
            phi[pf[base + i]] += w * (po[base + i] - pz[base + i]) * value[k]
        return

    if x[split] < thr[k]:
        hot = left[k]
        cold = right[k]
    else:
        hot = right[k]
        cold = left[k]
    w = cover[k]
    hot_zero = cover[root + hot] / w
    cold_zero = cover[root + cold] / w
    incoming_zero = 1.0
    incoming_one = 1.0
    path_index = depth + 1
    for p in range(depth + 1):
        if pf[base + p] == split:
            path_index = p
            break
    if path_index != depth + 1:
        incoming_zero = pz[base + path_index]
        incoming_one = po[base + path_index]
        _unwind_path(pf, pz, po, pw, base, depth, path_index)
        depth -= 1

    _tree_shap_recurse(x, phi, root, feat, thr, left, right, value, cover,
                       hot, depth + 1, pf, pz, po, pw, base,
                       hot_zero * incoming_zero, incoming_one, split)
    _tree_shap_recurse(x, phi, root, feat, thr, left, right, value, cover,
                       cold, depth + 1, pf, pz, po, pw, base,
                       cold_zero * incoming_zero, 0.0, split)


@njit(nogil=True)
def tree_shap_batch(X, n_features, offsets, max_depth, feat, thr, left, right, value, cover):
    """Path-dependent TreeSHAP attributions for every row of ``X``."""
    n = X.shape[0]
    phi = np.zeros((n, n_features))
    size = (max_depth + 2) * (max_depth + 3) // 2 + max_depth + 2
    pf = np.zeros(size, np.int64)
    pz = np.zeros(size)
    po = np.zeros(size)
    pw = np.zeros(size)
    for i in range(n):
        x = X[i]
        row = phi[i]
        for t in range(offsets.shape[0]):
            _tree_shap_recurse(x, row, offsets[t], feat, thr, left, right, value, cover,
                               0, 0, pf, pz, po, pw, 0, 1.0, 1.0, -1)
    return phi
