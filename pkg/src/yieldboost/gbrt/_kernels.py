"""Compiled inner loops for split finding and prediction.

Kernels taking ``j0, j1`` touch only selected features ``[j0, j1)`` of their
outputs, so feature ranges can run on concurrent threads without changing
any result.

Histograms have shape ``(k, n_bins + 1, 3)``: for each selected feature and
bin the gradient sum, hessian sum and row count; the last bin collects rows
whose value is missing.
"""

import numpy as np
from numba import njit

MISSING_BIN = 65535
_JIT = dict(nogil=True, cache=True)


@njit(**_JIT)
def propose_and_bin(sorted_vals, order, n_valid, fsel, in_sample, hess, eps, j0, j1, cuts, n_cuts, bins):
    """Weighted-quantile cut proposal plus bin assignment for the sampled rows.

    For feature ``fsel[j]`` walk its presorted column, keep sampled rows, and
    place a cut after the first sorted value whose cumulative hessian reaches
    each multiple of ``eps * total``; the threshold sits midway to the next
    distinct value.  Sampled rows then get ``bins[j, r]`` = number of cuts
    strictly below their value, or MISSING_BIN.
    """
    n = sorted_vals.shape[1]
    vals = np.empty(n + 1)
    wts = np.empty(n + 1)
    rr = np.empty(n + 1, np.int64)
    n_targets = int(np.ceil(1.0 / eps)) - 1
    for j in range(j0, j1):
        f = fsel[j]
        m = 0
        total = 0.0
        # branch-free compaction: write unconditionally, advance only on sampled rows
        for k in range(n_valid[f]):
            r = order[f, k]
            w = hess[r]
            vals[m] = sorted_vals[f, k]
            wts[m] = w
            rr[m] = r
            s = in_sample[r]
            total += w * s
            m += s
        nc = 0
        if m > 0:
            i = 0
            cum = wts[0]
            tol = 1e-10 * total
            for q in range(1, n_targets + 1):
                target = q * eps * total - tol
                while i < m - 1 and cum < target:
                    i += 1
                    cum += wts[i]
                # the cut goes after the last copy of this value
                while i < m - 1 and vals[i + 1] == vals[i]:
                    i += 1
                    cum += wts[i]
                if i >= m - 1:
                    break
                a = vals[i]
                b = vals[i + 1]
                t = 0.5 * (a + b)
                if not t < b:
                    t = a
                if nc == 0 or t > cuts[j, nc - 1]:
                    cuts[j, nc] = t
                    nc += 1
        n_cuts[j] = nc
        c = 0
        for k in range(m):
            while c < nc and vals[k] > cuts[j, c]:
                c += 1
            bins[j, rr[k]] = c
        for k in range(n_valid[f], n):
            r = order[f, k]
            if in_sample[r]:
                bins[j, r] = MISSING_BIN


@njit(**_JIT)
def build_histogram(bins, rows, g, h, j0, j1, hist):
    """Accumulate ``hist`` over ``rows``; ``g``/``h`` are already gathered per row."""
    miss = hist.shape[1] - 1
    for j in range(j0, j1):
        for k in range(rows.shape[0]):
            b = bins[j, rows[k]]
            if b == MISSING_BIN:
                b = miss
            hist[j, b, 0] += g[k]
            hist[j, b, 1] += h[k]
            hist[j, b, 2] += 1.0


@njit(**_JIT)
def _gain(GL, HL, GR, HR, G, H, lam, gamma):
    return 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - G * G / (H + lam)) - gamma


@njit(**_JIT)
def find_splits(hist, n_cuts, G, H, lam, gamma, min_child_weight, j0, j1, best_gain, best_cut, best_dl):
    """Best (cut, default direction) for each selected feature of one node.

    Cuts are scanned in ascending order and only cuts that change the node's
    partition are scored, so among equal partitions the lowest threshold
    wins.  On a gain tie, missing values go right.
    """
    miss = hist.shape[1] - 1
    for j in range(j0, j1):
        best_gain[j] = -np.inf
        best_cut[j] = -1
        best_dl[j] = False
        nc = n_cuts[j]
        cnt_total = 0.0
        for b in range(nc + 1):
            cnt_total += hist[j, b, 2]
        gm = hist[j, miss, 0]
        hm = hist[j, miss, 1]
        has_missing = hist[j, miss, 2] > 0
        gl = 0.0
        hl = 0.0
        cl = 0.0
        for c in range(nc):
            gl += hist[j, c, 0]
            hl += hist[j, c, 1]
            cl += hist[j, c, 2]
            if hist[j, c, 2] == 0 or cl == 0 or cl == cnt_total:
                continue
            # missing rows to the right
            gr = G - gl
            hr = H - hl
            if hl >= min_child_weight and hr >= min_child_weight:
                gain = _gain(gl, hl, gr, hr, G, H, lam, gamma)
                if gain > best_gain[j]:
                    best_gain[j] = gain
                    best_cut[j] = c
                    best_dl[j] = False
            # missing rows to the left
            if has_missing:
                gl2 = gl + gm
                hl2 = hl + hm
                gr2 = G - gl2
                hr2 = H - hl2
                if hl2 >= min_child_weight and hr2 >= min_child_weight:
                    gain = _gain(gl2, hl2, gr2, hr2, G, H, lam, gamma)
                    if gain > best_gain[j]:
                        best_gain[j] = gain
                        best_cut[j] = c
                        best_dl[j] = True


@njit(**_JIT)
def predict_trees(X, feature, threshold, default_left, left, right, value, roots, base, out):
    """out[i] = base + sum over trees of the leaf value reached by row i."""
    n = X.shape[0]
    for i in range(n):
        acc = base
        for k in range(roots.shape[0]):
            node = roots[k]
            while feature[node] >= 0:
                v = X[i, feature[node]]
                if np.isnan(v):
                    node = left[node] if default_left[node] else right[node]
                elif v <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += value[node]
        out[i] = acc


@njit(**_JIT)
def add_tree(X, feature, threshold, default_left, left, right, value, pred):
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            v = X[i, feature[node]]
            if np.isnan(v):
                node = left[node] if default_left[node] else right[node]
            elif v <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        pred[i] += value[node]
