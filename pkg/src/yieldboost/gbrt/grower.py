"""Tree growing with approximate (weighted-quantile) split finding.

Each feature column is sorted once per training run (:class:`ColumnBlocks`).
Per tree, the sampled rows of every sampled feature are walked in that
order to propose cut points and to bin the rows; nodes are then split
greedily from per-bin gradient/hessian histograms.  The smaller child's
histogram is accumulated directly and the larger one's is obtained by
subtraction from the parent.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import _kernels
from ._kernels import MISSING_BIN
from .params import TrainParams
from .tree import Tree


@dataclass
class ColumnBlocks:
    """Training matrix plus a per-feature ascending row order (NaNs last)."""

    X: np.ndarray
    sorted_vals: np.ndarray
    order: np.ndarray
    n_valid: np.ndarray

    @classmethod
    def from_matrix(cls, X) -> "ColumnBlocks":
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("feature matrix must be 2-d")
        Xt = X.T
        order = np.argsort(Xt, axis=1, kind="stable").astype(np.int32)
        sorted_vals = np.ascontiguousarray(np.take_along_axis(Xt, order, axis=1))
        n_valid = (~np.isnan(Xt)).sum(axis=1).astype(np.int64)
        return cls(X, sorted_vals, order, n_valid)

    def subset(self, rows) -> "ColumnBlocks":
        """Blocks for ``X[rows]`` derived without re-sorting (rows ascending)."""
        rows = np.asarray(rows, dtype=np.int64)
        if rows.size and np.any(np.diff(rows) <= 0):
            raise ValueError("subset rows must be strictly ascending")
        remap = np.full(self.n_rows, -1, np.int32)
        remap[rows] = np.arange(rows.size, dtype=np.int32)
        mapped = remap[self.order]
        keep = mapped >= 0
        F, m = self.n_features, rows.size
        in_valid = np.arange(self.n_rows)[None, :] < self.n_valid[:, None]
        return ColumnBlocks(
            np.ascontiguousarray(self.X[rows]),
            np.ascontiguousarray(self.sorted_vals[keep].reshape(F, m)),
            np.ascontiguousarray(mapped[keep].reshape(F, m)),
            (keep & in_valid).sum(axis=1).astype(np.int64),
        )

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]


@njit(cache=True, nogil=True)
def _sequential_sum(values, idx):
    acc = 0.0
    for k in range(idx.shape[0]):
        acc += values[idx[k]]
    return acc


class _Chunked:
    """Runs a per-feature-range kernel over [0, k), split across worker threads."""

    def __init__(self, k: int, n_jobs: int):
        self.n_jobs = max(1, min(int(n_jobs), k)) if k else 1
        bounds = np.linspace(0, k, self.n_jobs + 1).astype(int)
        self.ranges = list(zip(bounds[:-1], bounds[1:]))
        self.pool = ThreadPoolExecutor(self.n_jobs) if self.n_jobs > 1 else None

    def __call__(self, fn) -> None:
        if self.pool is None:
            fn(0, self.ranges[-1][1] if self.ranges else 0)
            return
        for fut in [self.pool.submit(fn, j0, j1) for j0, j1 in self.ranges]:
            fut.result()

    def close(self) -> None:
        if self.pool is not None:
            self.pool.shutdown()


def propose_candidates(values, hessians=None, sketch_eps: float = 0.03) -> np.ndarray:
    """Hessian-weighted quantile thresholds for one feature (NaNs ignored)."""
    if not 0.0 < sketch_eps < 1.0:
        raise ValueError(f"sketch_eps must lie in (0, 1), got {sketch_eps}")
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if n == 0:
        return np.zeros(0)
    hessians = np.ones(n) if hessians is None else np.asarray(hessians, dtype=np.float64)
    data = ColumnBlocks.from_matrix(values.reshape(-1, 1))
    n_targets = math.ceil(1.0 / sketch_eps) - 1
    cuts = np.empty((1, max(1, min(n_targets, n))))
    n_cuts = np.zeros(1, np.int64)
    bins = np.empty((1, n), np.uint16)
    _kernels.propose_and_bin(
        data.sorted_vals, data.order, data.n_valid, np.zeros(1, np.int64), np.ones(n, bool), hessians,
        float(sketch_eps), 0, 1, cuts, n_cuts, bins,
    )
    return cuts[0, : n_cuts[0]].copy()


class _TreeBuilder:
    def __init__(self, data, grad, hess, params, rows, features, n_jobs, max_depth):
        self.data = data
        self.grad = grad
        self.hess = hess
        self.p = params
        self.max_depth = params.max_depth if max_depth is None else int(max_depth)
        self.rows = rows
        self.fsel = features
        k = len(features)
        n_targets = math.ceil(1.0 / params.sketch_eps) - 1
        max_cuts = max(1, min(n_targets, len(rows)))
        if max_cuts + 1 >= MISSING_BIN:
            raise ValueError("sketch_eps too small: more than 65533 candidate cuts per feature")
        self.cuts = np.empty((k, max_cuts))
        self.n_cuts = np.zeros(k, np.int64)
        self.bins = np.empty((k, data.n_rows), np.uint16)
        self.n_bins = max_cuts + 1
        self.run = _Chunked(k, n_jobs)
        self.nodes: dict[str, list] = {key: [] for key in ("feature", "threshold", "default_left", "left", "right", "value", "cover")}

    def bin_rows(self) -> None:
        in_sample = np.zeros(self.data.n_rows, bool)
        in_sample[self.rows] = True
        d = self.data
        self.run(
            lambda j0, j1: _kernels.propose_and_bin(
                d.sorted_vals, d.order, d.n_valid, self.fsel, in_sample, self.hess, float(self.p.sketch_eps),
                j0, j1, self.cuts, self.n_cuts, self.bins,
            )
        )

    def histogram(self, rows) -> np.ndarray:
        hist = np.zeros((len(self.fsel), self.n_bins + 1, 3))
        g, h = self.grad[rows], self.hess[rows]
        self.run(lambda j0, j1: _kernels.build_histogram(self.bins, rows, g, h, j0, j1, hist))
        return hist

    def new_node(self) -> int:
        for col in self.nodes.values():
            col.append(0)
        return len(self.nodes["feature"]) - 1

    def make_leaf(self, node: int, G: float, H: float) -> None:
        denom = H + self.p.lambda_
        w = -G / denom if denom > 0 else 0.0
        self.nodes["feature"][node] = -1
        self.nodes["value"][node] = self.p.eta * w
        self.nodes["left"][node] = self.nodes["right"][node] = -1

    def grow(self, node: int, rows: np.ndarray, hist, depth: int) -> None:
        G = _sequential_sum(self.grad, rows)
        H = _sequential_sum(self.hess, rows)
        self.nodes["cover"][node] = H
        if depth >= self.max_depth or len(rows) < 2:
            self.make_leaf(node, G, H)
            return
        if hist is None:
            hist = self.histogram(rows)
        k = len(self.fsel)
        gain = np.empty(k)
        cut = np.empty(k, np.int64)
        dl = np.empty(k, bool)
        p = self.p
        self.run(
            lambda j0, j1: _kernels.find_splits(
                hist, self.n_cuts, G, H, float(p.lambda_), float(p.gamma),
                float(p.min_child_weight), j0, j1, gain, cut, dl,
            )
        )
        j = int(np.argmax(gain))  # first maximum: lowest feature index on ties
        if not gain[j] > 0.0 or cut[j] < 0:
            self.make_leaf(node, G, H)
            return
        c, default_left = int(cut[j]), bool(dl[j])
        b = self.bins[j, rows]
        go_left = b <= c
        if default_left:
            go_left |= b == MISSING_BIN
        lrows, rrows = rows[go_left], rows[~go_left]

        self.nodes["feature"][node] = int(self.fsel[j])
        self.nodes["threshold"][node] = float(self.cuts[j, c])
        self.nodes["default_left"][node] = default_left

        small_is_left = len(lrows) <= len(rrows)
        small_rows = lrows if small_is_left else rrows
        small = self.histogram(small_rows) if depth + 1 < self.max_depth else None
        big = hist - small if small is not None else None
        del hist
        lhist, rhist = (small, big) if small_is_left else (big, small)

        left = self.new_node()
        self.nodes["left"][node] = left
        self.grow(left, lrows, lhist, depth + 1)
        del lhist
        right = self.new_node()
        self.nodes["right"][node] = right
        self.grow(right, rrows, rhist, depth + 1)

    def build(self) -> Tree:
        try:
            self.bin_rows()
            root = self.new_node()
            self.grow(root, self.rows, None, 0)
        finally:
            self.run.close()
        return Tree(**self.nodes)


def grow_tree(
    data,
    grad,
    hess,
    params: TrainParams,
    rows=None,
    features=None,
    n_jobs: int = 1,
    max_depth: int | None = None,
) -> Tree:
    """Grow one regression tree on ``rows`` using only ``features``.

    ``data`` is a :class:`ColumnBlocks` or a 2-d array.  Stored leaf values
    already include the learning-rate shrinkage.  Nodes are numbered in
    pre-order.
    """
    if not isinstance(data, ColumnBlocks):
        data = ColumnBlocks.from_matrix(data)
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    hess = np.ascontiguousarray(hess, dtype=np.float64)
    rows = np.arange(data.n_rows, dtype=np.int64) if rows is None else np.unique(np.asarray(rows, np.int64))
    if rows.size == 0:
        raise ValueError("cannot grow a tree on zero rows")
    features = (
        np.arange(data.n_features, dtype=np.int64) if features is None else np.unique(np.asarray(features, np.int64))
    )
    return _TreeBuilder(data, grad, hess, params, rows, features, n_jobs, max_depth).build()
