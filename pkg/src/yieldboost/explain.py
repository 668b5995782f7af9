"""Path-dependent TreeSHAP attributions and grouped importances.

Shapley values are computed per tree with the polynomial-time path
algorithm.  The conditional expectation of a tree given a feature subset
follows the observed branch for features in the subset and averages both
branches by training cover otherwise.  Ensemble attributions are the sum
over trees.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .features import HANDCRAFTED, N_HANDCRAFTED, decode_feature_index
from .gbrt import Ensemble, Tree
from .raster import BAND_NAMES, FIRST_DAY

TIMEFRAMES = (
    ("Early Crop Development", 82, 161),
    ("Final Crop Development", 162, 241),
    ("Crop Harvest", 242, 321),
)


@dataclass
class ShapAttribution:
    phi: np.ndarray
    base_value: float
    prediction: float


@dataclass
class ImportanceGroup:
    group: str
    importance: float


class MissingCoverError(ValueError):
    pass


# ---------------------------------------------------------------- path algorithm


# not cached on disk: numba's cache is unreliable for the recursive _recurse
@njit
def _extend(pd, pz, po, pw, ud, zero_fraction, one_fraction, feature):
    pd[ud] = feature
    pz[ud] = zero_fraction
    po[ud] = one_fraction
    pw[ud] = 1.0 if ud == 0 else 0.0
    for i in range(ud - 1, -1, -1):
        pw[i + 1] += one_fraction * pw[i] * (i + 1) / (ud + 1)
        pw[i] = zero_fraction * pw[i] * (ud - i) / (ud + 1)


@njit
def _unwind(pd, pz, po, pw, ud, path_index):
    one_fraction = po[path_index]
    zero_fraction = pz[path_index]
    next_one_portion = pw[ud]
    for i in range(ud - 1, -1, -1):
        if one_fraction != 0.0:
            tmp = pw[i]
            pw[i] = next_one_portion * (ud + 1) / ((i + 1) * one_fraction)
            next_one_portion = tmp - pw[i] * zero_fraction * (ud - i) / (ud + 1)
        else:
            pw[i] = pw[i] * (ud + 1) / (zero_fraction * (ud - i))
    for i in range(path_index, ud):
        pd[i] = pd[i + 1]
        pz[i] = pz[i + 1]
        po[i] = po[i + 1]


@njit
def _unwound_sum(pz, po, pw, ud, path_index):
    one_fraction = po[path_index]
    zero_fraction = pz[path_index]
    next_one_portion = pw[ud]
    total = 0.0
    for i in range(ud - 1, -1, -1):
        if one_fraction != 0.0:
            tmp = next_one_portion * (ud + 1) / ((i + 1) * one_fraction)
            total += tmp
            next_one_portion = pw[i] - tmp * zero_fraction * (ud - i) / (ud + 1)
        else:
            total += pw[i] / zero_fraction / ((ud - i) / (ud + 1))
    return total


@njit
def _recurse(x, feature, threshold, default_left, left, right, value, cover, phi,
             node, level, PD, PZ, PO, PW, ud, zero_fraction, one_fraction, feat):
    # each recursion level works on its own row of the path pool
    pd, pz, po, pw = PD[level], PZ[level], PO[level], PW[level]
    if level > 0:
        for i in range(ud):
            pd[i] = PD[level - 1, i]
            pz[i] = PZ[level - 1, i]
            po[i] = PO[level - 1, i]
            pw[i] = PW[level - 1, i]
    _extend(pd, pz, po, pw, ud, zero_fraction, one_fraction, feat)
    f = feature[node]
    if f < 0:
        for i in range(1, ud + 1):
            w = _unwound_sum(pz, po, pw, ud, i)
            phi[pd[i]] += w * (po[i] - pz[i]) * value[node]
        return 0
    v = x[f]
    if np.isnan(v):
        go_left = default_left[node]
    else:
        go_left = v <= threshold[node]
    hot = left[node] if go_left else right[node]
    cold = right[node] if go_left else left[node]
    iz = 1.0
    io = 1.0
    k = 1
    while k <= ud:
        if pd[k] == f:
            break
        k += 1
    if k <= ud:
        iz = pz[k]
        io = po[k]
        _unwind(pd, pz, po, pw, ud, k)
        ud -= 1
    c = cover[node]
    _recurse(x, feature, threshold, default_left, left, right, value, cover, phi,
             hot, level + 1, PD, PZ, PO, PW, ud + 1, iz * cover[hot] / c, io, f)
    _recurse(x, feature, threshold, default_left, left, right, value, cover, phi,
             cold, level + 1, PD, PZ, PO, PW, ud + 1, iz * cover[cold] / c, 0.0, f)
    return 0


@njit
def _tree_shap_rows(X, feature, threshold, default_left, left, right, value, cover, depth, out):
    size = depth + 2
    PD = np.zeros((size, size), np.int64)
    PZ = np.zeros((size, size))
    PO = np.zeros((size, size))
    PW = np.zeros((size, size))
    for i in range(X.shape[0]):
        _recurse(X[i], feature, threshold, default_left, left, right, value, cover, out[i],
                 0, 0, PD, PZ, PO, PW, 0, 1.0, 1.0, -1)


def expected_value(tree: Tree, node: int = 0) -> float:
    """Cover-weighted mean leaf value, the tree's output with no feature known."""
    if tree.is_leaf(node):
        return float(tree.value[node])
    l, r = int(tree.left[node]), int(tree.right[node])
    return (tree.cover[l] * expected_value(tree, l) + tree.cover[r] * expected_value(tree, r)) / tree.cover[node]


def _check_cover(tree: Tree) -> None:
    if tree.cover.size != tree.n_nodes or np.isnan(tree.cover).any():
        raise MissingCoverError("model has no node cover statistics; retrain to record them")
    internal = tree.feature >= 0
    if np.any(tree.cover[internal] <= 0):
        raise MissingCoverError("internal node with zero cover")


def tree_shap_values(tree: Tree, X) -> np.ndarray:
    """``(n, n_features)`` Shapley values of a single tree."""
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    _check_cover(tree)
    out = np.zeros(X.shape)
    _tree_shap_rows(
        X, tree.feature.astype(np.int64), tree.threshold, tree.default_left, tree.left.astype(np.int64),
        tree.right.astype(np.int64), tree.value, tree.cover, tree.depth(), out,
    )
    return out


def shap_values(model: Ensemble, X) -> tuple[np.ndarray, float]:
    """Attributions for every row of ``X`` and the shared base value."""
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    phi = np.zeros(X.shape)
    base = float(model.base_score)
    for tree in model.trees:
        phi += tree_shap_values(tree, X)
        base += expected_value(tree)
    return phi, base


def tree_shap(model: Ensemble, x) -> ShapAttribution:
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    phi, base = shap_values(model, x)
    return ShapAttribution(phi[0], base, float(model.predict(x)[0]))


# ---------------------------------------------------------------- grouping


def timeframe_of(start_day: int) -> str:
    for name, lo, hi in TIMEFRAMES:
        if start_day <= hi:
            return name
    return TIMEFRAMES[-1][0]


def default_grouping(
    n_features: int,
    band_names: Sequence[str] = BAND_NAMES,
    start_days: Sequence[int] | None = None,
) -> dict[str, list[int]]:
    """Band x timeframe groups for the triple block, singletons for the handcrafted tail.

    Composites that start before day 82 fall into the first timeframe.
    """
    n_rs = n_features - N_HANDCRAFTED
    bands = len(band_names)
    t_steps = n_rs // (3 * bands)
    if t_steps * 3 * bands != n_rs:
        raise ValueError(f"{n_features} features do not match a {bands}-band triple layout")
    if start_days is None:
        start_days = [FIRST_DAY + 8 * t for t in range(t_steps)]
    groups: dict[str, list[int]] = {}
    for name, _, _ in TIMEFRAMES:
        for band in band_names:
            groups[f"{band} | {name}"] = []
    for i in range(n_rs):
        t, b, _ = decode_feature_index(i, bands)
        groups[f"{band_names[b]} | {timeframe_of(start_days[t])}"].append(i)
    groups = {k: v for k, v in groups.items() if v}
    for j, name in enumerate(HANDCRAFTED):
        groups[name] = [n_rs + j]
    return groups


def aggregate_importances(phi: np.ndarray, grouping: dict[str, list[int]]) -> list[ImportanceGroup]:
    """Mean over samples of the summed |phi| within each group, largest first."""
    phi = np.atleast_2d(phi)
    if phi.shape[0] == 0:
        raise ValueError("need at least one sample")
    members = sorted(i for idx in grouping.values() for i in idx)
    if members != list(range(phi.shape[1])):
        raise ValueError("grouping does not partition the feature indices")
    mean_abs = np.abs(phi).mean(axis=0)
    groups = [ImportanceGroup(name, float(mean_abs[idx].sum())) for name, idx in grouping.items()]
    return sorted(groups, key=lambda g: -g.importance)


def model_importances(model: Ensemble, X, grouping=None) -> list[ImportanceGroup]:
    phi, _ = shap_values(model, X)
    return aggregate_importances(phi, grouping or default_grouping(model.n_features))


# ---------------------------------------------------------------- export


def write_attributions(path, county_ids, years, phi, base, predictions) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["county_id", "year", *[f"phi_{i}" for i in range(phi.shape[1])], "base", "prediction"])
        for cid, year, row, pred in zip(county_ids, years, phi.tolist(), predictions):
            w.writerow([cid, int(year), *map(repr, row), repr(float(base)), repr(float(pred))])


def write_importances(path, groups: Sequence[ImportanceGroup]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([{"group": g.group, "importance": g.importance} for g in groups], fh, indent=1)


def importances_svg(groups: Sequence[ImportanceGroup], top: int = 20, title: str = "Mean |SHAP| per group") -> str:
    """A plain horizontal bar chart of the ``top`` largest groups."""
    shown = list(groups)[:top]
    bar_h, label_w, chart_w = 18, 330, 360
    height = 40 + bar_h * len(shown)
    peak = max((g.importance for g in shown), default=0.0) or 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{label_w + chart_w + 80}" height="{height}" '
        'font-family="sans-serif" font-size="12">',
        f'<text x="8" y="20" font-weight="bold">{title}</text>',
    ]
    for i, g in enumerate(shown):
        y = 32 + i * bar_h
        w = chart_w * g.importance / peak
        parts.append(f'<text x="{label_w - 6}" y="{y + 12}" text-anchor="end">{_xml(g.group)}</text>')
        parts.append(f'<rect x="{label_w}" y="{y + 2}" width="{w:.2f}" height="{bar_h - 4}" fill="#6a51a3"/>')
        parts.append(f'<text x="{label_w + w + 4:.2f}" y="{y + 12}">{g.importance:.3g}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _xml(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def save_svg(path: str | os.PathLike, groups: Sequence[ImportanceGroup]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(importances_svg(groups))
