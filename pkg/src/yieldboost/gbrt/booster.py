from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .grower import ColumnBlocks, grow_tree
from .objective import SquaredError
from .params import TrainParams
from .tree import Tree

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


@dataclass
class Ensemble:
    """Additive tree ensemble: prediction = base_score + sum of tree outputs."""

    base_score: float
    trees: list[Tree] = field(default_factory=list)
    n_features: int = 0
    feature_names: list[str] = field(default_factory=list)
    params: TrainParams | None = None
    best_round: int | None = None

    def __post_init__(self) -> None:
        self._flat = None

    def _flatten(self):
        if self._flat is None or self._flat[0] != len(self.trees):
            offsets = np.cumsum([0] + [t.n_nodes for t in self.trees])
            cat = lambda name, dt: (  # noqa: E731
                np.concatenate([getattr(t, name) for t in self.trees]).astype(dt) if self.trees else np.zeros(0, dt)
            )
            left, right = cat("left", np.int64), cat("right", np.int64)
            for k, t in enumerate(self.trees):
                sl = slice(offsets[k], offsets[k + 1])
                left[sl] = np.where(left[sl] >= 0, left[sl] + offsets[k], -1)
                right[sl] = np.where(right[sl] >= 0, right[sl] + offsets[k], -1)
            self._flat = (
                len(self.trees),
                cat("feature", np.int64), cat("threshold", np.float64), cat("default_left", np.bool_),
                left, right, cat("value", np.float64), offsets[:-1].astype(np.int64),
            )
        return self._flat[1:]

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        out = np.empty(X.shape[0])
        _kernels.predict_trees(X, *self._flatten(), float(self.base_score), out)
        return out

    def truncated(self, n_trees: int) -> "Ensemble":
        return Ensemble(self.base_score, self.trees[:n_trees], self.n_features, list(self.feature_names), self.params, None)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "base_score": float(self.base_score),
            "n_features": int(self.n_features),
            "feature_names": list(self.feature_names),
            "params": self.params.to_dict() if self.params is not None else None,
            "best_round": self.best_round,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Ensemble":
        if d.get("format_version") != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported model format_version {d.get('format_version')!r}")
        try:
            return cls(
                float(d["base_score"]),
                [Tree.from_dict(t) for t in d["trees"]],
                int(d["n_features"]),
                list(d["feature_names"]),
                TrainParams.from_dict(d["params"]) if d.get("params") else None,
                d.get("best_round"),
            )
        except (KeyError, TypeError) as exc:
            raise ModelFormatError(f"malformed model document: {exc}") from exc


def predict(model: Ensemble, X) -> np.ndarray:
    return model.predict(X)


def save_model(model: Ensemble, path: str | os.PathLike) -> None:
    # json writes floats with repr, which round-trips exactly
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, separators=(",", ":"))
        fh.write("\n")


def load_model(path: str | os.PathLike) -> Ensemble:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: not a valid model file ({exc})") from exc
    return Ensemble.from_dict(doc)


@dataclass
class TrainHistory:
    train_rmse: list[float] = field(default_factory=list)
    valid_rmse: list[float] = field(default_factory=list)
    best_round: int | None = None


def _rmse(pred: np.ndarray, y: np.ndarray) -> float:
    r = pred - y
    return math.sqrt(float(np.dot(r, r)) / r.size)


def _check_xy(X, y, what: str):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"{what}: X is {X.shape} but there are {y.shape[0]} labels")
    if np.isnan(y).any():
        raise ValueError(f"{what}: labels contain NaN")
    return X, y


def train(
    X,
    y,
    params: TrainParams | None = None,
    valid: tuple | None = None,
    feature_names=None,
    n_jobs: int = 1,
    callback=None,
) -> tuple[Ensemble, TrainHistory]:
    """Boost up to ``params.max_rounds`` trees on squared error.

    ``X`` may be a prepared :class:`ColumnBlocks` to skip the column sort.

    With a ``valid=(X_valid, y_valid)`` pair, training stops once validation
    RMSE has not improved for ``early_stop_patience`` rounds and the returned
    ensemble is cut back to the best validation round.  ``callback(round,
    ensemble)`` is invoked after each round if given.
    """
    params = params or TrainParams()
    data = X if isinstance(X, ColumnBlocks) else None
    X, y = _check_xy(data.X if data is not None else X, y, "train")
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    loss = SquaredError()
    base = loss.base_score(y)
    n, n_features = X.shape
    names = list(feature_names) if feature_names is not None else [f"f{i}" for i in range(n_features)]
    model = Ensemble(base, [], n_features, names, params)
    history = TrainHistory()

    if valid is not None:
        Xv, yv = _check_xy(*valid, "valid")
        if Xv.shape[1] != n_features:
            raise ValueError("train and validation feature widths differ")
        Xv = np.ascontiguousarray(Xv)
        pred_v = np.full(len(yv), base)

    if data is None:
        data = ColumnBlocks.from_matrix(X)
    pred = np.full(n, base)
    rng = np.random.default_rng(params.seed)
    n_rows = max(1, int(round(params.subsample * n)))
    n_cols = max(1, int(round(params.colsample * n_features)))
    best, best_round = math.inf, -1

    for rnd in range(params.max_rounds):
        grad, hess = loss.gradients(y, pred)
        rows = np.sort(rng.choice(n, n_rows, replace=False)) if n_rows < n else None
        cols = np.sort(rng.choice(n_features, n_cols, replace=False)) if n_cols < n_features else None
        tree = grow_tree(data, grad, hess, params, rows=rows, features=cols, n_jobs=n_jobs)
        model.trees.append(tree)
        _kernels.add_tree(data.X, tree.feature, tree.threshold, tree.default_left, tree.left, tree.right, tree.value, pred)
        history.train_rmse.append(_rmse(pred, y))
        if callback is not None:
            callback(rnd, model)
        if valid is None:
            continue
        _kernels.add_tree(Xv, tree.feature, tree.threshold, tree.default_left, tree.left, tree.right, tree.value, pred_v)
        score = _rmse(pred_v, yv)
        history.valid_rmse.append(score)
        if score < best:
            best, best_round = score, rnd
        elif rnd - best_round >= params.early_stop_patience:
            logger.debug("early stop at round %d, best round %d", rnd, best_round)
            break

    if valid is not None and best_round >= 0:
        model = model.truncated(best_round + 1)
        history.best_round = best_round
        model.best_round = best_round
    return model, history
