from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels


@dataclass
class Tree:
    """A regression tree stored as parallel node arrays; node 0 is the root.

    ``feature[i] == -1`` marks a leaf.  Splits send ``x <= threshold`` left and
    missing values to ``left`` iff ``default_left``.  ``cover`` is the hessian
    mass (the row count, for squared error) that reached the node in training.
    """

    feature: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int32))
    threshold: np.ndarray = field(default_factory=lambda: np.zeros(0))
    default_left: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))
    left: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int32))
    right: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int32))
    value: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cover: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        self.feature = np.asarray(self.feature, np.int32)
        self.threshold = np.asarray(self.threshold, np.float64)
        self.default_left = np.asarray(self.default_left, bool)
        self.left = np.asarray(self.left, np.int32)
        self.right = np.asarray(self.right, np.int32)
        self.value = np.asarray(self.value, np.float64)
        self.cover = np.asarray(self.cover, np.float64)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def depth(self, node: int = 0) -> int:
        if self.is_leaf(node):
            return 0
        return 1 + max(self.depth(self.left[node]), self.depth(self.right[node]))

    def used_features(self) -> set[int]:
        return {int(f) for f in self.feature if f >= 0}

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.zeros(X.shape[0])
        _kernels.add_tree(X, self.feature, self.threshold, self.default_left, self.left, self.right, self.value, out)
        return out

    def to_dict(self, node: int = 0) -> dict:
        if self.is_leaf(node):
            return {"w": float(self.value[node]), "c": float(self.cover[node])}
        return {
            "f": int(self.feature[node]),
            "t": float(self.threshold[node]),
            "dl": bool(self.default_left[node]),
            "c": float(self.cover[node]),
            "l": self.to_dict(int(self.left[node])),
            "r": self.to_dict(int(self.right[node])),
        }

    @classmethod
    def from_dict(cls, root: dict) -> "Tree":
        """Rebuild from the nested form, numbering nodes in pre-order."""
        cols: dict[str, list] = {k: [] for k in ("feature", "threshold", "default_left", "left", "right", "value", "cover")}

        def visit(node: dict) -> int:
            idx = len(cols["feature"])
            for k in cols:
                cols[k].append(0)
            cols["cover"][idx] = float(node.get("c", np.nan))
            if "w" in node:
                cols["feature"][idx] = -1
                cols["value"][idx] = float(node["w"])
                cols["left"][idx] = cols["right"][idx] = -1
                return idx
            cols["feature"][idx] = int(node["f"])
            cols["threshold"][idx] = float(node["t"])
            cols["default_left"][idx] = bool(node["dl"])
            cols["left"][idx] = visit(node["l"])
            cols["right"][idx] = visit(node["r"])
            return idx

        visit(root)
        return cls(**cols)

    def canonical(self) -> "Tree":
        """Same tree renumbered in pre-order."""
        return Tree.from_dict(self.to_dict())
