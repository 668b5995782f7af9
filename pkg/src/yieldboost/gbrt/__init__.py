"""Regularized second-order gradient boosting of regression trees."""

from .booster import Ensemble, ModelFormatError, TrainHistory, load_model, predict, save_model, train
from .grower import ColumnBlocks, grow_tree, propose_candidates
from .objective import SquaredError, gradients, leaf_weight, split_gain
from .params import TrainParams
from .tree import Tree

__all__ = [
    "ColumnBlocks",
    "Ensemble",
    "ModelFormatError",
    "SquaredError",
    "TrainHistory",
    "TrainParams",
    "Tree",
    "gradients",
    "grow_tree",
    "leaf_weight",
    "load_model",
    "predict",
    "propose_candidates",
    "save_model",
    "split_gain",
    "train",
]
