"""Second-order quantities of the boosting objective."""

from __future__ import annotations

import numpy as np


class SquaredError:
    """Loss 0.5 * (prediction - label)**2."""

    name = "squared_error"

    def gradients(self, labels, predictions) -> tuple[np.ndarray, np.ndarray]:
        labels = np.asarray(labels, dtype=np.float64)
        predictions = np.asarray(predictions, dtype=np.float64)
        if labels.shape != predictions.shape:
            raise ValueError(f"length mismatch: {labels.shape} labels vs {predictions.shape} predictions")
        if np.isnan(labels).any():
            raise ValueError("labels contain NaN")
        return predictions - labels, np.ones_like(labels)

    def base_score(self, labels) -> float:
        return float(np.mean(labels))


def gradients(labels, predictions) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivatives of the squared error w.r.t. the predictions."""
    return SquaredError().gradients(labels, predictions)


def leaf_weight(G: float, H: float, lambda_: float) -> float:
    if not H + lambda_ > 0:
        raise ValueError(f"H + lambda must be positive, got {H} + {lambda_}")
    return -G / (H + lambda_)


def split_gain(G_L: float, H_L: float, G_R: float, H_R: float, lambda_: float, gamma: float) -> float:
    G, H = G_L + G_R, H_L + H_R
    return 0.5 * (G_L * G_L / (H_L + lambda_) + G_R * G_R / (H_R + lambda_) - G * G / (H + lambda_)) - gamma
