"""Metrics, walk-forward evaluation and representation-size reporting."""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .features import IN_YEAR_STEPS, FeatureTable, LeakageError
from .gbrt import ColumnBlocks, Ensemble, TrainParams, train
from .tuner import tune

logger = logging.getLogger(__name__)

N_REPEATS = 5
# fixed parameters for runs with tuning off; chosen to fit the desk-scale time budget
DEFAULT_EVAL_PARAMS = TrainParams(eta=0.15, max_depth=4, subsample=0.8, colsample=0.3, max_rounds=100)


def rmse(predictions, labels) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {y.shape}")
    if p.size == 0:
        raise ValueError("rmse of an empty sample")
    r = p - y
    return math.sqrt(float(np.dot(r, r)) / r.size)


def r2(predictions, labels) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {y.shape}")
    if p.size == 0:
        raise ValueError("r2 of an empty sample")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("r2 is undefined when all labels are equal")
    return 1.0 - float(np.sum((p - y) ** 2)) / ss_tot


@dataclass
class YearResult:
    year: int
    rmse: float
    r2: float
    n_train: int
    n_test: int
    rep_rmse: list[float] = field(default_factory=list)
    rep_r2: list[float] = field(default_factory=list)
    seconds: float = 0.0


@dataclass
class EvalReport:
    mode: str
    years: list[YearResult]
    seed: int
    n_repeats: int
    tuned: bool
    params: dict | None = None
    seconds: float = 0.0
    sizes: dict | None = None
    # last repetition's model per test year; kept in memory only
    models: dict = field(default_factory=dict, repr=False)

    @property
    def avg_rmse(self) -> float:
        return float(np.mean([y.rmse for y in self.years]))

    @property
    def avg_r2(self) -> float:
        return float(np.mean([y.r2 for y in self.years]))

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "n_repeats": self.n_repeats,
            "tuned": self.tuned,
            "params": self.params,
            "years": [asdict(y) for y in self.years],
            "average": {"year": "AVG", "rmse": self.avg_rmse, "r2": self.avg_r2},
            "seconds": self.seconds,
            "sizes": self.sizes,
        }

    def write(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    def table(self) -> str:
        lines = [f"{'year':>6} {'rmse':>8} {'r2':>7}"]
        lines += [f"{y.year:>6} {y.rmse:8.3f} {y.r2:7.3f}" for y in self.years]
        lines.append(f"{'AVG':>6} {self.avg_rmse:8.3f} {self.avg_r2:7.3f}")
        return "\n".join(lines)


def parse_years(text: str) -> list[int]:
    """``"2017:2021"`` (inclusive) or ``"2017,2019"``."""
    try:
        if ":" in text:
            lo, hi = (int(v) for v in text.split(":"))
            years = list(range(lo, hi + 1))
        else:
            years = [int(v) for v in text.split(",")]
    except ValueError:
        raise ValueError(f"bad year list {text!r}") from None
    if not years:
        raise ValueError(f"empty year range {text!r}")
    return years


AuditHook = Callable[[int, np.ndarray], None]


def walk_forward(
    table: FeatureTable,
    test_years: Sequence[int],
    mode: str = "endofyear",
    tuning: bool = False,
    seed: int = 0,
    params: TrainParams | None = None,
    n_repeats: int = N_REPEATS,
    n_trials: int = 50,
    n_jobs: int = 1,
    audit: AuditHook | None = None,
    keep_models: bool = False,
) -> EvalReport:
    """Train on years < Y and test on Y, for each Y, averaged over repetitions.

    Repetition ``r`` uses seed ``seed + r`` for row/column subsampling and,
    with ``tuning``, for the search.  ``audit(Y, years)`` receives the year of
    every row handed to training for test year Y.
    """
    if mode not in ("inyear", "endofyear"):
        raise ValueError(f"unknown mode {mode!r}")
    if n_repeats < 1:
        raise ValueError("n_repeats must be >= 1")
    if mode == "inyear" and table.t_steps > IN_YEAR_STEPS:
        table = table.in_year()
    params = params or DEFAULT_EVAL_PARAMS
    start = time.perf_counter()
    blocks = ColumnBlocks.from_matrix(table.X)
    results, models = [], {}
    for year in sorted(test_years):
        t0 = time.perf_counter()
        train_rows = np.flatnonzero(table.years < year)
        test_rows = np.flatnonzero(table.years == year)
        if train_rows.size == 0:
            raise ValueError(f"test year {year} has no earlier training data")
        if test_rows.size == 0:
            raise ValueError(f"no rows for test year {year}")
        seen = table.years[train_rows]
        if audit is not None:
            audit(year, seen)
        if np.any(seen >= year):
            raise LeakageError(f"training rows for {year} include year {int(seen.max())}")
        data = blocks.subset(train_rows)
        y_train = table.labels[train_rows]
        X_test, y_test = table.X[test_rows], table.labels[test_rows]
        rep_rmse, rep_r2 = [], []
        for rep in range(n_repeats):
            rep_params = params.replace(seed=seed + rep)
            if tuning:
                found = tune(data.X, y_train, n_trials=n_trials, seed=seed + rep, base_params=rep_params, n_jobs=n_jobs)
                rep_params = found.params
            model, _ = train(data, y_train, rep_params, n_jobs=n_jobs)
            pred = model.predict(X_test)
            rep_rmse.append(rmse(pred, y_test))
            rep_r2.append(r2(pred, y_test))
            if keep_models and rep == n_repeats - 1:
                models[year] = model
        res = YearResult(
            year, float(np.mean(rep_rmse)), float(np.mean(rep_r2)), int(train_rows.size), int(test_rows.size),
            rep_rmse, rep_r2, time.perf_counter() - t0,
        )
        logger.info("year %d: rmse %.3f r2 %.3f (%.1fs)", year, res.rmse, res.r2, res.seconds)
        results.append(res)
    return EvalReport(
        mode, results, seed, n_repeats, tuning, None if tuning else params.to_dict(),
        time.perf_counter() - start, models=models,
    )


@dataclass
class SizeReport:
    feature_bytes: int
    histogram_bytes: int

    @property
    def ratio(self) -> float:
        return self.feature_bytes / self.histogram_bytes if self.histogram_bytes else math.nan

    def to_dict(self) -> dict:
        return {"feature_bytes": self.feature_bytes, "histogram_bytes": self.histogram_bytes, "ratio": self.ratio}


def size_report(feature_table: str | os.PathLike, histogram_table: str | os.PathLike) -> SizeReport:
    """Byte sizes of the two serialized representations of one dataset."""
    return SizeReport(os.path.getsize(feature_table), os.path.getsize(histogram_table))


def final_model(report: EvalReport) -> Ensemble | None:
    """Model of the last test year, if the run kept models."""
    return report.models[max(report.models)] if report.models else None
