"""Tree-structured Parzen Estimator search over booster hyperparameters.

Each parameter is modelled independently.  After a uniform start-up phase
the trials are split into the best ``gamma`` fraction ("good") and the rest;
each group gets a Parzen density made of Gaussian kernels at the observed
values plus one uniform kernel over the domain.  Candidates drawn from the
good density are scored by the ratio good/bad and the best one is returned.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.special import ndtr, ndtri

from .gbrt import ColumnBlocks, TrainParams, train

logger = logging.getLogger(__name__)

N_STARTUP = 10
GAMMA = 0.25
N_CANDIDATES = 24
SIGMA_MIN_FRACTION = 1e-3
VALID_FRACTION = 0.1


@dataclass(frozen=True)
class Domain:
    kind: str
    low: float
    high: float

    def __post_init__(self) -> None:
        if self.kind not in ("uniform", "log_uniform", "int_uniform"):
            raise ValueError(f"unknown domain type {self.kind!r}")
        if not self.low < self.high:
            raise ValueError(f"domain needs low < high, got [{self.low}, {self.high}]")
        if self.kind == "log_uniform" and self.low <= 0:
            raise ValueError("log_uniform domain needs low > 0")

    # the density model lives in the transformed (internal) space
    @property
    def bounds(self) -> tuple[float, float]:
        if self.kind == "log_uniform":
            return math.log(self.low), math.log(self.high)
        return float(self.low), float(self.high)

    def to_internal(self, value: float) -> float:
        return math.log(value) if self.kind == "log_uniform" else float(value)

    def from_internal(self, z: float):
        lo, hi = self.bounds
        z = min(max(z, lo), hi)
        if self.kind == "log_uniform":
            return min(max(math.exp(z), self.low), self.high)
        if self.kind == "int_uniform":
            return int(min(max(round(z), self.low), self.high))
        return z

    def contains(self, value) -> bool:
        if self.kind == "int_uniform" and value != int(value):
            return False
        return self.low <= value <= self.high


SearchSpace = dict  # name -> Domain

DEFAULT_SPACE: dict[str, Domain] = {
    "max_depth": Domain("int_uniform", 4, 25),
    "eta": Domain("log_uniform", 0.01, 0.3),
    "subsample": Domain("uniform", 0.5, 1.0),
    "colsample": Domain("uniform", 0.5, 1.0),
    "lambda": Domain("log_uniform", 1e-3, 10.0),
    "gamma": Domain("uniform", 0.0, 5.0),
    "min_child_weight": Domain("int_uniform", 1, 10),
}


def load_space(path: str | os.PathLike) -> dict[str, Domain]:
    """Read ``{"name": {"type": ..., "low": ..., "high": ...}}`` from JSON."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return {name: Domain(spec["type"], spec["low"], spec["high"]) for name, spec in raw.items()}


@dataclass
class TrialRecord:
    trial_id: int
    params: dict
    objective: float = math.nan
    status: str = "complete"
    n_rounds: int | None = None
    seconds: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self))


# ---------------------------------------------------------------- Parzen estimator


class _Parzen:
    """Mixture of domain-truncated Gaussians at ``points`` plus a uniform prior."""

    def __init__(self, points: np.ndarray, lo: float, hi: float):
        self.lo, self.hi = lo, hi
        width = hi - lo
        self.mus = np.sort(np.asarray(points, dtype=np.float64))
        n = self.mus.size
        if n > 1:
            d = np.diff(self.mus)
            left = np.concatenate([[0.0], d])
            right = np.concatenate([d, [0.0]])
            # the floor shrinks as evidence accumulates; a fixed tiny floor lets the
            # good density collapse onto its first cluster
            floor = max(SIGMA_MIN_FRACTION, 1.0 / min(100, n + 1)) * width
            self.sigmas = np.clip(np.maximum(left, right), floor, width)
        else:
            self.sigmas = np.full(n, width)
        # n point kernels and one prior kernel, equally weighted
        self.weight = 1.0 / (n + 1)
        a = (lo - self.mus) / self.sigmas if n else np.zeros(0)
        b = (hi - self.mus) / self.sigmas if n else np.zeros(0)
        self._cdf_lo, self._cdf_hi = ndtr(a), ndtr(b)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        n = self.mus.size
        comp = rng.integers(0, n + 1, size=size)
        u = rng.random(size)
        out = np.empty(size)
        prior = comp == n
        out[prior] = self.lo + u[prior] * (self.hi - self.lo)
        k = comp[~prior]
        if k.size:
            p = self._cdf_lo[k] + u[~prior] * (self._cdf_hi[k] - self._cdf_lo[k])
            z = ndtri(np.clip(p, 1e-300, 1 - 1e-16))
            out[~prior] = np.clip(self.mus[k] + self.sigmas[k] * z, self.lo, self.hi)
        return out

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        dens = np.full(x.shape, self.weight / (self.hi - self.lo))
        if self.mus.size:
            z = (x[:, None] - self.mus[None, :]) / self.sigmas[None, :]
            mass = np.maximum(self._cdf_hi - self._cdf_lo, 1e-300)
            kern = np.exp(-0.5 * z * z) / (math.sqrt(2 * math.pi) * self.sigmas * mass)
            dens = dens + self.weight * kern.sum(axis=1)
        return np.log(dens)


def _split_good_bad(history: list[TrialRecord]) -> tuple[list[TrialRecord], list[TrialRecord]]:
    done = [t for t in history if t.status == "complete" and math.isfinite(t.objective)]
    ranked = sorted(done, key=lambda t: (t.objective, t.trial_id))
    n_good = max(1, math.ceil(GAMMA * len(ranked)))
    return ranked[:n_good], ranked[n_good:]


def tpe_suggest(
    history: list[TrialRecord],
    space: Mapping[str, Domain],
    rng: np.random.Generator,
    n_startup: int = N_STARTUP,
    n_candidates: int = N_CANDIDATES,
) -> dict:
    if not space:
        raise ValueError("empty search space")
    done = [t for t in history if t.status == "complete" and math.isfinite(t.objective)]
    params = {}
    if len(done) < n_startup:
        for name, dom in space.items():
            lo, hi = dom.bounds
            params[name] = dom.from_internal(lo + rng.random() * (hi - lo))
        return params
    good, bad = _split_good_bad(done)
    for name, dom in space.items():
        lo, hi = dom.bounds
        l = _Parzen(np.array([dom.to_internal(t.params[name]) for t in good]), lo, hi)
        g = _Parzen(np.array([dom.to_internal(t.params[name]) for t in bad]), lo, hi)
        cand = l.sample(rng, n_candidates)
        score = l.log_pdf(cand) - g.log_pdf(cand)
        params[name] = dom.from_internal(float(cand[int(np.argmax(score))]))
    return params


def minimize(
    objective: Callable[[dict], float],
    space: Mapping[str, Domain],
    n_trials: int = 50,
    seed: int = 0,
    sampler: str = "tpe",
) -> list[TrialRecord]:
    """Sequentially evaluate ``n_trials`` suggestions; ``sampler="random"`` skips the model."""
    rng = np.random.default_rng(seed)
    history: list[TrialRecord] = []
    for trial_id in range(n_trials):
        startup = n_trials + 1 if sampler == "random" else N_STARTUP
        params = tpe_suggest(history, space, rng, n_startup=startup)
        start = time.perf_counter()
        try:
            value = float(objective(params))
            status = "complete" if math.isfinite(value) else "failed"
        except (ValueError, FloatingPointError) as exc:
            logger.warning("trial %d failed: %s", trial_id, exc)
            value, status = math.nan, "failed"
        history.append(TrialRecord(trial_id, params, value, status, seconds=time.perf_counter() - start))
    return history


def best_trial(history: list[TrialRecord]) -> TrialRecord:
    done = [t for t in history if t.status == "complete" and math.isfinite(t.objective)]
    if not done:
        raise RuntimeError("all trials failed")
    return min(done, key=lambda t: (t.objective, t.trial_id))


def validation_split(n: int, seed: int, fraction: float = VALID_FRACTION) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint ascending (train, valid) row indices with ``fraction`` held out."""
    rng = np.random.default_rng(seed)
    n_valid = max(1, int(round(fraction * n)))
    valid = np.sort(rng.choice(n, n_valid, replace=False))
    mask = np.ones(n, bool)
    mask[valid] = False
    return np.flatnonzero(mask), valid


@dataclass
class TuneResult:
    params: TrainParams
    trials: list[TrialRecord] = field(default_factory=list)
    train_rows: np.ndarray | None = None
    valid_rows: np.ndarray | None = None


def tune(
    X,
    y,
    space: Mapping[str, Domain] | None = None,
    n_trials: int = 50,
    seed: int = 0,
    base_params: TrainParams | None = None,
    sampler: str = "tpe",
    n_jobs: int = 1,
) -> TuneResult:
    """Pick booster parameters by validation RMSE on a seeded 10% hold-out.

    The caller is expected to retrain on all rows with the returned params;
    ``max_rounds`` in them is the best trial's early-stopped round count.
    """
    space = dict(space or DEFAULT_SPACE)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(y) < 20:
        raise ValueError(f"tuning needs at least 20 samples, got {len(y)}")
    base_params = base_params or TrainParams(seed=seed)
    tr, va = validation_split(len(y), seed)
    blocks = ColumnBlocks.from_matrix(X[tr])
    rounds: list[int | None] = []

    def objective(sampled: dict) -> float:
        rounds.append(None)
        params = base_params.replace(**sampled)
        model, hist = train(blocks, y[tr], params, valid=(X[va], y[va]), n_jobs=n_jobs)
        rounds[-1] = len(model.trees)
        return min(hist.valid_rmse) if hist.valid_rmse else math.inf

    trials = minimize(objective, space, n_trials, seed, sampler)
    for t in trials:
        t.n_rounds = rounds[t.trial_id]
    best = best_trial(trials)
    params = base_params.replace(**best.params, max_rounds=max(1, best.n_rounds or 1))
    return TuneResult(params, trials, tr, va)


def write_trial_log(path: str | os.PathLike, trials: list[TrialRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in trials:
            fh.write(t.to_json() + "\n")


def read_trial_log(path: str | os.PathLike) -> list[TrialRecord]:
    with open(path, encoding="utf-8") as fh:
        return [TrialRecord(**json.loads(line)) for line in fh if line.strip()]
