"""Per-band distribution features, histograms and the handcrafted covariates.

Every (step, band) image of a masked cube is reduced either to a triple
(20% quantile, median, 80% quantile) or to a 32-bin relative-frequency
histogram.  Triples are laid out time-major with the triple innermost::

    index(t, b, s) = (t * bands + b) * 3 + s      s: 0=q20, 1=median, 2=q80

and seven handcrafted covariates are appended after the remote-sensing block.
Feature values are float32, as in most boosting libraries' input matrices.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .raster import BAND_NAMES, END_OF_YEAR_STEPS, IN_YEAR_STEPS, PixelMask, RasterCube, apply_mask

N_BINS = 32
QUANTILES = (0.2, 0.5, 0.8)
STAT_NAMES = ("q20", "median", "q80")
HANDCRAFTED = (
    "latitude",
    "longitude",
    "year",
    "years_since_2003",
    "prev_avg_yield",
    "trend_intercept",
    "trend_slope",
)
N_HANDCRAFTED = len(HANDCRAFTED)
PREV_YIELD_WINDOW = 5
BASE_YEAR = 2003
BU_AC_TO_KG_HA = 67.26

# theoretical value ranges of the synthetic generator's bands
DEFAULT_BAND_RANGES: dict[str, tuple[float, float]] = {
    **{f"sur_refl_b0{i}": (0.0, 1.0) for i in range(1, 8)},
    "lst_day": (260.0, 330.0),
    "lst_night": (250.0, 310.0),
    "prcp": (0.0, 20.0),
    "vp": (0.0, 4000.0),
}


class BandHistogram(NamedTuple):
    freqs: np.ndarray
    band_range: tuple[float, float]
    valid_count: int


class DistributionTriple(NamedTuple):
    q20: float
    median: float
    q80: float


@dataclass
class FeatureVector:
    rs_features: np.ndarray
    handcrafted: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return np.concatenate([self.rs_features, self.handcrafted]).astype(np.float32)

    def __len__(self) -> int:
        return self.rs_features.size + self.handcrafted.size


@dataclass
class Sample:
    county_id: str
    year: int
    features: np.ndarray
    label: float = math.nan


class LeakageError(ValueError):
    """Raised when data from the prediction year (or later) reaches a model input."""


class TableFormatError(ValueError):
    pass


def feature_index(t: int, b: int, s: int, bands: int = len(BAND_NAMES)) -> int:
    return (t * bands + b) * 3 + s


def decode_feature_index(index: int, bands: int = len(BAND_NAMES)) -> tuple[int, int, int]:
    cell, s = divmod(index, 3)
    t, b = divmod(cell, bands)
    return t, b, s


def feature_length(t_steps: int, bands: int = len(BAND_NAMES)) -> int:
    return 3 * bands * t_steps + N_HANDCRAFTED


def feature_names(t_steps: int, band_names: Sequence[str] = BAND_NAMES, start_days=None) -> list[str]:
    if start_days is None:
        start_days = [49 + 8 * t for t in range(t_steps)]
    names = [
        f"{band}_d{start_days[t]:03d}_{stat}"
        for t in range(t_steps)
        for band in band_names
        for stat in STAT_NAMES
    ]
    return names + list(HANDCRAFTED)


# ---------------------------------------------------------------- per-image stats


def _pixel_stack(cube: RasterCube) -> tuple[np.ndarray, np.ndarray]:
    """Pixels sorted per (step, band) with NaNs last, plus valid counts per step."""
    t, h, w, b = cube.values.shape
    flat = cube.values.reshape(t, h * w, b).astype(np.float64)
    return np.sort(flat, axis=1), cube.valid.reshape(t, h * w).sum(axis=1)


def _interpolated_quantiles(sorted_px: np.ndarray, n: np.ndarray, p: float) -> np.ndarray:
    """Linear interpolation between order statistics at 1-based position (n-1)*p + 1.

    ``sorted_px`` is ``(t, pixels, bands)`` with valid values first.
    """
    n_b = np.broadcast_to(n[:, None], (sorted_px.shape[0], sorted_px.shape[2]))
    h = (n_b - 1) * p + 1.0
    k = np.floor(np.maximum(h, 1.0))
    frac = h - k
    lo = k.astype(np.int64) - 1
    hi = np.minimum(lo + 1, np.maximum(n_b - 1, 0))
    x_lo = np.take_along_axis(sorted_px, lo[:, None, :], axis=1)[:, 0, :]
    x_hi = np.take_along_axis(sorted_px, hi[:, None, :], axis=1)[:, 0, :]
    out = x_lo + frac * (x_hi - x_lo)
    out[n_b == 0] = np.nan
    return out


def cube_triples(cube: RasterCube) -> np.ndarray:
    """``(t, bands, 3)`` array of (q20, median, q80) over valid pixels."""
    if cube.height * cube.width == 0:
        return np.full((cube.t_steps, cube.bands, 3), np.nan)
    sorted_px, n = _pixel_stack(cube)
    return np.stack([_interpolated_quantiles(sorted_px, n, p) for p in QUANTILES], axis=-1)


def summarize_distribution(cube: RasterCube, band: int, step: int) -> DistributionTriple:
    _check_index(cube, band, step)
    one = RasterCube(
        cube.county_id,
        cube.year,
        cube.values[step : step + 1, :, :, band : band + 1],
        [cube.band_names[band]],
        [cube.start_days[step]],
    )
    q = cube_triples(one)[0, 0]
    return DistributionTriple(float(q[0]), float(q[1]), float(q[2]))


def _bin_edges(band_range: tuple[float, float]) -> np.ndarray:
    lo, hi = float(band_range[0]), float(band_range[1])
    if not lo < hi:
        raise ValueError(f"band range must satisfy min < max, got {band_range}")
    width = (hi - lo) / N_BINS
    return np.array([lo + i * width for i in range(N_BINS + 1)])


def _bin_of(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    # out-of-range values land in the edge bins; the max itself belongs to the last bin
    return np.searchsorted(edges[1:N_BINS], values, side="right")


def histogramize(
    cube: RasterCube, band: int, step: int, band_range: tuple[float, float]
) -> BandHistogram:
    _check_index(cube, band, step)
    edges = _bin_edges(band_range)
    px = cube.values[step, :, :, band].astype(np.float64).ravel()
    px = px[~np.isnan(px)]
    freqs = np.zeros(N_BINS)
    if px.size:
        counts = np.bincount(_bin_of(px, edges), minlength=N_BINS)
        freqs = counts / px.size
    return BandHistogram(freqs, (float(band_range[0]), float(band_range[1])), int(px.size))


def cube_histograms(cube: RasterCube, band_ranges: Mapping[str, tuple[float, float]] | None = None) -> np.ndarray:
    """``(t, bands, 32)`` relative frequencies for every image of the cube."""
    band_ranges = band_ranges or DEFAULT_BAND_RANGES
    out = np.zeros((cube.t_steps, cube.bands, N_BINS))
    n = cube.valid.reshape(cube.t_steps, -1).sum(axis=1)
    flat = cube.values.reshape(cube.t_steps, -1, cube.bands).astype(np.float64)
    for b, name in enumerate(cube.band_names):
        edges = _bin_edges(band_ranges[name])
        for t in range(cube.t_steps):
            if n[t] == 0:
                continue
            px = flat[t, :, b]
            counts = np.bincount(_bin_of(px[~np.isnan(px)], edges), minlength=N_BINS)
            out[t, b] = counts / n[t]
    return out


def _check_index(cube: RasterCube, band: int, step: int) -> None:
    if not 0 <= band < cube.bands:
        raise IndexError(f"band {band} out of range for a {cube.bands}-band cube")
    if not 0 <= step < cube.t_steps:
        raise IndexError(f"step {step} out of range for a {cube.t_steps}-step cube")


# ---------------------------------------------------------------- handcrafted features


def _ols(years: Sequence[float], yields: Sequence[float]) -> tuple[float, float] | None:
    x = np.asarray(years, dtype=np.float64)
    y = np.asarray(yields, dtype=np.float64)
    if np.unique(x).size < 2:
        return None
    xm, ym = x.mean(), y.mean()
    slope = float(((x - xm) * (y - ym)).sum() / ((x - xm) ** 2).sum())
    return ym - slope * xm, slope


def handcrafted_features(
    year: int,
    lat: float,
    lon: float,
    history: Mapping[int, float],
    pooled: Sequence[tuple[int, float]] = (),
) -> np.ndarray:
    """The seven covariates, computed only from yields of years before ``year``.

    ``history`` is this county's year -> yield map, ``pooled`` the (year, yield)
    pairs of every county, used as fallback when the county lacks history.
    """
    pooled = np.asarray(pooled, dtype=np.float64).reshape(-1, 2)
    late = [y for y in history if y >= year]
    if pooled.size and pooled[:, 0].max() >= year:
        late.append(int(pooled[:, 0].max()))
    if late:
        raise LeakageError(f"history for {year} contains year {max(late)}")
    hist = {int(y): float(v) for y, v in history.items() if not math.isnan(v)}
    pooled = pooled[~np.isnan(pooled[:, 1])]
    pooled_mean = float(pooled[:, 1].mean()) if pooled.size else 0.0

    recent = sorted(hist)[-PREV_YIELD_WINDOW:]
    prev_avg = float(np.mean([hist[y] for y in recent])) if recent else pooled_mean

    fit = _ols(list(hist), list(hist.values()))
    if fit is None:
        fit = _ols(pooled[:, 0], pooled[:, 1])
    intercept, slope = fit if fit is not None else (pooled_mean, 0.0)
    return np.array(
        [lat, lon, year, year - BASE_YEAR, prev_avg, intercept, slope], dtype=np.float64
    )


def build_feature_vector(
    cube: RasterCube,
    lat: float,
    lon: float,
    history: Mapping[int, float],
    pooled: Sequence[tuple[int, float]] = (),
) -> FeatureVector:
    hand = handcrafted_features(cube.year, lat, lon, history, pooled)
    rs = cube_triples(cube).reshape(-1)
    return FeatureVector(rs.astype(np.float32), hand.astype(np.float32))


def build_histogram_vector(cube: RasterCube, band_ranges=None) -> np.ndarray:
    return cube_histograms(cube, band_ranges).reshape(-1).astype(np.float32)


# ---------------------------------------------------------------- tables


@dataclass
class FeatureTable:
    """Row-aligned county ids, years, float32 feature matrix and labels."""

    county_ids: np.ndarray
    years: np.ndarray
    X: np.ndarray
    labels: np.ndarray
    kind: str = "triples"

    def __post_init__(self) -> None:
        self.county_ids = np.asarray(self.county_ids, dtype=object)
        self.years = np.asarray(self.years, dtype=np.int64)
        self.X = np.asarray(self.X, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        n = len(self.years)
        if self.X.ndim != 2 or self.X.shape[0] != n or len(self.labels) != n or len(self.county_ids) != n:
            raise TableFormatError("feature table columns have inconsistent lengths")

    def __len__(self) -> int:
        return len(self.years)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def t_steps(self) -> int:
        n_rs = self.n_features - (N_HANDCRAFTED if self.kind == "triples" else 0)
        per_step = len(BAND_NAMES) * (3 if self.kind == "triples" else N_BINS)
        return n_rs // per_step

    def subset(self, rows) -> "FeatureTable":
        return FeatureTable(
            self.county_ids[rows], self.years[rows], self.X[rows], self.labels[rows], self.kind
        )

    def in_year(self, t_steps: int = IN_YEAR_STEPS) -> "FeatureTable":
        """Drop the composites after ``t_steps``, keeping the handcrafted block."""
        if self.kind != "triples":
            raise ValueError("in-year truncation is defined for triple tables")
        n_rs = 3 * len(BAND_NAMES) * t_steps
        full_rs = self.n_features - N_HANDCRAFTED
        if n_rs > full_rs:
            raise ValueError(f"table has only {self.t_steps} steps")
        cols = np.r_[0:n_rs, full_rs : self.n_features]
        return FeatureTable(self.county_ids, self.years, self.X[:, cols], self.labels, self.kind)

    def samples(self) -> list[Sample]:
        return [
            Sample(str(c), int(y), x, float(lab))
            for c, y, x, lab in zip(self.county_ids, self.years, self.X, self.labels)
        ]

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], kind: str = "triples", n_features: int | None = None) -> "FeatureTable":
        if not samples:
            return cls([], [], np.zeros((0, n_features or 0), np.float32), [], kind)
        return cls(
            [s.county_id for s in samples],
            [s.year for s in samples],
            np.stack([np.asarray(s.features, dtype=np.float32) for s in samples]),
            [s.label for s in samples],
            kind,
        )


def _column_names(n: int) -> list[str]:
    width = max(4, len(str(max(n - 1, 0))))
    return [f"f{i:0{width}d}" for i in range(n)]


def _fmt_feature(v) -> str:
    # 9 significant digits reproduce any float32 exactly
    return "" if v != v else "%.8e" % v


def write_feature_table(table: FeatureTable, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["county_id", "year", *_column_names(table.n_features), "label"])
        for cid, year, row, label in zip(table.county_ids, table.years, table.X.tolist(), table.labels):
            writer.writerow(
                [cid, int(year), *map(_fmt_feature, row), "" if math.isnan(label) else repr(float(label))]
            )


def read_feature_table(path: str | os.PathLike, kind: str | None = None) -> FeatureTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TableFormatError(f"{path}: empty file") from None
        if len(header) < 3 or header[:2] != ["county_id", "year"] or header[-1] != "label":
            raise TableFormatError(f"{path}: header must be county_id,year,f...,label")
        n = len(header) - 3
        if header[2:-1] != _column_names(n):
            raise TableFormatError(f"{path}: feature columns are not f0000..f{n - 1}")
        ids, years, rows, labels = [], [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != n + 3:
                raise TableFormatError(f"{path}:{lineno}: {len(rec)} fields, header has {n + 3}")
            ids.append(rec[0])
            years.append(int(rec[1]))
            rows.append([float(v) if v else math.nan for v in rec[2:-1]])
            labels.append(float(rec[-1]) if rec[-1] else math.nan)
    X = np.array(rows, dtype=np.float32).reshape(len(rows), n)
    if kind is None:
        kind = "triples" if (n - N_HANDCRAFTED) % (3 * len(BAND_NAMES)) == 0 else "histograms"
    return FeatureTable(ids, years, X, labels, kind)


# ---------------------------------------------------------------- whole-dataset featurization


class YieldHistory:
    """Read-only county -> {year: yield} store that hands out strictly-prior views."""

    def __init__(self, yields: Mapping[tuple[str, int], float]):
        self._by_county: dict[str, dict[int, float]] = {}
        for (cid, year), value in yields.items():
            if value is None or math.isnan(value):
                continue
            self._by_county.setdefault(str(cid), {})[int(year)] = float(value)
        self._pooled_cache: dict[int, np.ndarray] = {}

    def label(self, county_id: str, year: int) -> float:
        return self._by_county.get(county_id, {}).get(year, math.nan)

    def county_before(self, county_id: str, year: int) -> dict[int, float]:
        return {y: v for y, v in self._by_county.get(county_id, {}).items() if y < year}

    def pooled_before(self, year: int) -> np.ndarray:
        """``(k, 2)`` array of (year, yield) over all counties, years before ``year``."""
        if year not in self._pooled_cache:
            pairs = sorted((y, v) for hist in self._by_county.values() for y, v in hist.items() if y < year)
            self._pooled_cache[year] = np.array(pairs, dtype=np.float64).reshape(-1, 2)
        return self._pooled_cache[year]


def build_table(
    cubes: Iterable[tuple[RasterCube, PixelMask | None]],
    yields: Mapping[tuple[str, int], float],
    centroids: Mapping[str, tuple[float, float]],
    mode: str = "endofyear",
    representation: str = "triples",
    band_ranges=None,
) -> FeatureTable:
    """Featurize (cube, mask) pairs into a table, one row per county-year."""
    if mode not in ("inyear", "endofyear"):
        raise ValueError(f"unknown mode {mode!r}")
    if representation not in ("triples", "histograms"):
        raise ValueError(f"unknown representation {representation!r}")
    history = YieldHistory(yields)
    ids, years, rows, labels = [], [], [], []
    for cube, mask in cubes:
        if mask is not None:
            cube = apply_mask(cube, mask)
        if mode == "inyear" and cube.t_steps > IN_YEAR_STEPS:
            cube = cube.truncate(IN_YEAR_STEPS)
        if representation == "triples":
            lat, lon = centroids[cube.county_id]
            fv = build_feature_vector(
                cube,
                lat,
                lon,
                history.county_before(cube.county_id, cube.year),
                history.pooled_before(cube.year),
            )
            rows.append(fv.values)
        else:
            rows.append(build_histogram_vector(cube, band_ranges))
        ids.append(cube.county_id)
        years.append(cube.year)
        labels.append(history.label(cube.county_id, cube.year))
    width = (
        feature_length(IN_YEAR_STEPS if mode == "inyear" else END_OF_YEAR_STEPS)
        if representation == "triples"
        else N_BINS * len(BAND_NAMES) * (IN_YEAR_STEPS if mode == "inyear" else END_OF_YEAR_STEPS)
    )
    X = np.stack(rows) if rows else np.zeros((0, width), np.float32)
    return FeatureTable(ids, years, X, labels, representation)
