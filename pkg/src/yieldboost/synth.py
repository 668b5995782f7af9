"""Seeded synthetic county-yield world.

Every county has a fixed centroid, pixel grid, cropland mask and fertility
latent; every county-year has a weather latent (shared in part across the
county's state) and a canopy latent.  Their combination, the canopy vigor,
drives a mid-season bump in the near-infrared reflectance band, and the
yield is an affine function of fertility, weather and vigor plus a linear
calendar trend and Gaussian noise.  Pixels are skew-normal around smooth
seasonal curves, so quantile triples capture the signal.

Cubes are generated on demand from per-(county, year) seeds, which keeps
memory flat and makes the output independent of generation order.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .raster import BAND_NAMES, NIR_BAND, PixelMask, RasterCube, default_start_days, write_cube

SKEW_ALPHA = 3.0
BASE_YIELD = 45.0
# yield = BASE + trend + VIGOR_W * vigor + FERT_W * fertility + WEATHER_W * weather
VIGOR_W, FERT_W, WEATHER_W = 6.0, 1.0, 0.5
NIR_BUMP_DAY, NIR_BUMP_WIDTH, NIR_BUMP_AMP = 225.0, 20.0, 0.06

# (base, seasonal amplitude, pixel scale, weather coefficient) per band
_BAND_MODEL = {
    "sur_refl_b01": (0.08, -0.04, 0.015, 0.0),
    "sur_refl_b02": (0.20, 0.25, 0.02, 0.0),
    "sur_refl_b03": (0.05, -0.01, 0.01, 0.0),
    "sur_refl_b04": (0.08, 0.02, 0.012, 0.0),
    "sur_refl_b05": (0.25, 0.10, 0.02, 0.0),
    "sur_refl_b06": (0.20, 0.05, 0.02, 0.0),
    "sur_refl_b07": (0.12, -0.04, 0.015, 0.0),
    "lst_day": (285.0, 20.0, 1.5, 1.5),
    "lst_night": (272.0, 15.0, 1.2, 1.0),
    "prcp": (3.0, 1.0, 0.5, -0.8),
    "vp": (800.0, 1500.0, 60.0, 100.0),
}


@dataclass
class WorldConfig:
    n_counties: int = 800
    years: tuple[int, int] = (2003, 2021)
    grid_size: tuple[int, int] = (6, 10)
    t_steps: int = 34
    noise_sd: float = 2.0
    trend_per_year: float = 0.5
    n_states: int = 13
    masked_step_fraction: float = 0.1
    cropland_fraction: float = 0.7
    fertility_sd: float = 1.0
    weather_sd: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        self.years = tuple(int(y) for y in self.years)
        self.grid_size = tuple(int(g) for g in self.grid_size)
        if self.n_counties < 1:
            raise ValueError("n_counties must be >= 1")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if self.years[0] > self.years[1]:
            raise ValueError("years must be an increasing (first, last) pair")
        if not 1 <= self.grid_size[0] <= self.grid_size[1]:
            raise ValueError("grid_size must be (min, max) with 1 <= min <= max")

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "WorldConfig":
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))

    @property
    def year_list(self) -> list[int]:
        return list(range(self.years[0], self.years[1] + 1))


@dataclass
class World:
    config: WorldConfig
    county_ids: list[str]
    states: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    heights: np.ndarray
    widths: np.ndarray
    fertility: np.ndarray
    weather: np.ndarray  # (county, year)
    canopy: np.ndarray  # (county, year)
    noiseless: np.ndarray  # (county, year)
    yields: np.ndarray  # (county, year)
    masks: list[PixelMask] = field(repr=False, default_factory=list)

    @property
    def years(self) -> list[int]:
        return self.config.year_list

    @property
    def vigor(self) -> np.ndarray:
        return vigor(self.fertility[:, None], self.weather, self.canopy)

    def yield_table(self) -> dict[tuple[str, int], float]:
        return {
            (cid, year): float(self.yields[c, k])
            for c, cid in enumerate(self.county_ids)
            for k, year in enumerate(self.years)
        }

    def centroids(self) -> dict[str, tuple[float, float]]:
        return {cid: (float(self.lat[c]), float(self.lon[c])) for c, cid in enumerate(self.county_ids)}

    def cube(self, county: int, year: int) -> RasterCube:
        cfg = self.config
        k = year - cfg.years[0]
        rng = np.random.default_rng([cfg.seed, 1, county, year])
        days = np.array(default_start_days(cfg.t_steps), dtype=np.float64)
        loc = band_locations(days, self.weather[county, k], self.vigor[county, k])
        scale = np.array([_BAND_MODEL[b][2] for b in BAND_NAMES])
        h, w = int(self.heights[county]), int(self.widths[county])
        shape = (cfg.t_steps, h, w, len(BAND_NAMES))
        delta = SKEW_ALPHA / math.sqrt(1.0 + SKEW_ALPHA**2)
        z = rng.standard_normal((2, *shape), dtype=np.float32)
        skew = delta * np.abs(z[0]) + math.sqrt(1.0 - delta**2) * z[1] - delta * math.sqrt(2.0 / math.pi)
        values = (loc[:, None, None, :] + scale * skew).astype(np.float32)
        values[..., BAND_NAMES.index("prcp")] = np.maximum(values[..., BAND_NAMES.index("prcp")], 0.0)
        dropped = rng.random(cfg.t_steps) < cfg.masked_step_fraction
        values[dropped] = np.nan
        return RasterCube(self.county_ids[county], year, values, list(BAND_NAMES), days.astype(int).tolist())

    def iter_cubes(self) -> Iterator[tuple[RasterCube, PixelMask]]:
        for year in self.years:
            for c in range(len(self.county_ids)):
                yield self.cube(c, year), self.masks[c]

    def truth(self) -> dict:
        noisy, clean = self.yields.ravel(), self.noiseless.ravel()
        slope, intercept = np.polyfit(clean, noisy, 1)
        resid = noisy - (slope * clean + intercept)
        return {
            "config": asdict(self.config),
            "bayes_r2": float(1.0 - resid.var() / noisy.var()) if noisy.var() > 0 else 1.0,
            "nir_band": BAND_NAMES[NIR_BAND],
            "nir_bump_day": NIR_BUMP_DAY,
            "yield_weights": {"vigor": VIGOR_W, "fertility": FERT_W, "weather": WEATHER_W},
            "counties": [
                {"county_id": cid, "state": int(self.states[c]), "fertility": float(self.fertility[c])}
                for c, cid in enumerate(self.county_ids)
            ],
            "county_years": [
                {
                    "county_id": cid,
                    "year": year,
                    "weather": float(self.weather[c, k]),
                    "canopy": float(self.canopy[c, k]),
                    "noiseless_yield": float(self.noiseless[c, k]),
                }
                for c, cid in enumerate(self.county_ids)
                for k, year in enumerate(self.years)
            ],
        }


def vigor(fertility, weather, canopy):
    return 0.5 * fertility + 0.6 * weather + 0.6 * canopy


def band_locations(days: np.ndarray, weather: float, vig: float) -> np.ndarray:
    """Mean pixel value per (step, band) for one county-year."""
    green = np.exp(-(((days - 200.0) / 45.0) ** 2))
    season = np.exp(-(((days - 200.0) / 70.0) ** 2))
    bump = np.exp(-(((days - NIR_BUMP_DAY) / NIR_BUMP_WIDTH) ** 2))
    loc = np.empty((days.size, len(BAND_NAMES)))
    for b, name in enumerate(BAND_NAMES):
        base, amp, _, wcoef = _BAND_MODEL[name]
        curve = green if name.startswith("sur_refl") else season
        loc[:, b] = base + amp * curve + wcoef * weather
    loc[:, NIR_BAND] += NIR_BUMP_AMP * vig * bump
    return loc


def generate_world(config: WorldConfig | None = None) -> World:
    cfg = config or WorldConfig()
    rng = np.random.default_rng([cfg.seed, 0])
    C, years = cfg.n_counties, cfg.year_list
    Y = len(years)

    states = np.arange(C) % cfg.n_states
    state_lat = rng.uniform(37.0, 47.0, cfg.n_states)
    state_lon = rng.uniform(-98.0, -82.0, cfg.n_states)
    lat = state_lat[states] + rng.normal(0.0, 0.8, C)
    lon = state_lon[states] + rng.normal(0.0, 0.8, C)
    per_state = np.zeros(cfg.n_states, int)
    county_ids = []
    for s in states:
        per_state[s] += 1
        county_ids.append(f"{s + 1:02d}{2 * per_state[s] - 1:03d}")
    lo, hi = cfg.grid_size
    heights = rng.integers(lo, hi + 1, C)
    widths = rng.integers(lo, hi + 1, C)
    masks = []
    for c in range(C):
        keep = rng.random((heights[c], widths[c])) < cfg.cropland_fraction
        if keep.sum() < min(2, keep.size):
            keep.flat[: min(2, keep.size)] = True
        masks.append(PixelMask(keep))

    fertility = cfg.fertility_sd * rng.standard_normal(C)
    state_weather = rng.standard_normal((cfg.n_states, Y))
    weather = cfg.weather_sd * (0.8 * state_weather[states] + 0.6 * rng.standard_normal((C, Y)))
    canopy = cfg.weather_sd * rng.standard_normal((C, Y))
    vig = vigor(fertility[:, None], weather, canopy)
    trend = cfg.trend_per_year * (np.array(years) - years[0])
    noiseless = BASE_YIELD + trend[None, :] + VIGOR_W * vig + FERT_W * fertility[:, None] + WEATHER_W * weather
    yields = np.maximum(noiseless + cfg.noise_sd * rng.standard_normal((C, Y)), 0.0)
    return World(cfg, county_ids, states, lat, lon, heights, widths, fertility, weather, canopy, noiseless, yields, masks)


def write_world(world: World, out: str | os.PathLike) -> Path:
    """Cube directories plus yields.csv, counties.csv and truth.json under ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for cube, mask in world.iter_cubes():
        write_cube(cube, out / "cubes" / cube.county_id / str(cube.year), mask)
    with open(out / "yields.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["county_id", "year", "yield_bu_ac"])
        for (cid, year), value in world.yield_table().items():
            w.writerow([cid, year, repr(value)])
    with open(out / "counties.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["county_id", "lat", "lon"])
        for cid, (la, lo) in world.centroids().items():
            w.writerow([cid, repr(la), repr(lo)])
    with open(out / "truth.json", "w", encoding="utf-8") as fh:
        json.dump(world.truth(), fh)
    return out


def read_yields(path: str | os.PathLike) -> dict[tuple[str, int], float]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {(r["county_id"], int(r["year"])): float(r["yield_bu_ac"]) for r in csv.DictReader(fh)}


def read_counties(path: str | os.PathLike) -> dict[str, tuple[float, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {r["county_id"]: (float(r["lat"]), float(r["lon"])) for r in csv.DictReader(fh)}
