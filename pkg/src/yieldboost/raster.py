"""Raster cube ingestion, pixel masking and daily-to-composite aggregation.

A cube directory holds ``metadata.json``, ``values.bin`` (little-endian
float32, row-major ``(t, h, w, b)``) and an optional ``mask.bin`` with one
byte per ``(h, w)`` pixel (1 = keep).  Missing pixels are stored as NaN;
the validity grid is always derived from the payload.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

NODATA = np.float32(np.nan)
COMPOSITE_DAYS = 8

BAND_NAMES = (
    "sur_refl_b01",
    "sur_refl_b02",
    "sur_refl_b03",
    "sur_refl_b04",
    "sur_refl_b05",
    "sur_refl_b06",
    "sur_refl_b07",
    "lst_day",
    "lst_night",
    "prcp",
    "vp",
)
NIR_BAND = 1

# first composite of the season; in-year cubes end at day 201, end-of-year at 321
FIRST_DAY = 49
IN_YEAR_STEPS = 19
END_OF_YEAR_STEPS = 34

_META_KEYS = ("county_id", "year", "t_steps", "height", "width", "bands", "band_names", "start_days")


class CubeFormatError(ValueError):
    """Raised when a cube directory or cube object is malformed."""


def default_start_days(t_steps: int, first_day: int = FIRST_DAY) -> list[int]:
    return [first_day + COMPOSITE_DAYS * t for t in range(t_steps)]


def _check_start_days(start_days: Sequence[int], t_steps: int) -> None:
    if len(start_days) != t_steps:
        raise CubeFormatError(f"expected {t_steps} start_days, got {len(start_days)}")
    for a, b in zip(start_days, start_days[1:]):
        if b - a != COMPOSITE_DAYS:
            raise CubeFormatError(f"start_days stride ≠ 8 ({a} -> {b})")


@dataclass
class RasterCube:
    """One county-year stack of 8-day composites, shape ``(t, h, w, b)``."""

    county_id: str
    year: int
    values: np.ndarray
    band_names: list[str] = field(default_factory=lambda: list(BAND_NAMES))
    start_days: list[int] | None = None

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 4:
            raise CubeFormatError(f"values must be 4-d (t, h, w, b), got shape {values.shape}")
        if values.shape[3] != len(self.band_names):
            raise CubeFormatError(
                f"{values.shape[3]} bands in payload but {len(self.band_names)} band names"
            )
        if self.start_days is None:
            self.start_days = default_start_days(values.shape[0])
        self.start_days = [int(d) for d in self.start_days]
        _check_start_days(self.start_days, values.shape[0])
        # a pixel is either fully valid or fully nodata across bands
        invalid = np.isnan(values).any(axis=-1)
        if invalid.any() and not np.isnan(values[invalid]).all():
            values = values.copy()
            values[invalid] = NODATA
        self.values = values

    @property
    def t_steps(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    @property
    def bands(self) -> int:
        return self.values.shape[3]

    @property
    def valid(self) -> np.ndarray:
        """Boolean ``(t, h, w)`` grid of usable pixels."""
        return ~np.isnan(self.values[..., 0])

    def truncate(self, t_steps: int) -> "RasterCube":
        """Keep only the first ``t_steps`` composites (in-year view)."""
        if not 0 < t_steps <= self.t_steps:
            raise ValueError(f"cannot truncate {self.t_steps} steps to {t_steps}")
        return RasterCube(
            self.county_id,
            self.year,
            self.values[:t_steps],
            list(self.band_names),
            self.start_days[:t_steps],
        )

    def metadata(self) -> dict:
        return {
            "county_id": self.county_id,
            "year": int(self.year),
            "t_steps": self.t_steps,
            "height": self.height,
            "width": self.width,
            "bands": self.bands,
            "band_names": list(self.band_names),
            "start_days": list(self.start_days),
        }


@dataclass
class PixelMask:
    keep: np.ndarray

    def __post_init__(self) -> None:
        self.keep = np.asarray(self.keep, dtype=bool)
        if self.keep.ndim != 2:
            raise ValueError("mask must be a 2-d (h, w) grid")

    @property
    def height(self) -> int:
        return self.keep.shape[0]

    @property
    def width(self) -> int:
        return self.keep.shape[1]


def apply_mask(cube: RasterCube, mask: PixelMask) -> RasterCube:
    """Invalidate every pixel that the mask does not keep, at every step."""
    if (mask.height, mask.width) != (cube.height, cube.width):
        raise ValueError(
            f"mask is {mask.height}x{mask.width} but cube is {cube.height}x{cube.width}"
        )
    values = cube.values.copy()
    values[:, ~mask.keep, :] = NODATA
    return RasterCube(cube.county_id, cube.year, values, list(cube.band_names), list(cube.start_days))


def composite_daily(
    daily: np.ndarray | Sequence[np.ndarray],
    window_start_days: Sequence[int],
    first_day: int = 1,
) -> np.ndarray:
    """Average daily grids into 8-day windows.

    ``daily[i]`` is the grid for day-of-year ``first_day + i``.  Window ``w``
    covers days ``start .. start + 7`` inclusive.  Each output cell is the
    mean of the non-NaN daily cells in its window, NaN if none are valid.
    """
    stack = np.asarray(daily, dtype=np.float64)
    n_days = stack.shape[0]
    out = np.full((len(window_start_days),) + stack.shape[1:], np.nan)
    for w, start in enumerate(window_start_days):
        lo = int(start) - first_day
        hi = lo + COMPOSITE_DAYS
        if lo < 0 or hi > n_days:
            raise ValueError(
                f"window starting on day {start} needs days {start}..{start + 7}, "
                f"have {first_day}..{first_day + n_days - 1}"
            )
        window = stack[lo:hi]
        ok = ~np.isnan(window)
        n = ok.sum(axis=0)
        # shift by the window minimum so constant windows come back exactly
        shift = np.where(n > 0, np.min(np.where(ok, window, np.inf), axis=0), 0.0)
        resid = np.where(ok, window - shift, 0.0).sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            out[w] = np.where(n > 0, shift + resid / np.maximum(n, 1), np.nan)
    return out


def write_cube(cube: RasterCube, path: str | os.PathLike, mask: PixelMask | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "metadata.json", "w", encoding="utf-8") as fh:
        json.dump(cube.metadata(), fh, indent=1)
    cube.values.astype("<f4").tofile(path / "values.bin")
    if mask is not None:
        mask.keep.astype(np.uint8).tofile(path / "mask.bin")
    return path


def _read_metadata(path: Path) -> dict:
    try:
        with open(path / "metadata.json", encoding="utf-8") as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CubeFormatError(f"{path}: metadata.json is not valid JSON: {exc}") from exc
    missing = [k for k in _META_KEYS if k not in meta]
    if missing:
        raise CubeFormatError(f"{path}: metadata missing keys {missing}")
    for key in ("year", "t_steps", "height", "width", "bands"):
        if not isinstance(meta[key], int) or meta[key] < 0:
            raise CubeFormatError(f"{path}: metadata {key!r} must be a non-negative integer")
    if len(meta["band_names"]) != meta["bands"]:
        raise CubeFormatError(f"{path}: band_names has {len(meta['band_names'])} entries, bands={meta['bands']}")
    return meta


def load_cube(path: str | os.PathLike) -> RasterCube:
    path = Path(path)
    meta = _read_metadata(path)
    _check_start_days(meta["start_days"], meta["t_steps"])
    shape = (meta["t_steps"], meta["height"], meta["width"], meta["bands"])
    raw = np.fromfile(path / "values.bin", dtype="<f4")
    if raw.size != int(np.prod(shape)):
        raise CubeFormatError(
            f"{path}: payload size mismatch ({raw.size} floats, expected {int(np.prod(shape))})"
        )
    return RasterCube(
        str(meta["county_id"]),
        meta["year"],
        raw.reshape(shape).astype(np.float32),
        list(meta["band_names"]),
        list(meta["start_days"]),
    )


def load_mask(path: str | os.PathLike) -> PixelMask | None:
    """Read ``mask.bin`` from a cube directory, or None if it has none."""
    path = Path(path)
    if not (path / "mask.bin").exists():
        return None
    meta = _read_metadata(path)
    raw = np.fromfile(path / "mask.bin", dtype=np.uint8)
    if raw.size != meta["height"] * meta["width"]:
        raise CubeFormatError(f"{path}: mask size mismatch")
    return PixelMask(raw.reshape(meta["height"], meta["width"]) == 1)


def find_cube_dirs(root: str | os.PathLike) -> list[Path]:
    """All directories under ``root`` that contain a ``metadata.json``, sorted."""
    return sorted(p.parent for p in Path(root).rglob("metadata.json"))
