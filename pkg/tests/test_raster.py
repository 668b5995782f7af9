import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from yieldboost.raster import (
    BAND_NAMES,
    CubeFormatError,
    PixelMask,
    RasterCube,
    apply_mask,
    composite_daily,
    default_start_days,
    find_cube_dirs,
    load_cube,
    load_mask,
    write_cube,
)


def make_cube(t=2, h=2, w=2, seed=0, county="01001", year=2010):
    values = np.random.default_rng(seed).normal(size=(t, h, w, len(BAND_NAMES))).astype(np.float32)
    return RasterCube(county, year, values)


def test_default_start_days_stride():
    assert default_start_days(3) == [49, 57, 65]
    assert default_start_days(34)[-1] == 49 + 8 * 33


def test_round_trip_is_identity(tmp_path):
    cube = make_cube()
    cube.values[1, 0, 1] = np.nan
    write_cube(cube, tmp_path / "c")
    back = load_cube(tmp_path / "c")
    assert back.metadata() == cube.metadata()
    assert back.values.tobytes() == cube.values.tobytes()
    assert load_mask(tmp_path / "c") is None


def test_payload_layout_is_little_endian_band_fastest(tmp_path):
    cube = make_cube(t=1, h=1, w=2)
    write_cube(cube, tmp_path / "c")
    raw = np.fromfile(tmp_path / "c" / "values.bin", dtype="<f4")
    assert np.array_equal(raw[: len(BAND_NAMES)], cube.values[0, 0, 0])


def test_truncated_payload_rejected(tmp_path):
    write_cube(make_cube(), tmp_path / "c")
    payload = tmp_path / "c" / "values.bin"
    payload.write_bytes(payload.read_bytes()[:-4])
    with pytest.raises(CubeFormatError, match="payload size mismatch"):
        load_cube(tmp_path / "c")


def test_bad_stride_rejected(tmp_path):
    write_cube(make_cube(), tmp_path / "c")
    meta_path = tmp_path / "c" / "metadata.json"
    meta = json.loads(meta_path.read_text())
    meta["start_days"] = [49, 58]
    meta_path.write_text(json.dumps(meta))
    with pytest.raises(CubeFormatError, match="stride ≠ 8"):
        load_cube(tmp_path / "c")


def test_missing_metadata_key_rejected(tmp_path):
    write_cube(make_cube(), tmp_path / "c")
    meta_path = tmp_path / "c" / "metadata.json"
    meta = json.loads(meta_path.read_text())
    del meta["width"]
    meta_path.write_text(json.dumps(meta))
    with pytest.raises(CubeFormatError):
        load_cube(tmp_path / "c")


def test_mask_file_round_trip(tmp_path):
    keep = np.array([[True, False], [False, True]])
    write_cube(make_cube(), tmp_path / "a" / "2010", PixelMask(keep))
    write_cube(make_cube(year=2011), tmp_path / "a" / "2011")
    assert np.array_equal(load_mask(tmp_path / "a" / "2010").keep, keep)
    assert [p.name for p in find_cube_dirs(tmp_path)] == ["2010", "2011"]


def test_partially_missing_pixel_becomes_nodata():
    cube = make_cube()
    values = cube.values.copy()
    values[0, 1, 1, 3] = np.nan
    fixed = RasterCube("x", 2010, values)
    assert np.isnan(fixed.values[0, 1, 1]).all()
    assert not fixed.valid[0, 1, 1]


def test_identity_and_annihilating_masks():
    cube = make_cube()
    same = apply_mask(cube, PixelMask(np.ones((2, 2), bool)))
    assert same.values.tobytes() == cube.values.tobytes()
    empty = apply_mask(cube, PixelMask(np.zeros((2, 2), bool)))
    assert empty.valid.sum() == 0


def test_checkerboard_mask_keeps_two_pixels_per_step():
    cube = apply_mask(make_cube(t=3), PixelMask(np.array([[True, False], [False, True]])))
    assert cube.valid.reshape(3, -1).sum(axis=1).tolist() == [2, 2, 2]


def test_mask_dimension_mismatch():
    with pytest.raises(ValueError):
        apply_mask(make_cube(), PixelMask(np.ones((3, 2), bool)))


@given(st.integers(0, 2**16 - 1), st.integers(0, 2**16 - 1))
def test_mask_idempotent_and_commutative(bits1, bits2):
    cube = make_cube(t=2, h=4, w=4, seed=bits1)
    m1 = PixelMask(np.array([(bits1 >> i) & 1 for i in range(16)], bool).reshape(4, 4))
    m2 = PixelMask(np.array([(bits2 >> i) & 1 for i in range(16)], bool).reshape(4, 4))
    once = apply_mask(cube, m1)
    assert apply_mask(once, m1).values.tobytes() == once.values.tobytes()
    a = apply_mask(apply_mask(cube, m1), m2)
    b = apply_mask(apply_mask(cube, m2), m1)
    both = apply_mask(cube, PixelMask(m1.keep & m2.keep))
    assert a.values.tobytes() == b.values.tobytes() == both.values.tobytes()


def test_composite_of_constants():
    out = composite_daily([np.full((2, 2), 5.0)] * 8, [1])
    assert np.array_equal(out, np.full((1, 2, 2), 5.0))


def test_composite_mean_of_one_to_eight():
    daily = np.arange(1, 9, dtype=float).reshape(8, 1)
    assert composite_daily(daily, [1])[0, 0] == 4.5


def test_composite_single_valid_day():
    daily = np.full((8, 1), np.nan)
    daily[3] = 7.0
    assert composite_daily(daily, [1])[0, 0] == 7.0
    assert np.isnan(composite_daily(np.full((8, 1), np.nan), [1])[0, 0])


def test_composite_window_alignment_and_bounds():
    daily = np.arange(49, 65, dtype=float).reshape(16, 1)
    out = composite_daily(daily, [49, 57], first_day=49)
    assert out[:, 0].tolist() == [52.5, 60.5]
    with pytest.raises(ValueError):
        composite_daily(daily, [58], first_day=49)


@given(st.floats(-1e6, 1e6, allow_nan=False, width=32), st.integers(1, 20))
def test_composite_of_copies_is_exact(v, n_windows):
    grid = np.array([[v, -v], [v / 3, 0.1]])
    out = composite_daily([grid] * (8 * n_windows), [1 + 8 * k for k in range(n_windows)])
    assert np.array_equal(out, np.broadcast_to(grid, out.shape))
