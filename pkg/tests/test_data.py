import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orca_swh.data import (BuoyDataset, CapacityError, FormatError, GridField, GridSpec, OrderingError, RegionError,
                           SchemaError, box_smooth, cell_of, dataset_series, format_buoy_text, load_buoys,
                           load_grid_field, parse_buoy_text, read_grid_field, synth_generate, write_grid_field)

HEADER = "#YY  MM DD hh mm WSPD WVHT\n#yr  mo dy hr mn  m/s    m\n"


def table(rows):
    return HEADER + "".join(f"2021 03 04 {h:02d} {m:02d} {a} {b}\n" for h, m, a, b in rows)


# -- grid geometry -------------------------------------------------------

def test_gulf_grid_is_29_by_41():
    g = GridSpec.gulf_of_mexico()
    assert (g.rows, g.cols) == (29, 41)


def test_grid_validation_rejects_wrong_extent():
    with pytest.raises(ValueError, match="29x41 grid"):
        GridSpec(28, 41, 32.0, 18.0, -98.0, -78.0, 0.5)
    with pytest.raises(ValueError):
        GridSpec.from_bounds(32.0, 18.0, -98.0, -78.0, 0.0)


def test_cell_of_corners():
    g = GridSpec.gulf_of_mexico()
    assert cell_of(32.0, -98.0, g) == (0, 0)
    assert cell_of(18.0, -78.0, g) == (28, 40)


def test_cell_of_matches_brute_force():
    g = GridSpec.gulf_of_mexico()

    def nearest(lat, lon):
        best = None
        for r, c in itertools.product(range(g.rows), range(g.cols)):
            clat, clon = g.center(r, c)
            d = (clat - lat) ** 2 + (clon - lon) ** 2
            if best is None or d < best[0]:
                best = (d, (r, c))
        return best[1]

    assert cell_of(25.1, -88.3, g) == nearest(25.1, -88.3) == (14, 19)
    rng = np.random.default_rng(0)
    for lat, lon in zip(rng.uniform(18, 32, 40), rng.uniform(-98, -78, 40)):
        assert cell_of(lat, lon, g) == nearest(lat, lon)


def test_cell_of_tie_goes_to_lower_index():
    g = GridSpec.gulf_of_mexico()
    assert cell_of(31.75, -97.75, g) == (0, 0)


def test_cell_of_outside_names_bound():
    g = GridSpec.gulf_of_mexico()
    with pytest.raises(RegionError, match="lat_north"):
        cell_of(33.0, -90.0, g)
    with pytest.raises(RegionError, match="lon_east"):
        cell_of(25.0, -70.0, g)


# -- buoy parsing --------------------------------------------------------

def test_sentinel_carries_forward():
    s = parse_buoy_text(table([(0, 0, 5.0, 1.4), (3, 0, 6.0, 99.0)]))
    w = s.feature_names.index("WVHT")
    np.testing.assert_allclose(s.values[w], [1.4, 1.4], rtol=1e-6)
    np.testing.assert_array_equal(s.missing_mask[w], [False, True])


def test_mm_and_leading_gap():
    s = parse_buoy_text(table([(0, 0, "MM", 0.8), (3, 0, 4.0, 0.9)]))
    np.testing.assert_allclose(s.values[0], [4.0, 4.0])
    np.testing.assert_array_equal(s.missing_mask[0], [True, False])


def test_empty_table():
    s = parse_buoy_text(HEADER)
    assert s.steps == 0 and s.values.shape == (2, 0)


def test_hourly_rows_onto_three_hour_lattice():
    rows = [(h, 0, 5.0 + h, 1.0 + h / 10) for h in range(6)]
    s = parse_buoy_text(table(rows), interval_hours=3)
    assert s.steps == 2
    np.testing.assert_allclose(s.values[1], [1.0, 1.3], rtol=1e-6)


def test_nearest_row_tie_prefers_earlier():
    # lattice point 03:00 is 30 min from both 02:30 and 03:30
    s = parse_buoy_text(table([(0, 0, 1.0, 0.1), (2, 30, 2.0, 0.2), (3, 30, 3.0, 0.3)]), 3, steps=2)
    np.testing.assert_allclose(s.values[1], [0.1, 0.2], rtol=1e-6)


def test_lattice_point_without_nearby_row_is_missing():
    s = parse_buoy_text(table([(0, 0, 1.0, 0.5), (9, 0, 2.0, 0.7)]), 3)
    assert s.steps == 4
    np.testing.assert_array_equal(s.missing_mask[1], [False, True, True, False])
    np.testing.assert_allclose(s.values[1], [0.5, 0.5, 0.5, 0.7], rtol=1e-6)


def test_unknown_column_is_schema_error():
    text = "#YY MM DD hh mm FOO\n#yr mo dy hr mn x\n2021 01 01 00 00 1.0\n"
    with pytest.raises(SchemaError, match="FOO"):
        parse_buoy_text(text)


def test_unordered_timestamps():
    with pytest.raises(OrderingError):
        parse_buoy_text(table([(3, 0, 1.0, 0.5), (0, 0, 2.0, 0.7)]))


def test_format_parse_round_trip():
    ds = synth_generate(3, 5, 5, 12, 2, 4).dataset
    series = dataset_series(ds, 1)
    back = parse_buoy_text(format_buoy_text(series), ds.interval_hours)
    assert back.feature_names == series.feature_names
    np.testing.assert_array_equal(back.times, series.times)
    np.testing.assert_allclose(back.values, series.values, atol=0.011)
    assert not back.missing_mask.any()


def test_load_buoys_places_on_grid(tmp_path):
    grid = GridSpec.anchored(6, 6)
    paths = []
    for i, rows in enumerate([[(0, 0, 1.0, 0.5), (3, 0, 2.0, 0.6)], [(0, 0, 3.0, 0.9), (3, 0, 4.0, 1.1)]]):
        p = tmp_path / f"b{i}.txt"
        p.write_text(table(rows))
        paths.append(p)
    ds = load_buoys(paths, [(32.0, -98.0), (30.1, -96.4)], grid)
    assert ds.shape == (2, 2, 2)
    np.testing.assert_array_equal(ds.locations, [[0, 0], [4, 3]])
    np.testing.assert_allclose(ds.swh, [[0.5, 0.6], [0.9, 1.1]], rtol=1e-6)


def test_dataset_rejects_negative_swh_and_outside_buoy():
    grid = GridSpec.anchored(3, 3)
    with pytest.raises(ValueError, match="nonnegative"):
        BuoyDataset(-np.ones((2, 1, 4)), ["WVHT", "WSPD"], [[0, 0]], grid)
    with pytest.raises(RegionError):
        BuoyDataset(np.ones((2, 1, 4)), ["WVHT", "WSPD"], [[3, 0]], grid)
    with pytest.raises(SchemaError):
        BuoyDataset(np.ones((2, 1, 4)), ["WSPD", "WDIR"], [[0, 0]], grid)


# -- grid fields ---------------------------------------------------------

def test_grid_field_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(2)
    f = GridField(rng.random((29, 41, 8)).astype(np.float32), "surrogate")
    write_grid_field(tmp_path / "a.grid", f)
    back = load_grid_field(tmp_path / "a.grid", GridSpec.gulf_of_mexico(), "surrogate")
    assert back.values.tobytes() == f.values.tobytes()


def test_grid_field_header_mismatch(tmp_path):
    write_grid_field(tmp_path / "b.grid", GridField(np.zeros((28, 41, 8), np.float32), "truth"))
    with pytest.raises(FormatError, match="28x41x8"):
        load_grid_field(tmp_path / "b.grid", GridSpec.gulf_of_mexico())


def test_grid_field_truncated(tmp_path):
    write_grid_field(tmp_path / "c.grid", GridField(np.zeros((2, 2, 2), np.float32), "truth"))
    raw = (tmp_path / "c.grid").read_bytes()
    (tmp_path / "c.grid").write_bytes(raw[:-4])
    with pytest.raises(FormatError):
        read_grid_field(tmp_path / "c.grid")


# -- synthetic data ------------------------------------------------------

def test_synth_deterministic():
    a, b = synth_generate(5, 8, 8, 32, 3, 3), synth_generate(5, 8, 8, 32, 3, 3)
    assert a.dataset.values.tobytes() == b.dataset.values.tobytes()
    assert a.truth.values.tobytes() == b.truth.values.tobytes()
    assert a.surrogate.values.tobytes() == b.surrogate.values.tobytes()
    np.testing.assert_array_equal(a.dataset.locations, b.dataset.locations)


def test_synth_shapes_and_roles():
    d = synth_generate(0, 6, 7, 10, 4, 5)
    assert d.dataset.shape == (5, 4, 10)
    assert d.truth.shape == d.surrogate.shape == (6, 7, 10)
    assert (d.truth.role, d.surrogate.role) == ("truth", "surrogate")
    assert len({tuple(x) for x in d.dataset.locations}) == 4


def test_synth_buoys_track_truth_within_three_sigma():
    inside, total = 0, 0
    for seed in range(40):
        d = synth_generate(seed, 8, 8, 32, 3, 2, noise=0.05)
        loc = d.dataset.locations
        err = d.dataset.swh - d.truth.values[loc[:, 0], loc[:, 1]]
        inside += int(np.sum(np.abs(err) <= 3 * 0.05 + 1e-6))
        total += err.size
    assert inside / total >= 0.99


def test_synth_refuses_no_buoys():
    with pytest.raises(CapacityError):
        synth_generate(0, 4, 4, 8, 0, 2)


def test_box_smooth_constant():
    v = np.full((5, 4, 3), 1.7)
    np.testing.assert_allclose(box_smooth(v), v, rtol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2 ** 16))
def test_box_smooth_stays_within_range(K, J, seed):
    v = np.random.default_rng(seed).random((K, J, 2))
    s = box_smooth(v)
    assert s.min() >= v.min() - 1e-12 and s.max() <= v.max() + 1e-12
