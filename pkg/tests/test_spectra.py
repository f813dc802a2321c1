import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ropesat.spectra import (
    ACQUIRED_GRID,
    FINGERPRINT_GRID,
    Dataset,
    GridMismatchError,
    ParseError,
    RangeError,
    Spectrum,
    UnknownLabelError,
    WavenumberGrid,
    crop_to_fingerprint,
    grid_is_uniform,
    load_dataset,
    save_dataset,
)


def _dataset(n=3, grid=FINGERPRINT_GRID, seed=0):
    rng = np.random.default_rng(seed)
    spectra = [
        Spectrum(f"s{i}", ["a", "b"][i % 2], "c1", rng.normal(size=grid.points))
        for i in range(n)
    ]
    return Dataset(grid, spectra, ("a", "b"), {"note": "test"})


def _assert_same(a: Dataset, b: Dataset):
    assert a.grid == b.grid
    assert a.class_names == b.class_names
    assert a.provenance == b.provenance
    assert len(a) == len(b)
    for x, y in zip(a.spectra, b.spectra):
        assert (x.id, x.label, x.cohort, x.meta) == (y.id, y.label, y.cohort, y.meta)
        assert np.array_equal(x.values, y.values)


def test_grid_invariants():
    g = FINGERPRINT_GRID
    assert g.points == 219
    assert g.values[0] == 1800.0 and g.values[-1] == 900.0
    assert grid_is_uniform(g)
    with pytest.raises(ValueError):
        WavenumberGrid(900, 1800, 10)
    with pytest.raises(ValueError):
        WavenumberGrid(1800, 900, 2)


@pytest.mark.parametrize("fmt", ["jsonl", "csv"])
def test_round_trip(tmp_path, fmt):
    ds = _dataset(3)
    path = tmp_path / f"d.{fmt}"
    save_dataset(ds, path)
    _assert_same(ds, load_dataset(path))


@pytest.mark.parametrize("fmt", ["jsonl", "csv"])
def test_round_trip_empty_and_unicode(tmp_path, fmt):
    empty = Dataset(FINGERPRINT_GRID, (), ("a",))
    path = tmp_path / f"e.{fmt}"
    save_dataset(empty, path)
    back = load_dataset(path)
    assert len(back) == 0 and back.grid == FINGERPRINT_GRID

    s = Spectrum("Probe-ü-試料", "a", "Kohorte-β", np.linspace(0, 1, 219), {"parent_a": "x"})
    ds = Dataset(FINGERPRINT_GRID, (s,), ("a",))
    save_dataset(ds, path)
    _assert_same(ds, load_dataset(path))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=5,
                max_size=5))
def test_round_trip_bit_exact_values(tmp_path_factory, vals):
    grid = WavenumberGrid(1800.0, 900.0, 5)
    ds = Dataset(grid, (Spectrum("x", "a", "", vals),), ("a",))
    for fmt in ("jsonl", "csv"):
        p = tmp_path_factory.mktemp("rt") / f"d.{fmt}"
        save_dataset(ds, p)
        assert np.array_equal(load_dataset(p).spectra[0].values, ds.spectra[0].values)


def test_load_errors(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    with pytest.raises(ParseError, match="no records"):
        load_dataset(p)

    header = {"grid": {"start_cm1": 1800, "end_cm1": 900, "points": 219}, "class_names": ["a"]}
    row = {"id": "short", "label": "a", "cohort": "c", "values": [0.0] * 218}
    p = tmp_path / "bad.jsonl"
    p.write_text(json.dumps(header) + "\n" + json.dumps(row) + "\n")
    with pytest.raises(GridMismatchError, match="short"):
        load_dataset(p)

    row = {"id": "x", "label": "zzz", "cohort": "c", "values": [0.0] * 219}
    p.write_text(json.dumps(header) + "\n" + json.dumps(row) + "\n")
    with pytest.raises(UnknownLabelError):
        load_dataset(p)

    p.write_text(json.dumps(header) + "\n{not json\n")
    with pytest.raises(ParseError, match="line 2"):
        load_dataset(p)


def test_csv_without_metadata_comment(tmp_path):
    ds = _dataset(2)
    p = tmp_path / "d.csv"
    save_dataset(ds, p)
    lines = p.read_text().splitlines()[1:]
    p.write_text("\n".join(lines) + "\n")
    back = load_dataset(p)
    assert back.grid.points == 219
    assert back.class_names == ("a", "b")
    np.testing.assert_allclose(back.grid.values, ds.grid.values, atol=1e-4)


def test_crop_acquired_grid_count_matches_enumeration():
    w = [4000.0 - i * (3600.0 / 873) for i in range(874)]
    expected = sum(1 for x in w if 900.0 <= x <= 1800.0)
    assert expected == 218
    ds = Dataset(ACQUIRED_GRID, (Spectrum("x", "a", "", np.arange(874.0)),), ("a",))
    out = crop_to_fingerprint(ds)
    assert out.grid.points == expected
    assert 900 <= out.grid.end_cm1 < out.grid.start_cm1 <= 1800
    assert grid_is_uniform(out.grid)
    np.testing.assert_array_equal(out.spectra[0].values, np.arange(534.0, 752.0))


def test_crop_identity_idempotent_and_errors():
    ds = _dataset(2)
    assert crop_to_fingerprint(ds) is ds
    once = crop_to_fingerprint(ds, 1500, 1100)
    twice = crop_to_fingerprint(once, 1500, 1100)
    _assert_same(once, twice)
    assert grid_is_uniform(once.grid)
    with pytest.raises(RangeError):
        crop_to_fingerprint(ds, 5000, 2000)
