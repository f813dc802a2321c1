"""Spectrum and dataset containers, wavenumber grids, and JSONL/CSV I/O."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np


class SpectraError(ValueError):
    """Base class for dataset validation and parsing failures."""


class ParseError(SpectraError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class GridMismatchError(SpectraError):
    def __init__(self, spectrum_id: str, expected: int, got: int):
        self.spectrum_id = spectrum_id
        super().__init__(
            f"spectrum {spectrum_id!r} has {got} values, grid has {expected} points"
        )


class UnknownLabelError(SpectraError):
    pass


class RangeError(SpectraError):
    pass


@dataclass(frozen=True)
class WavenumberGrid:
    """Uniform wavenumber axis, stored high to low (IR convention)."""

    start_cm1: float
    end_cm1: float
    points: int

    def __post_init__(self):
        if int(self.points) != self.points or self.points < 3:
            raise SpectraError(f"grid needs at least 3 points, got {self.points}")
        if not (self.start_cm1 > self.end_cm1 > 0):
            raise SpectraError(
                f"grid must satisfy start > end > 0, got {self.start_cm1} -> {self.end_cm1}"
            )
        object.__setattr__(self, "points", int(self.points))
        object.__setattr__(self, "start_cm1", float(self.start_cm1))
        object.__setattr__(self, "end_cm1", float(self.end_cm1))

    @property
    def spacing(self) -> float:
        return (self.start_cm1 - self.end_cm1) / (self.points - 1)

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.start_cm1, self.end_cm1, self.points)

    def nearest_index(self, wavenumber: float) -> int:
        return int(np.argmin(np.abs(self.values - wavenumber)))

    def index_mask(self, high: float, low: float) -> np.ndarray:
        """Boolean mask of points with ``low <= wavenumber <= high``."""
        w = self.values
        tol = 1e-9 * self.spacing
        return (w <= high + tol) & (w >= low - tol)

    def subgrid(self, i0: int, i1: int) -> "WavenumberGrid":
        """Grid of points ``i0..i1`` inclusive (indices in high-to-low order)."""
        w = self.values
        return WavenumberGrid(float(w[i0]), float(w[i1]), i1 - i0 + 1)

    def to_dict(self) -> dict:
        return {"start_cm1": self.start_cm1, "end_cm1": self.end_cm1, "points": self.points}

    @classmethod
    def from_dict(cls, d: dict) -> "WavenumberGrid":
        return cls(float(d["start_cm1"]), float(d["end_cm1"]), int(d["points"]))


# 1800 -> 900 cm-1 at the ~4.12 cm-1 spacing of 874 points over 4000 -> 400
FINGERPRINT_GRID = WavenumberGrid(1800.0, 900.0, 219)
ACQUIRED_GRID = WavenumberGrid(4000.0, 400.0, 874)


@dataclass(frozen=True)
class Spectrum:
    id: str
    label: str
    cohort: str
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise SpectraError(f"spectrum {self.id!r}: values must be 1-D")
        if not np.all(np.isfinite(v)):
            raise SpectraError(f"spectrum {self.id!r}: non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def with_values(self, values, **changes) -> "Spectrum":
        return replace(self, values=values, **changes)


@dataclass(frozen=True)
class Dataset:
    grid: WavenumberGrid
    spectra: tuple[Spectrum, ...]
    class_names: tuple[str, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "spectra", tuple(self.spectra))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        known = set(self.class_names)
        if len(known) != len(self.class_names):
            raise SpectraError("class_names must be unique")
        for s in self.spectra:
            if s.values.shape[0] != self.grid.points:
                raise GridMismatchError(s.id, self.grid.points, s.values.shape[0])
            if s.label not in known:
                raise UnknownLabelError(
                    f"spectrum {s.id!r} has label {s.label!r} not in {list(self.class_names)}"
                )

    def __len__(self) -> int:
        return len(self.spectra)

    @property
    def X(self) -> np.ndarray:
        if not self.spectra:
            return np.zeros((0, self.grid.points))
        return np.stack([s.values for s in self.spectra])

    @property
    def y(self) -> np.ndarray:
        index = {c: i for i, c in enumerate(self.class_names)}
        return np.array([index[s.label] for s in self.spectra], dtype=np.int64)

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.spectra]

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.spectra]

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return replace(self, spectra=tuple(self.spectra[i] for i in indices))

    def with_spectra(self, spectra: Sequence[Spectrum], grid: WavenumberGrid | None = None,
                     **provenance: Any) -> "Dataset":
        prov = dict(self.provenance)
        prov.update(provenance)
        return Dataset(grid or self.grid, tuple(spectra), self.class_names, prov)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _values_json(values: np.ndarray) -> str:
    return "[" + ", ".join(_fmt(v) for v in values) + "]"


def _dump_jsonl(ds: Dataset, fh) -> None:
    header = {
        "grid": ds.grid.to_dict(),
        "class_names": list(ds.class_names),
        "provenance": ds.provenance,
    }
    fh.write(json.dumps(header, ensure_ascii=False, sort_keys=True) + "\n")
    for s in ds.spectra:
        head = {"id": s.id, "label": s.label, "cohort": s.cohort}
        head.update(s.meta)
        body = json.dumps(head, ensure_ascii=False, sort_keys=True)[:-1]
        fh.write(f'{body}, "values": {_values_json(s.values)}}}\n')


def _dump_csv(ds: Dataset, fh) -> None:
    header = {
        "grid": ds.grid.to_dict(),
        "class_names": list(ds.class_names),
        "provenance": ds.provenance,
    }
    row_meta = {s.id: s.meta for s in ds.spectra if s.meta}
    if row_meta:
        header["row_meta"] = row_meta
    fh.write("# " + json.dumps(header, ensure_ascii=False, sort_keys=True) + "\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["id", "label", "cohort"] + [f"{w:.4f}" for w in ds.grid.values])
    for s in ds.spectra:
        writer.writerow([s.id, s.label, s.cohort] + [_fmt(v) for v in s.values])


def save_dataset(ds: Dataset, path: str | Path, format: str | None = None) -> None:
    path = Path(path)
    fmt = format or _infer_format(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if fmt == "jsonl":
            _dump_jsonl(ds, fh)
        elif fmt == "csv":
            _dump_csv(ds, fh)
        else:
            raise SpectraError(f"unknown format {fmt!r}")


def _infer_format(path: Path) -> str:
    suffix = path.suffix.lower().lstrip(".")
    if suffix in ("jsonl", "csv"):
        return suffix
    raise SpectraError(f"cannot infer dataset format from {path.name!r}; pass format=")


def _parse_json_line(line: str, lineno: int) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON ({e.msg})", lineno) from None
    if not isinstance(obj, dict):
        raise ParseError("expected a JSON object", lineno)
    return obj


def _build(grid, class_names, rows, provenance, infer_classes: bool) -> Dataset:
    if infer_classes:
        seen: dict[str, None] = {}
        for r in rows:
            seen.setdefault(r.label, None)
        class_names = list(seen)
    return Dataset(grid, tuple(rows), tuple(class_names), provenance)


def _load_jsonl(fh) -> Dataset:
    lines = [(i + 1, ln) for i, ln in enumerate(fh) if ln.strip()]
    if not lines:
        raise ParseError("no records")
    lineno, first = lines[0]
    header = _parse_json_line(first, lineno)
    if "grid" not in header:
        raise ParseError("first line must be a header with 'grid'", lineno)
    try:
        grid = WavenumberGrid.from_dict(header["grid"])
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"bad grid header: {e}", lineno) from None
    class_names = header.get("class_names")
    rows = []
    for lineno, ln in lines[1:]:
        obj = _parse_json_line(ln, lineno)
        try:
            sid = str(obj.pop("id"))
            label = str(obj.pop("label"))
            cohort = str(obj.pop("cohort", ""))
            values = obj.pop("values")
        except KeyError as e:
            raise ParseError(f"missing field {e.args[0]!r}", lineno) from None
        if not isinstance(values, list):
            raise ParseError("'values' must be a list", lineno)
        if len(values) != grid.points:
            raise GridMismatchError(sid, grid.points, len(values))
        try:
            rows.append(Spectrum(sid, label, cohort, np.asarray(values, dtype=np.float64), obj))
        except (TypeError, ValueError) as e:
            raise ParseError(f"spectrum {sid!r}: {e}", lineno) from None
    return _build(grid, class_names or [], rows, header.get("provenance", {}),
                  infer_classes=class_names is None)


def _grid_from_columns(cols: list[str], lineno: int) -> WavenumberGrid:
    try:
        w = [float(c) for c in cols]
    except ValueError:
        raise ParseError("wavenumber columns must be numeric", lineno) from None
    if len(w) < 3:
        raise ParseError("need at least 3 wavenumber columns", lineno)
    return WavenumberGrid(w[0], w[-1], len(w))


def _load_csv(fh) -> Dataset:
    text = fh.read().splitlines()
    numbered = [(i + 1, ln) for i, ln in enumerate(text) if ln.strip()]
    if not numbered:
        raise ParseError("no records")
    meta = None
    if numbered[0][1].startswith("#"):
        lineno, ln = numbered.pop(0)
        meta = _parse_json_line(ln[1:].strip(), lineno)
    if not numbered:
        raise ParseError("no records")
    reader = csv.reader([ln for _, ln in numbered])
    rows_raw = list(reader)
    header = rows_raw[0]
    lineno0 = numbered[0][0]
    if header[:3] != ["id", "label", "cohort"]:
        raise ParseError("header must start with id,label,cohort", lineno0)
    if meta is not None and "grid" in meta:
        grid = WavenumberGrid.from_dict(meta["grid"])
    else:
        grid = _grid_from_columns(header[3:], lineno0)
    if len(header) - 3 != grid.points:
        raise ParseError(
            f"header has {len(header) - 3} wavenumber columns, grid has {grid.points}", lineno0
        )
    row_meta = (meta or {}).get("row_meta", {})
    rows = []
    for (lineno, _), r in zip(numbered[1:], rows_raw[1:]):
        if len(r) < 3:
            raise ParseError("row has fewer than 3 fields", lineno)
        sid, label, cohort = r[0], r[1], r[2]
        if len(r) - 3 != grid.points:
            raise GridMismatchError(sid, grid.points, len(r) - 3)
        try:
            values = np.array([float(v) for v in r[3:]])
        except ValueError:
            raise ParseError(f"spectrum {sid!r}: non-numeric value", lineno) from None
        rows.append(Spectrum(sid, label, cohort, values, dict(row_meta.get(sid, {}))))
    class_names = (meta or {}).get("class_names")
    return _build(grid, class_names or [], rows, (meta or {}).get("provenance", {}),
                  infer_classes=class_names is None)


def load_dataset(path: str | Path, format: str | None = None) -> Dataset:
    path = Path(path)
    fmt = format or _infer_format(path)
    with open(path, encoding="utf-8", newline="") as fh:
        if fmt == "jsonl":
            return _load_jsonl(fh)
        if fmt == "csv":
            return _load_csv(fh)
    raise SpectraError(f"unknown format {fmt!r}")


def crop_to_fingerprint(ds: Dataset, start: float = 1800.0, end: float = 900.0) -> Dataset:
    """Keep the grid points whose wavenumber lies in ``[end, start]``."""
    g = ds.grid
    # a bound may overshoot the grid by less than one spacing: no point was missed,
    # and re-cropping an already cropped dataset stays valid
    tol = g.spacing * (1.0 - 1e-9)
    if start < end:
        start, end = end, start
    if start > g.start_cm1 + tol or end < g.end_cm1 - tol:
        raise RangeError(
            f"crop range [{end}, {start}] lies outside grid [{g.end_cm1}, {g.start_cm1}]"
        )
    idx = np.flatnonzero(g.index_mask(start, end))
    if idx.size < 3:
        raise RangeError(f"crop range [{end}, {start}] keeps fewer than 3 grid points")
    i0, i1 = int(idx[0]), int(idx[-1])
    if i0 == 0 and i1 == g.points - 1:
        return ds
    grid = g.subgrid(i0, i1)
    spectra = [s.with_values(s.values[i0:i1 + 1]) for s in ds.spectra]
    return ds.with_spectra(spectra, grid=grid)


def grid_is_uniform(grid: WavenumberGrid) -> bool:
    d = np.diff(grid.values)
    return bool(np.all(d < 0) and np.allclose(d, -grid.spacing, rtol=1e-9, atol=0))


__all__ = [
    "ACQUIRED_GRID",
    "Dataset",
    "FINGERPRINT_GRID",
    "GridMismatchError",
    "ParseError",
    "RangeError",
    "Spectrum",
    "SpectraError",
    "UnknownLabelError",
    "WavenumberGrid",
    "crop_to_fingerprint",
    "grid_is_uniform",
    "load_dataset",
    "save_dataset",
]

