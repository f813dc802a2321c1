"""Grad-CAM saliency on the head convolution and band overlap ratios."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model.network import ModelParams, ShapeError, forward, predict_proba
from .spectra import Dataset, SpectraError, WavenumberGrid

DENOMINATOR_MODES = ("weights_in_band", "band_mass")

# name -> (high_cm1, low_cm1)
DEFAULT_BANDS = {
    "lipids": (1750.0, 1700.0),
    "amide_I": (1700.0, 1600.0),
    "amide_II": (1580.0, 1480.0),
    "amide_III": (1300.0, 1200.0),
    "nucleic_acids": (1120.0, 1080.0),
    "carbohydrates": (1100.0, 1000.0),
}


class ExplainError(ValueError):
    pass


class EmptyBandError(ExplainError):
    pass


@dataclass(frozen=True)
class BandTable:
    bands: dict = field(default_factory=lambda: dict(DEFAULT_BANDS))

    def __post_init__(self):
        clean = {}
        for name, (hi, lo) in self.bands.items():
            hi, lo = float(hi), float(lo)
            if not hi > lo:
                raise ExplainError(f"band {name!r}: high ({hi}) must exceed low ({lo})")
            clean[str(name)] = (hi, lo)
        object.__setattr__(self, "bands", clean)

    def __iter__(self):
        return iter(self.bands.items())

    def __getitem__(self, name):
        return self.bands[name]

    def names(self) -> list[str]:
        return list(self.bands)

    def to_json(self) -> str:
        return json.dumps({k: [hi, lo] for k, (hi, lo) in self.bands.items()}, indent=2)

    @classmethod
    def load(cls, path: str | Path) -> "BandTable":
        data = json.loads(Path(path).read_text())
        return cls({k: tuple(v) for k, v in data.items()})

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")


@dataclass(frozen=True)
class SaliencyMap:
    grid: WavenumberGrid
    weights: np.ndarray
    target_class: str
    spectrum_id: str

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (self.grid.points,):
            raise ShapeError(f"saliency has {w.shape} weights for a {self.grid.points}-point grid")
        if np.any(w < 0) or np.any(w > 1):
            raise ExplainError("saliency weights must lie in [0, 1]")
        object.__setattr__(self, "weights", w)


def normalize_map(raw: np.ndarray) -> np.ndarray:
    m = float(np.max(raw)) if raw.size else 0.0
    if m <= 0:
        return np.zeros_like(raw, dtype=np.float64)
    return np.clip(raw / m, 0.0, 1.0)


def token_centers(params: ModelParams) -> np.ndarray:
    """Input-index position of each token's receptive field center."""
    cfg = params.config
    return np.arange(cfg.num_tokens) * cfg.embed_stride + (cfg.embed_kernel - 1) / 2.0


def grad_cam_raw(params: ModelParams, X, target) -> tuple[np.ndarray, np.ndarray]:
    """Token-level rectified Grad-CAM for each row of ``X``.

    Returns ``(cam (B, T), channel_weights (B, C))``. Rows are independent:
    batch norm runs on its stored statistics.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    target = np.broadcast_to(np.asarray(target, dtype=np.int64), (X.shape[0],))
    logits, tape = forward(params, X, "infer")
    picked = tape.apply("gather", logits, index=target)
    tape.backward(picked, np.ones(X.shape[0]))
    act = tape.marks["head.activation"]
    grad = act.grad if act.grad is not None else np.zeros_like(act.value)
    weights = grad.mean(axis=2)  # (B, C)
    cam = np.maximum(np.einsum("bc,bct->bt", weights, act.value), 0.0)
    return cam, weights


def upsample(params: ModelParams, cam_tokens: np.ndarray) -> np.ndarray:
    """Linear interpolation from token centers to every input index."""
    L = params.config.input_length
    centers = token_centers(params)
    cam_tokens = np.atleast_2d(cam_tokens)
    return np.stack([np.interp(np.arange(L), centers, row) for row in cam_tokens])


def grad_cam(params: ModelParams, spectrum, target_class, grid: WavenumberGrid | None = None,
             class_names=None) -> SaliencyMap:
    """Max-normalized Grad-CAM map for one spectrum on the model input grid.

    ``spectrum`` may be a ``Spectrum`` or a bare array; ``target_class`` a
    class index or a label from ``class_names``.
    """
    values = getattr(spectrum, "values", spectrum)
    sid = getattr(spectrum, "id", "")
    values = np.asarray(values, dtype=np.float64)
    L = params.config.input_length
    if values.shape != (L,):
        raise ShapeError(f"spectrum has shape {values.shape}, model expects ({L},)")
    if grid is None:
        raise ExplainError("grad_cam needs the model input grid")
    if grid.points != L:
        raise ShapeError(f"grid has {grid.points} points, model expects {L}")
    idx, label = _resolve_class(target_class, class_names, params.config.num_classes)
    cam, _ = grad_cam_raw(params, values[None, :], idx)
    return SaliencyMap(grid, normalize_map(upsample(params, cam)[0]), label, sid)


def _resolve_class(target, class_names, num_classes):
    if isinstance(target, (int, np.integer)):
        idx = int(target)
        label = class_names[idx] if class_names is not None else str(idx)
    else:
        if class_names is None or target not in class_names:
            raise ExplainError(f"unknown class {target!r}")
        idx = list(class_names).index(target)
        label = target
    if not 0 <= idx < num_classes:
        raise ExplainError(f"class index {idx} out of range")
    return idx, label


def grad_cam_dataset(params: ModelParams, ds: Dataset, targets=None,
                     batch_size: int = 128) -> list[SaliencyMap]:
    """Maps for every spectrum; ``targets`` defaults to each spectrum's true label."""
    y = ds.y if targets is None else np.asarray(targets, dtype=np.int64)
    X = ds.X
    maps = []
    for i in range(0, len(ds), batch_size):
        cam, _ = grad_cam_raw(params, X[i:i + batch_size], y[i:i + batch_size])
        up = upsample(params, cam)
        for j, row in enumerate(up):
            s = ds.spectra[i + j]
            maps.append(SaliencyMap(ds.grid, normalize_map(row), ds.class_names[y[i + j]], s.id))
    return maps


def _runs(flags: np.ndarray) -> list[tuple[int, int]]:
    runs = []
    start = None
    for i, f in enumerate(flags):
        if f and start is None:
            start = i
        elif not f and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(flags) - 1))
    return runs


def salient_index_runs(smap: SaliencyMap, beta: float) -> list[tuple[int, int]]:
    return _runs(smap.weights > beta)


def salient_regions(smap: SaliencyMap, beta: float) -> list[tuple[float, float]]:
    """Closed ``(high_cm1, low_cm1)`` intervals of maximal runs with weight > beta."""
    if not 0 < beta < 1:
        raise ExplainError(f"beta must lie in (0, 1), got {beta}")
    w = smap.grid.values
    return [(float(w[a]), float(w[b])) for a, b in salient_index_runs(smap, beta)]


def overlap_ratio(smap: SaliencyMap, band, beta: float = 0.2,
                  denominator_mode: str = "weights_in_band") -> float:
    """Share of a band's saliency carried by points above ``beta``.

    ``weights_in_band`` divides by the summed in-band weights; ``band_mass``
    by the number of in-band grid points. A band with no saliency at all
    scores 0.
    """
    if denominator_mode not in DENOMINATOR_MODES:
        raise ExplainError(f"denominator_mode must be one of {DENOMINATOR_MODES}")
    if not 0 < beta < 1:
        raise ExplainError(f"beta must lie in (0, 1), got {beta}")
    hi, lo = band
    inside = smap.grid.index_mask(hi, lo)
    if not inside.any():
        raise EmptyBandError(f"band [{lo}, {hi}] contains no grid points")
    w = smap.weights[inside]
    num = float(w[w > beta].sum())
    den = float(w.sum()) if denominator_mode == "weights_in_band" else float(inside.sum())
    if den <= 0:
        return 0.0
    # num <= den exactly; summation order can still push the ratio one ulp past 1
    return min(num / den, 1.0)


@dataclass
class OverlapReport:
    class_names: list
    bands: BandTable
    betas: list
    denominator_mode: str
    rows: list = field(default_factory=list)  # (class, band, beta, gamma)
    class_maps: dict = field(default_factory=dict)
    n_correct: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    def gamma(self, cls: str, band: str, beta: float) -> float:
        for c, b, be, g in self.rows:
            if c == cls and b == band and be == beta:
                return g
        raise KeyError((cls, band, beta))

    def table(self, beta: float) -> dict:
        """``{class: {band: gamma}}`` at one threshold."""
        out: dict = {}
        for c, b, be, g in self.rows:
            if be == beta:
                out.setdefault(c, {})[b] = g
        return out

    def top_band(self, cls: str, beta: float) -> str:
        """Highest-gamma band; ties go to the band with more mean in-band saliency."""
        smap = self.class_maps[cls]
        scores = []
        for name, (hi, lo) in self.bands:
            mean_w = float(smap.weights[smap.grid.index_mask(hi, lo)].mean())
            scores.append((self.gamma(cls, name, beta), mean_w, name))
        return max(scores, key=lambda s: (s[0], s[1]))[2]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "band", "beta", "gamma", "denominator_mode"])
        for c, b, be, g in self.rows:
            w.writerow([c, b, format(be, "g"), format(g, ".17g"), self.denominator_mode])
        return buf.getvalue()


def class_overlap_report(params: ModelParams, test_ds: Dataset, bands: BandTable | None = None,
                         betas=(0.2, 0.3, 0.4, 0.5),
                         denominator_mode: str = "weights_in_band") -> OverlapReport:
    """Per-class overlap ratios from averaged maps of correctly classified spectra.

    The class map is the mean of the per-spectrum normalized maps, rescaled
    so its maximum is 1. Classes without a correct prediction are listed in
    ``errors`` and skipped.
    """
    if len(test_ds) == 0:
        raise SpectraError("test set is empty")
    bands = bands or BandTable()
    pred = np.argmax(predict_proba(params, test_ds), axis=1)
    y = test_ds.y
    report = OverlapReport(list(test_ds.class_names), bands, [float(b) for b in betas],
                           denominator_mode)
    for ci, cls in enumerate(test_ds.class_names):
        sel = np.flatnonzero((y == ci) & (pred == ci))
        report.n_correct[cls] = int(sel.size)
        if sel.size == 0:
            report.errors[cls] = "no correctly classified test spectra"
            continue
        maps = grad_cam_dataset(params, test_ds.subset(sel))
        mean = normalize_map(np.mean([m.weights for m in maps], axis=0))
        smap = SaliencyMap(test_ds.grid, mean, cls, f"class-mean:{cls}")
        report.class_maps[cls] = smap
        for name, band in bands:
            for beta in report.betas:
                report.rows.append((cls, name, beta,
                                    overlap_ratio(smap, band, beta, denominator_mode)))
    return report
