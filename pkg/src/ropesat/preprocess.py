"""SNV normalization, second-order differencing, and marginal PCA."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import gaussian_kde

from .spectra import Dataset, SpectraError, crop_to_fingerprint

BOUNDARY_POLICIES = ("shrink", "replicate")


class PreprocessError(SpectraError):
    def __init__(self, message: str, spectrum_id: str | None = None):
        self.spectrum_id = spectrum_id
        if spectrum_id is not None:
            message = f"spectrum {spectrum_id!r}: {message}"
        super().__init__(message)


class ZeroVarianceError(PreprocessError):
    pass


@dataclass(frozen=True)
class PreprocessConfig:
    apply_snv: bool = True
    apply_second_derivative: bool = True
    boundary_policy: str = "shrink"
    crop_start_cm1: float | None = 1800.0
    crop_end_cm1: float | None = 900.0
    # False: crop -> SNV -> derivative. True: SNV over the full trace, then crop.
    snv_before_crop: bool = False

    def __post_init__(self):
        if self.boundary_policy not in BOUNDARY_POLICIES:
            raise ValueError(
                f"boundary_policy must be one of {BOUNDARY_POLICIES}, got {self.boundary_policy!r}"
            )

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def snv(values) -> np.ndarray:
    """Standard normal variate: center and divide by the population sd."""
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise PreprocessError("snv needs a 1-D sequence of length >= 2")
    mean = x.mean()
    sd = np.sqrt(np.mean((x - mean) ** 2))
    if not sd > 1e-12:
        raise ZeroVarianceError(f"zero variance (sd={sd:.3g})")
    return (x - mean) / sd


def second_derivative(values, boundary_policy: str = "shrink") -> np.ndarray:
    """Three-term second difference ``x[j+1] - 2 x[j] + x[j-1]``.

    ``shrink`` returns the N-2 interior values; ``replicate`` pads each end
    with its nearest interior value to keep length N.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1 or x.size < 3:
        raise PreprocessError("second derivative needs a 1-D sequence of length >= 3")
    if boundary_policy not in BOUNDARY_POLICIES:
        raise ValueError(f"unknown boundary_policy {boundary_policy!r}")
    d = x[2:] - 2.0 * x[1:-1] + x[:-2]
    if boundary_policy == "shrink":
        return d
    return np.concatenate(([d[0]], d, [d[-1]]))


def preprocess_values(values, cfg: PreprocessConfig) -> np.ndarray:
    """SNV and derivative on an already-cropped trace."""
    out = np.asarray(values, dtype=np.float64)
    if cfg.apply_snv:
        out = snv(out)
    if cfg.apply_second_derivative:
        out = second_derivative(out, cfg.boundary_policy)
    return out


def _crop(ds: Dataset, cfg: PreprocessConfig) -> Dataset:
    if cfg.crop_start_cm1 is None or cfg.crop_end_cm1 is None:
        return ds
    return crop_to_fingerprint(ds, cfg.crop_start_cm1, cfg.crop_end_cm1)


def preprocess_dataset(ds: Dataset, cfg: PreprocessConfig = PreprocessConfig()) -> Dataset:
    if cfg.snv_before_crop and cfg.apply_snv:
        normed = []
        for s in ds.spectra:
            try:
                normed.append(s.with_values(snv(s.values)))
            except PreprocessError as e:
                raise type(e)(str(e), s.id) from e
        ds = _crop(ds.with_spectra(normed), cfg)
        cfg_rest = PreprocessConfig(
            apply_snv=False,
            apply_second_derivative=cfg.apply_second_derivative,
            boundary_policy=cfg.boundary_policy,
        )
    else:
        ds = _crop(ds, cfg)
        cfg_rest = cfg

    out = []
    for s in ds.spectra:
        try:
            out.append(s.with_values(preprocess_values(s.values, cfg_rest)))
        except PreprocessError as e:
            raise type(e)(str(e), s.id) from e
    grid = ds.grid
    if cfg.apply_second_derivative and cfg.boundary_policy == "shrink":
        grid = grid.subgrid(1, grid.points - 2)
    return ds.with_spectra(out, grid=grid, preprocess=cfg.to_dict())


@dataclass
class PCAReport:
    scores: np.ndarray
    labels: list[str]
    explained_variance_ratio: np.ndarray
    components: np.ndarray
    mean: np.ndarray
    densities: dict = field(default_factory=dict)

    def reconstruct(self, scores: np.ndarray | None = None) -> np.ndarray:
        s = self.scores if scores is None else scores
        return s @ self.components + self.mean

    def to_dict(self) -> dict:
        return {
            "scores": self.scores.tolist(),
            "labels": list(self.labels),
            "explained_variance_ratio": self.explained_variance_ratio.tolist(),
            "densities": self.densities,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _class_densities(scores: np.ndarray, labels: list[str], n_eval: int = 128) -> dict:
    out = {}
    for pc in range(scores.shape[1]):
        col = scores[:, pc]
        lo, hi = float(col.min()), float(col.max())
        pad = 0.1 * (hi - lo) if hi > lo else 1.0
        xs = np.linspace(lo - pad, hi + pad, n_eval)
        per_class = {}
        for lab in dict.fromkeys(labels):
            vals = col[np.asarray(labels) == lab]
            if vals.size < 2 or np.ptp(vals) == 0:
                per_class[lab] = None
                continue
            kde = gaussian_kde(vals, bw_method="silverman")
            per_class[lab] = kde(xs).tolist()
        out[f"pc{pc + 1}"] = {"x": xs.tolist(), "density": per_class}
    return out


def pca_projection(ds: Dataset, components: int = 2) -> PCAReport:
    """Project spectra onto their leading principal components.

    Each component's sign is chosen so its largest-magnitude loading is positive.
    """
    X = ds.X
    n, p = X.shape
    if n < 3:
        raise SpectraError("PCA needs at least 3 spectra")
    if p < 2:
        raise SpectraError("PCA needs at least 2 grid points")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    var = s ** 2
    total = var.sum()
    if not total > 1e-300 or var[0] <= 1e-10 * total:
        raise SpectraError("degenerate covariance: spectra have no spread")
    k = min(components, vt.shape[0])
    comps = vt[:k].copy()
    for i in range(k):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    ratio = var[:k] / total
    ratio = np.where(ratio < 1e-15, 0.0, ratio)
    scores = Xc @ comps.T
    labels = [sp.label for sp in ds.spectra]
    return PCAReport(scores, labels, ratio, comps, mean, _class_densities(scores, labels))
