"""Class-conditional synthetic IR spectra with planted absorption bands.

Each spectrum is a sum of Gaussian peaks whose amplitudes are drawn per
spectrum, multiplied by a scatter factor, plus a linear baseline drift and
white noise. Gaussian line shapes are not physical; they only need to give
the pipeline something with known ground truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .spectra import FINGERPRINT_GRID, Dataset, SpectraError, Spectrum, WavenumberGrid


@dataclass(frozen=True)
class Peak:
    center_cm1: float
    width_cm1: float
    amplitude_mean: float
    amplitude_sd: float = 0.0


@dataclass(frozen=True)
class ClassProfile:
    label: str
    peak_specs: tuple[Peak, ...]
    baseline_slope_sd: float = 0.0
    baseline_offset_sd: float = 0.0
    scatter_scale_sd: float = 0.0
    noise_sd: float = 0.0

    def __post_init__(self):
        peaks = tuple(p if isinstance(p, Peak) else Peak(*p) for p in self.peak_specs)
        object.__setattr__(self, "peak_specs", peaks)
        for p in peaks:
            if p.width_cm1 <= 0:
                raise SpectraError(f"{self.label}: peak width must be positive")
            if p.amplitude_sd < 0:
                raise SpectraError(f"{self.label}: amplitude_sd must be >= 0")
        for name in ("baseline_slope_sd", "baseline_offset_sd", "scatter_scale_sd", "noise_sd"):
            if getattr(self, name) < 0:
                raise SpectraError(f"{self.label}: {name} must be >= 0")

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "peak_specs": [[p.center_cm1, p.width_cm1, p.amplitude_mean, p.amplitude_sd]
                           for p in self.peak_specs],
            "baseline_slope_sd": self.baseline_slope_sd,
            "baseline_offset_sd": self.baseline_offset_sd,
            "scatter_scale_sd": self.scatter_scale_sd,
            "noise_sd": self.noise_sd,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassProfile":
        d = dict(d)
        d["peak_specs"] = tuple(Peak(*p) for p in d["peak_specs"])
        return cls(**d)


def gaussian_peaks(wavenumbers: np.ndarray, peaks, amplitudes=None) -> np.ndarray:
    w = np.asarray(wavenumbers, dtype=np.float64)
    out = np.zeros_like(w)
    for i, p in enumerate(peaks):
        a = p.amplitude_mean if amplitudes is None else amplitudes[i]
        out += a * np.exp(-0.5 * ((w - p.center_cm1) / p.width_cm1) ** 2)
    return out


def render(profile: ClassProfile, grid: WavenumberGrid, amplitudes, scatter: float = 1.0,
           slope: float = 0.0, offset: float = 0.0, noise=None) -> np.ndarray:
    """One spectrum from explicit nuisance draws.

    The baseline is ``offset + slope * t`` with ``t`` running 0 -> 1 across the grid.
    """
    w = grid.values
    t = np.linspace(0.0, 1.0, grid.points)
    y = scatter * gaussian_peaks(w, profile.peak_specs, amplitudes) + offset + slope * t
    if noise is not None:
        y = y + noise
    return y


def _spectrum_rng(seed: int, class_index: int, sample_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, class_index, sample_index]))


def generate_cohort(profiles, n_per_class: int, grid: WavenumberGrid = FINGERPRINT_GRID,
                    seed: int = 0, cohort: str = "synthetic") -> Dataset:
    profiles = list(profiles)
    if not profiles:
        raise SpectraError("need at least one class profile")
    if n_per_class < 1:
        raise SpectraError("n_per_class must be >= 1")
    labels = [p.label for p in profiles]
    if len(set(labels)) != len(labels):
        raise SpectraError("profile labels must be unique")
    for prof in profiles:
        for pk in prof.peak_specs:
            if not grid.end_cm1 <= pk.center_cm1 <= grid.start_cm1:
                raise SpectraError(
                    f"{prof.label}: peak at {pk.center_cm1} cm-1 is outside the grid "
                    f"[{grid.end_cm1}, {grid.start_cm1}]"
                )

    spectra = []
    for ci, prof in enumerate(profiles):
        means = np.array([p.amplitude_mean for p in prof.peak_specs])
        sds = np.array([p.amplitude_sd for p in prof.peak_specs])
        for si in range(n_per_class):
            rng = _spectrum_rng(seed, ci, si)
            amps = means + sds * rng.standard_normal(means.size)
            scatter = float(np.exp(prof.scatter_scale_sd * rng.standard_normal()))
            slope = prof.baseline_slope_sd * rng.standard_normal()
            offset = prof.baseline_offset_sd * rng.standard_normal()
            noise = prof.noise_sd * rng.standard_normal(grid.points)
            y = render(prof, grid, amps, scatter, slope, offset, noise)
            spectra.append(Spectrum(f"{prof.label}-{si:04d}", prof.label, cohort, y))
    return Dataset(grid, tuple(spectra), tuple(labels),
                   {"generator": "synthgen", "seed": seed, "n_per_class": n_per_class,
                    "profiles": [p.to_dict() for p in profiles]})


# Shared background loosely following an ATR-FTIR fingerprint of dried secretions.
_BASE_PEAKS = {
    "lipid": (1740.0, 12.0),
    "amide_I": (1650.0, 15.0),
    "amide_II": (1540.0, 14.0),
    "lipid_bend": (1455.0, 10.0),
    "amide_III": (1240.0, 14.0),
    "nucleic": (1100.0, 10.0),
    "carbohydrate": (1040.0, 14.0),
}
_BASE_AMPS = {
    "lipid": 0.30, "amide_I": 1.00, "amide_II": 0.65, "lipid_bend": 0.25,
    "amide_III": 0.30, "nucleic": 0.35, "carbohydrate": 0.45,
}


def _profile(label: str, overrides: dict, amp_rel_sd: float, **nuisance) -> ClassProfile:
    peaks = []
    for name, (c, w) in _BASE_PEAKS.items():
        a = _BASE_AMPS[name] * overrides.get(name, 1.0)
        peaks.append(Peak(c, w, a, amp_rel_sd * a))
    return ClassProfile(label, tuple(peaks), **nuisance)


_NUISANCE = dict(baseline_slope_sd=0.2, baseline_offset_sd=0.1, scatter_scale_sd=0.15,
                 noise_sd=0.002)


def default_profiles(amp_rel_sd: float = 0.06) -> list[ClassProfile]:
    """Three classes that differ across lipid, amide, nucleic-acid and carbohydrate bands."""
    return [
        _profile("healthy", {}, amp_rel_sd, **_NUISANCE),
        _profile("sars_cov_2", {"lipid": 1.6, "amide_I": 0.85, "amide_III": 1.5,
                                "carbohydrate": 1.25}, amp_rel_sd, **_NUISANCE),
        _profile("influenza_b", {"lipid": 1.35, "amide_II": 1.3, "nucleic": 1.6,
                                 "carbohydrate": 1.3}, amp_rel_sd, **_NUISANCE),
    ]


# band each planted-band class amplifies, by BandTable name
PLANTED_BANDS = {"lipid_up": "lipids", "amide_II_up": "amide_II", "amide_III_up": "amide_III"}


def planted_band_profiles(amp_rel_sd: float = 0.06, boost: float = 2.5,
                          level: float = 0.4) -> list[ClassProfile]:
    """Three classes identical except for one amplified band each.

    All shared peaks sit at the same ``level`` so that no background peak
    outweighs the planted one; the planted peak is ``boost`` times larger.
    """
    planted = {"lipid_up": "lipid", "amide_II_up": "amide_II", "amide_III_up": "amide_III"}
    out = []
    for label, target in planted.items():
        peaks = []
        for name, (c, w) in _BASE_PEAKS.items():
            a = level * (boost if name == target else 1.0)
            peaks.append(Peak(c, w, a, amp_rel_sd * a))
        out.append(ClassProfile(label, tuple(peaks), **_NUISANCE))
    return out


def save_profiles(profiles, path: str | Path) -> None:
    Path(path).write_text(json.dumps([p.to_dict() for p in profiles], indent=2) + "\n")


def load_profiles(path: str | Path) -> list[ClassProfile]:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = data.get("profiles", [])
    return [ClassProfile.from_dict(d) for d in data]


__all__ = [
    "ClassProfile",
    "PLANTED_BANDS",
    "Peak",
    "default_profiles",
    "gaussian_peaks",
    "generate_cohort",
    "load_profiles",
    "planted_band_profiles",
    "render",
    "save_profiles",
]
