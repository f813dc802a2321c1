"""Same-class Mixup with random scaling and Gaussian noise.

An augmented trace is ``alpha * (lam * x + (1 - lam) * y) + noise`` where
``x`` and ``y`` share a label, ``lam ~ Beta(a, b)``, ``alpha ~ U(low, high)``
and ``noise ~ N(0, sd^2)`` per point.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .spectra import Dataset, SpectraError, Spectrum


class EmptyClassError(SpectraError):
    pass


@dataclass(frozen=True)
class AugmentConfig:
    beta_shape: tuple[float, float] = (0.4, 0.4)
    scale_range: tuple[float, float] = (0.9, 1.1)
    noise_sd: float = 0.05
    copies_per_sample: int = 200
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "beta_shape", tuple(float(v) for v in self.beta_shape))
        object.__setattr__(self, "scale_range", tuple(float(v) for v in self.scale_range))
        a, b = self.beta_shape
        if not (a > 0 and b > 0):
            raise ValueError(f"beta_shape must be positive, got {self.beta_shape}")
        lo, hi = self.scale_range
        # low == high pins the scale factor, e.g. (1, 1) switches scaling off
        if not 0 < lo <= hi:
            raise ValueError(f"scale_range must satisfy 0 < low <= high, got {self.scale_range}")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if self.copies_per_sample < 0:
            raise ValueError("copies_per_sample must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["beta_shape"] = list(self.beta_shape)
        d["scale_range"] = list(self.scale_range)
        return d


def sample_beta(shape: tuple[float, float], rng: np.random.Generator, size=None):
    """Beta draws as a ratio of Gamma draws, ``g1 / (g1 + g2)``."""
    a, b = shape
    if not (a > 0 and b > 0):
        raise ValueError("Beta shape parameters must be positive")
    g1 = rng.standard_gamma(a, size)
    g2 = rng.standard_gamma(b, size)
    total = g1 + g2
    # both gammas underflow to 0 for tiny shapes; fall back to a fair coin
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(total > 0, g1 / np.where(total > 0, total, 1.0), 0.5)
    return float(out) if size is None else out


def augment_pair(x, y, lam: float, alpha: float, noise) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if x.shape != y.shape or x.shape != noise.shape:
        raise ValueError(f"length mismatch: {x.shape}, {y.shape}, {noise.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return alpha * (lam * x + (1.0 - lam) * y) + noise


def _record_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), index]))


def augment_dataset(train: Dataset, cfg: AugmentConfig) -> Dataset:
    """Append ``copies_per_sample`` same-class mixtures after each original.

    Every record draws from its own stream keyed on ``(seed, record index)``,
    so output does not depend on generation order.
    """
    if cfg.copies_per_sample == 0 or len(train) == 0:
        return train
    labels = [s.label for s in train.spectra]
    members: dict[str, list[int]] = {}
    for i, lab in enumerate(labels):
        members.setdefault(lab, []).append(i)
    empty = [lab for lab in train.class_names if lab not in members]
    if empty:
        raise EmptyClassError(f"classes with no training samples: {empty}")

    low, high = cfg.scale_range
    n = train.grid.points
    out: list[Spectrum] = list(train.spectra)
    for i, src in enumerate(train.spectra):
        peers = [j for j in members[src.label] if j != i] or [i]
        for c in range(cfg.copies_per_sample):
            rng = _record_rng(cfg.seed, i * cfg.copies_per_sample + c)
            k = peers[int(rng.integers(len(peers)))]
            lam = sample_beta(cfg.beta_shape, rng)
            alpha = float(rng.uniform(low, high)) if high > low else low
            noise = rng.normal(0.0, cfg.noise_sd, n) if cfg.noise_sd > 0 else np.zeros(n)
            partner = train.spectra[k]
            vals = augment_pair(src.values, partner.values, lam, alpha, noise)
            out.append(Spectrum(
                f"{src.id}#aug{c}",
                src.label,
                src.cohort,
                vals,
                {"parent_a": src.id, "parent_b": partner.id, "lambda": lam, "alpha": alpha},
            ))
    return train.with_spectra(out, augment=cfg.to_dict())
