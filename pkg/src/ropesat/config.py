"""Run configuration: one JSON file aggregating every stage's settings."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .augment import AugmentConfig
from .explain import BandTable
from .model.network import ModelConfig
from .model.train import OptimizerConfig
from .preprocess import PreprocessConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    bands: str | None = None
    split_mode: str = "kfold_5"
    seed: int = 0
    data: str | None = None
    out_dir: str = "out"
    betas: tuple = (0.2, 0.3, 0.4, 0.5)
    denominator_mode: str = "weights_in_band"

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown run-config keys: {sorted(unknown)}")
        kw = dict(d)
        try:
            if "preprocess" in kw:
                kw["preprocess"] = PreprocessConfig.from_dict(kw["preprocess"])
            if "augment" in kw:
                kw["augment"] = AugmentConfig.from_dict(kw["augment"])
            if "model" in kw:
                kw["model"] = ModelConfig.from_dict(kw["model"])
            if "optimizer" in kw:
                kw["optimizer"] = OptimizerConfig.from_dict(kw["optimizer"])
        except TypeError as e:
            raise ConfigError(str(e)) from None
        if "betas" in kw:
            kw["betas"] = tuple(float(b) for b in kw["betas"])
        if base_dir is not None:
            for key in ("data", "bands", "out_dir"):
                if kw.get(key) and not Path(kw[key]).is_absolute():
                    kw[key] = str(base_dir / kw[key])
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e.msg}, line {e.lineno})") from None
        return cls.from_dict(data, path.parent)

    def to_dict(self) -> dict:
        return {
            "preprocess": self.preprocess.to_dict(),
            "augment": self.augment.to_dict(),
            "model": self.model.to_dict(),
            "optimizer": self.optimizer.to_dict(),
            "bands": self.bands,
            "split_mode": self.split_mode,
            "seed": self.seed,
            "data": self.data,
            "out_dir": self.out_dir,
            "betas": list(self.betas),
            "denominator_mode": self.denominator_mode,
        }

    def band_table(self) -> BandTable:
        return BandTable.load(self.bands) if self.bands else BandTable()

    def validate(self) -> None:
        if self.data is None:
            raise ConfigError("run config needs 'data'")
        for key in ("data", "bands"):
            p = getattr(self, key)
            if p is not None and not Path(p).exists():
                raise ConfigError(f"{key} path does not exist: {p}")
        if self.split_mode not in ("kfold_5", "holdout_80_20"):
            raise ConfigError(f"unknown split_mode {self.split_mode!r}")

    def override(self, **changes) -> "RunConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})
