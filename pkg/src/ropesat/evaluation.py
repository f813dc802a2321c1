"""Stratified splits, one-vs-rest metrics, ROC/AUC, and five-fold cross-validation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .augment import AugmentConfig, augment_dataset
from .model.network import ModelConfig, ModelParams, predict_proba
from .model.train import OptimizerConfig, TrainingCurves, train
from .preprocess import PreprocessConfig, preprocess_dataset
from .spectra import Dataset, SpectraError

log = logging.getLogger(__name__)

SPLIT_MODES = ("holdout_80_20", "kfold_5")


class EvalError(ValueError):
    pass


class TooFewSamplesError(EvalError):
    pass


class FoldError(EvalError):
    def __init__(self, fold: int, cause: Exception):
        self.fold = fold
        super().__init__(f"fold {fold} failed: {cause}")


@dataclass(frozen=True)
class SplitPlan:
    """``assignments`` maps spectrum id to fold index.

    For ``holdout_80_20`` fold 1 is the test split and fold 0 the training split.
    """

    mode: str
    assignments: dict
    seed: int
    stratified: bool = True

    @property
    def n_folds(self) -> int:
        return 2 if self.mode == "holdout_80_20" else 5

    def fold_indices(self, ds: Dataset, fold: int) -> np.ndarray:
        return np.array([i for i, s in enumerate(ds.spectra) if self.assignments[s.id] == fold],
                        dtype=np.int64)

    def train_test(self, ds: Dataset, fold: int) -> tuple[np.ndarray, np.ndarray]:
        test = self.fold_indices(ds, fold)
        mask = np.ones(len(ds), bool)
        mask[test] = False
        return np.flatnonzero(mask), test

    def test_folds(self) -> list[int]:
        return [1] if self.mode == "holdout_80_20" else list(range(5))

    def to_dict(self) -> dict:
        return {"mode": self.mode, "seed": self.seed, "stratified": self.stratified,
                "assignments": self.assignments}


def make_splits(ds: Dataset, mode: str = "kfold_5", seed: int = 0) -> SplitPlan:
    """Stratified fold assignment, deterministic in ``seed``.

    Within each class the members are shuffled and dealt round-robin; the
    starting fold rotates between classes so fold totals stay balanced.
    """
    if mode not in SPLIT_MODES:
        raise EvalError(f"mode must be one of {SPLIT_MODES}, got {mode!r}")
    ids = ds.ids
    if len(set(ids)) != len(ids):
        raise EvalError("spectrum ids must be unique to split")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5B1]))
    y = ds.y
    assignments = {}
    offset = 0
    for ci, cls in enumerate(ds.class_names):
        members = np.flatnonzero(y == ci)
        if members.size == 0:
            continue
        members = members[rng.permutation(members.size)]
        if mode == "kfold_5":
            if members.size < 5:
                raise TooFewSamplesError(
                    f"class {cls!r} has {members.size} samples; kfold_5 needs >= 5"
                )
            for r, i in enumerate(members):
                assignments[ids[i]] = int((r + offset) % 5)
            offset = (offset + members.size) % 5
        else:
            if members.size < 2:
                raise TooFewSamplesError(f"class {cls!r} needs >= 2 samples for a holdout split")
            n_test = min(max(int(round(0.2 * members.size)), 1), members.size - 1)
            for r, i in enumerate(members):
                assignments[ids[i]] = 1 if r < n_test else 0
    return SplitPlan(mode, assignments, seed)


@dataclass
class MetricsReport:
    class_names: list
    confusion: np.ndarray
    sensitivity: np.ndarray
    specificity: np.ndarray
    precision: np.ndarray
    f1: np.ndarray
    accuracy: float
    roc: dict
    auc: np.ndarray
    undefined: dict = field(default_factory=dict)
    fold: int | None = None

    def to_dict(self) -> dict:
        def arr(a):
            return [None if not np.isfinite(v) else float(v) for v in a]

        return {
            "fold": self.fold,
            "class_names": list(self.class_names),
            "confusion": self.confusion.tolist(),
            "accuracy": self.accuracy,
            "sensitivity": arr(self.sensitivity),
            "specificity": arr(self.specificity),
            "precision": arr(self.precision),
            "f1": arr(self.f1),
            "auc": arr(self.auc),
            "roc": {c: {k: arr(v) for k, v in r.items()} for c, r in self.roc.items()},
            "undefined": self.undefined,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, allow_nan=False)


def _rate(num: float, den: float, key: str, reason: str, undefined: dict) -> float:
    if den == 0:
        undefined[key] = reason
        return math.nan
    return num / den


def roc_curve(scores: np.ndarray, positive: np.ndarray) -> dict:
    """ROC points from sweeping every unique score as a ``>=`` threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    P = positive.sum()
    N = positive.size - P
    order = np.argsort(-scores, kind="mergesort")
    s, pos = scores[order], positive[order]
    tp = np.cumsum(pos)
    fp = np.cumsum(~pos)
    # last index of every run of equal scores
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    thresholds = np.r_[np.inf, s[last]]
    tpr = np.r_[0.0, tp[last] / P] if P else np.full(last.size + 1, math.nan)
    fpr = np.r_[0.0, fp[last] / N] if N else np.full(last.size + 1, math.nan)
    return {"fpr": fpr, "tpr": tpr, "thresholds": thresholds}


def auc_trapezoid(fpr: np.ndarray, tpr: np.ndarray) -> float:
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def compute_metrics(true_labels, predicted_probabilities, class_names,
                    fold: int | None = None) -> MetricsReport:
    """Confusion matrix, one-vs-rest rates and ROC/AUC.

    Hard predictions are the argmax of each row (first index wins ties).
    Rates with a zero denominator are NaN and listed in ``undefined``.
    """
    class_names = list(class_names)
    probs = np.asarray(predicted_probabilities, dtype=np.float64)
    labels = np.asarray(true_labels)
    if labels.size == 0:
        raise EvalError("no predictions to evaluate")
    if probs.ndim != 2 or probs.shape != (labels.size, len(class_names)):
        raise EvalError(f"probabilities shape {probs.shape} does not match "
                        f"{labels.size} labels x {len(class_names)} classes")
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise EvalError("probability rows must sum to 1")
    if labels.dtype.kind in "US" or labels.dtype == object:
        index = {c: i for i, c in enumerate(class_names)}
        y = np.array([index[v] for v in labels], dtype=np.int64)
    else:
        y = labels.astype(np.int64)
    K = len(class_names)
    pred = np.argmax(probs, axis=1)
    cm = np.zeros((K, K), dtype=np.int64)
    np.add.at(cm, (y, pred), 1)
    total = cm.sum()
    undefined: dict = {}
    sens, spec, prec, f1, auc = (np.full(K, math.nan) for _ in range(5))
    roc = {}
    for c, name in enumerate(class_names):
        tp = cm[c, c]
        fn = cm[c].sum() - tp
        fp = cm[:, c].sum() - tp
        tn = total - tp - fn - fp
        sens[c] = _rate(tp, tp + fn, f"sensitivity[{name}]", "no positives", undefined)
        spec[c] = _rate(tn, tn + fp, f"specificity[{name}]", "no negatives", undefined)
        prec[c] = _rate(tp, tp + fp, f"precision[{name}]", "no positive predictions", undefined)
        if np.isnan(prec[c]) or np.isnan(sens[c]):
            undefined[f"f1[{name}]"] = "precision or sensitivity undefined"
        elif prec[c] + sens[c] == 0:
            undefined[f"f1[{name}]"] = "precision and sensitivity both zero"
        else:
            f1[c] = 2 * prec[c] * sens[c] / (prec[c] + sens[c])
        r = roc_curve(probs[:, c], y == c)
        roc[name] = r
        if tp + fn == 0 or tn + fp == 0:
            undefined[f"auc[{name}]"] = "needs both positives and negatives"
        else:
            auc[c] = auc_trapezoid(r["fpr"], r["tpr"])
    return MetricsReport(class_names, cm, sens, spec, prec, f1, float(np.trace(cm) / total),
                         roc, auc, undefined, fold)


@dataclass
class FoldResult:
    fold: int
    report: MetricsReport
    params: ModelParams
    curves: TrainingCurves
    test: Dataset
    train_ids: frozenset
    augmented_parents: list  # (parent_a, parent_b) per augmented training record
    probabilities: np.ndarray


@dataclass
class CVResult:
    folds: list
    aggregate: dict
    plan: SplitPlan
    config: dict

    @property
    def reports(self) -> list[MetricsReport]:
        return [f.report for f in self.folds]

    def summary(self) -> dict:
        return {"config": self.config, "aggregate": self.aggregate,
                "folds": [f.report.to_dict() for f in self.folds]}

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=1)


def audit_no_leakage(fold: FoldResult) -> list[str]:
    """Augmented training records whose parents are outside the training fold."""
    bad = []
    for a, b in fold.augmented_parents:
        if a not in fold.train_ids or b not in fold.train_ids:
            bad.append(f"{a}+{b}")
    test_ids = set(fold.test.ids)
    bad.extend(sorted(test_ids & fold.train_ids))
    return bad


def aggregate_reports(reports: list[MetricsReport]) -> dict:
    """Mean and sample sd across folds, per metric and class (NaNs ignored)."""
    names = reports[0].class_names
    out = {"accuracy": _mean_sd([r.accuracy for r in reports])}
    for metric in ("sensitivity", "specificity", "precision", "f1", "auc"):
        out[metric] = {
            c: _mean_sd([getattr(r, metric)[i] for r in reports]) for i, c in enumerate(names)
        }
    return out


def _mean_sd(values) -> dict:
    v = np.array([x for x in values if np.isfinite(x)], dtype=np.float64)
    if v.size == 0:
        return {"mean": None, "sd": None, "n": 0}
    sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return {"mean": float(v.mean()), "sd": sd, "n": int(v.size)}


def _fold_seeds(seed: int, fold: int) -> tuple[int, int, int]:
    ss = np.random.SeedSequence([seed, fold, 0xCF])
    a, m, o = (int(x) for x in ss.generate_state(3, dtype=np.uint32))
    return a, m, o


def cross_validate(model_cfg: ModelConfig, ds: Dataset,
                   augment_cfg: AugmentConfig = AugmentConfig(),
                   preprocess_cfg: PreprocessConfig = PreprocessConfig(),
                   seed: int = 0,
                   optimizer_cfg: OptimizerConfig = OptimizerConfig(),
                   mode: str = "kfold_5",
                   plan: SplitPlan | None = None) -> CVResult:
    """Split raw spectra, then per fold: preprocess, augment training part, train, evaluate.

    ``model_cfg.input_length`` and ``num_classes`` are fitted to the
    preprocessed data; per-fold seeds for augmentation, initialization and
    batch order derive from ``(seed, fold)``.
    """
    if any("parent_a" in s.meta for s in ds.spectra):
        raise EvalError("cross_validate expects raw spectra; augmented records found")
    plan = plan or make_splits(ds, mode, seed)
    config = {
        "model": model_cfg.to_dict(),
        "augment": augment_cfg.to_dict(),
        "preprocess": preprocess_cfg.to_dict(),
        "optimizer": optimizer_cfg.to_dict(),
        "split_mode": plan.mode,
        "stratified": plan.stratified,
        "seed": seed,
    }
    folds = []
    for k in plan.test_folds():
        try:
            folds.append(_run_fold(k, plan, model_cfg, ds, augment_cfg, preprocess_cfg,
                                   optimizer_cfg, seed))
        except (SpectraError, ValueError, ArithmeticError) as e:
            raise FoldError(k, e) from e
        log.info("fold %d accuracy %.4f", k, folds[-1].report.accuracy)
    return CVResult(folds, aggregate_reports([f.report for f in folds]), plan, config)


def _run_fold(k, plan, model_cfg, ds, augment_cfg, preprocess_cfg, optimizer_cfg, seed):
    tr_idx, te_idx = plan.train_test(ds, k)
    train_raw, test_raw = ds.subset(tr_idx), ds.subset(te_idx)
    train_pre = preprocess_dataset(train_raw, preprocess_cfg)
    test_pre = preprocess_dataset(test_raw, preprocess_cfg)
    aug_seed, model_seed, opt_seed = _fold_seeds(seed, k)
    train_aug = augment_dataset(train_pre, replace(augment_cfg, seed=aug_seed))
    cfg = replace(model_cfg, input_length=train_pre.grid.points,
                  num_classes=len(ds.class_names), seed=model_seed)
    params, curves = train(cfg, train_aug, test_pre, replace(optimizer_cfg, seed=opt_seed))
    probs = predict_proba(params, test_pre)
    report = compute_metrics(test_pre.y, probs, ds.class_names, fold=k)
    parents = [(s.meta["parent_a"], s.meta["parent_b"])
               for s in train_aug.spectra if "parent_a" in s.meta]
    return FoldResult(k, report, params, curves, test_pre, frozenset(train_pre.ids), parents,
                      probs)


def permute_labels(ds: Dataset, seed: int = 0) -> Dataset:
    """Same spectra with labels shuffled (permutation control)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9E7]))
    labels = [s.label for s in ds.spectra]
    perm = rng.permutation(len(labels))
    spectra = [replace(s, label=labels[j]) for s, j in zip(ds.spectra, perm)]
    return ds.with_spectra(spectra, permuted_labels_seed=seed)
