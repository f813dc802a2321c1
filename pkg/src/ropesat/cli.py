"""Command-line entry point: ``ropesat <subcommand> ...``.

Exit status is 0 on success, 1 for usage or validation errors and 2 for
failures while running. Messages go to stderr; results go to files only.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import plotting
from .augment import augment_dataset
from .config import ConfigError, RunConfig
from .evaluation import cross_validate, make_splits
from .explain import BandTable, class_overlap_report
from .model.checkpoint import load_checkpoint, save_checkpoint
from .model.train import train
from .preprocess import PreprocessConfig, pca_projection, preprocess_dataset
from .spectra import Dataset, SpectraError, WavenumberGrid, load_dataset, save_dataset
from .synthgen import default_profiles, generate_cohort, load_profiles, planted_band_profiles

log = logging.getLogger("ropesat")

THREADS_ENV = "SPECTRA_SAT_THREADS"


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValidationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
        if n < 1:
            raise ValidationError(f"{THREADS_ENV} must be >= 1")
        return n
    return os.cpu_count() or 1


@contextmanager
def _thread_cap(n: int):
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n")


def _write_text(path: Path, text: str, manifest: dict | None = None) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    if manifest is not None:
        _write_json(path.with_name(path.name + ".manifest.json"), manifest)


def _load(path) -> Dataset:
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"no such file: {p}")
    return load_dataset(p)


def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    changes = {}
    if getattr(args, "data", None):
        changes["data"] = args.data
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "out_dir", None):
        changes["out_dir"] = args.out_dir
    if getattr(args, "bands", None):
        changes["bands"] = args.bands
    if getattr(args, "epochs", None) is not None:
        changes["optimizer"] = replace(cfg.optimizer, epochs=args.epochs)
    if getattr(args, "copies", None) is not None:
        changes["augment"] = replace(cfg.augment, copies_per_sample=args.copies)
    return cfg.override(**changes)


def _manifest(cfg: RunConfig | None, threads: int, **extra) -> dict:
    m = {"threads": threads}
    if cfg is not None:
        m["run_config"] = cfg.to_dict()
    m.update(extra)
    return m


def cmd_synth(args, threads):
    if args.profiles:
        profiles = load_profiles(args.profiles)
    elif args.preset == "planted":
        profiles = planted_band_profiles()
    else:
        profiles = default_profiles()
    grid = WavenumberGrid(args.grid_start, args.grid_end, args.grid_points)
    ds = generate_cohort(profiles, args.n, grid, args.seed)
    ds = ds.with_spectra(ds.spectra, manifest=_manifest(None, threads, seed=args.seed))
    save_dataset(ds, args.out)
    log.info("wrote %d spectra to %s", len(ds), args.out)


def cmd_preprocess(args, threads):
    cfg = _run_config(args)
    pc = cfg.preprocess
    if args.boundary:
        pc = replace(pc, boundary_policy=args.boundary)
    if args.no_snv:
        pc = replace(pc, apply_snv=False)
    if args.no_derivative:
        pc = replace(pc, apply_second_derivative=False)
    cfg = replace(cfg, preprocess=pc)
    ds = preprocess_dataset(_load(args.data), pc)
    save_dataset(ds.with_spectra(ds.spectra, manifest=_manifest(cfg, threads)), args.out)


def cmd_augment(args, threads):
    cfg = _run_config(args)
    ac = replace(cfg.augment, seed=args.seed if args.seed is not None else cfg.augment.seed)
    cfg = replace(cfg, augment=ac)
    ds = augment_dataset(_load(args.data), ac)
    save_dataset(ds.with_spectra(ds.spectra, manifest=_manifest(cfg, threads)), args.out)


def cmd_train(args, threads):
    cfg = _run_config(args)
    cfg.validate()
    raw = _load(cfg.data)
    out = Path(cfg.out_dir)
    plan = make_splits(raw, "holdout_80_20", cfg.seed)
    tr, te = plan.train_test(raw, 1)
    train_pre = preprocess_dataset(raw.subset(tr), cfg.preprocess)
    test_pre = preprocess_dataset(raw.subset(te), cfg.preprocess)
    aug = augment_dataset(train_pre, cfg.augment)
    mc = replace(cfg.model, input_length=train_pre.grid.points, num_classes=len(raw.class_names))
    params, curves = train(mc, aug, test_pre, cfg.optimizer)
    manifest = _manifest(cfg, threads, class_names=list(raw.class_names),
                         grid=train_pre.grid.to_dict())
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, out / "model.ckpt", manifest)
    _write_text(out / "curves.csv", curves.to_csv(), manifest)
    save_dataset(test_pre.with_spectra(test_pre.spectra, manifest=manifest), out / "test.jsonl")
    log.info("final val accuracy %.4f", curves.val_acc[-1] if curves.val_acc else float("nan"))


def cmd_eval(args, threads):
    cfg = _run_config(args)
    cfg.validate()
    raw = _load(cfg.data)
    res = cross_validate(cfg.model, raw, cfg.augment, cfg.preprocess, cfg.seed, cfg.optimizer,
                         mode=cfg.split_mode)
    out = Path(cfg.out_dir)
    manifest = _manifest(cfg, threads)
    for f in res.folds:
        _write_json(out / f"fold_{f.fold}.json", {**f.report.to_dict(), "manifest": manifest})
        _write_text(out / f"curves_fold_{f.fold}.csv", f.curves.to_csv(), manifest)
    _write_json(out / "aggregate.json", {"aggregate": res.aggregate, "manifest": manifest,
                                          "n_folds": len(res.folds)})
    total = sum(f.report.confusion for f in res.folds)
    plotting.confusion_svg(total, raw.class_names, out / "confusion.svg",
                           "pooled over folds")
    first = res.folds[0].report
    plotting.roc_svg(first.roc, {c: v for c, v in zip(first.class_names, first.auc)},
                     out / "roc_fold_0.svg")
    log.info("mean accuracy %.4f", res.aggregate["accuracy"]["mean"])


def _parse_betas(text: str) -> list[float]:
    try:
        betas = [float(b) for b in text.split(",") if b.strip()]
    except ValueError:
        raise ValidationError(f"bad --betas value {text!r}") from None
    if not betas or any(not 0 < b < 1 for b in betas):
        raise ValidationError("betas must lie in (0, 1)")
    return betas


def cmd_explain(args, threads):
    params, meta = load_checkpoint(args.checkpoint)
    ds = _load(args.data)
    if ds.grid.points != params.config.input_length:
        pc = PreprocessConfig.from_dict(meta.get("run_config", {}).get("preprocess", {}))
        ds = preprocess_dataset(ds, pc)
    bands = BandTable.load(args.bands) if args.bands else BandTable()
    betas = _parse_betas(args.betas)
    report = class_overlap_report(params, ds, bands, betas, args.mode)
    manifest = {"checkpoint_meta": meta, "betas": betas, "denominator_mode": args.mode,
                "bands": bands.bands, "threads": threads, "errors": report.errors}
    out = Path(args.out)
    _write_text(out, report.to_csv(), manifest)
    if args.svg_dir:
        d = Path(args.svg_dir)
        d.mkdir(parents=True, exist_ok=True)
        w = ds.grid.values
        for ci, cls in enumerate(ds.class_names):
            if cls not in report.class_maps:
                continue
            mean_spec = ds.X[ds.y == ci].mean(axis=0)
            plotting.saliency_svg(w, mean_spec, report.class_maps[cls].weights, bands.bands,
                                  d / f"saliency_{cls}.svg", betas[0], cls)
        plotting.overlap_bars_svg(report.table(betas[0]), d / "overlap.svg")
    for cls, why in report.errors.items():
        log.warning("class %s: %s", cls, why)


def cmd_pca(args, threads):
    ds = _load(args.data)
    if args.preprocess:
        ds = preprocess_dataset(ds, PreprocessConfig())
    rep = pca_projection(ds, 2)
    _write_json(Path(args.out), {**rep.to_dict(), "manifest": {"threads": threads,
                                                                "preprocessed": args.preprocess}})


def cmd_plot(args, threads):
    src = Path(args.input)
    if not src.exists():
        raise ValidationError(f"no such file: {src}")
    out = Path(args.out)
    if src.suffix == ".json":
        data = json.loads(src.read_text())
        if "scores" in data:
            plotting.pca_svg(data, out)
        elif "confusion" in data:
            plotting.confusion_svg(np.array(data["confusion"]), data["class_names"], out)
        else:
            raise ValidationError(f"{src}: not a PCA or metrics report")
        return
    with open(src, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValidationError(f"{src}: empty CSV")
    cols = set(rows[0])
    if {"epoch", "train_loss", "val_acc"} <= cols:
        series = {k: [float(r[k]) for r in rows] for k in rows[0]}
        plotting.curves_svg(series, out)
    elif {"class", "band", "beta", "gamma"} <= cols:
        beta = float(args.beta) if args.beta else float(rows[0]["beta"])
        table: dict = {}
        for r in rows:
            if float(r["beta"]) == beta:
                table.setdefault(r["class"], {})[r["band"]] = float(r["gamma"])
        plotting.overlap_bars_svg(table, out, f"beta = {beta:g}")
    else:
        raise ValidationError(f"{src}: unrecognized CSV columns")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ropesat", description="Explainable IR spectral classification pipeline.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth", help="generate a synthetic cohort")
    s.add_argument("--profiles", help="JSON list of class profiles")
    s.add_argument("--preset", choices=("default", "planted"), default="default")
    s.add_argument("--n", type=int, required=True, help="spectra per class")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--grid-start", type=float, default=1800.0)
    s.add_argument("--grid-end", type=float, default=900.0)
    s.add_argument("--grid-points", type=int, default=219)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="crop, SNV, second derivative")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--boundary", choices=("shrink", "replicate"))
    s.add_argument("--no-snv", action="store_true")
    s.add_argument("--no-derivative", action="store_true")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("augment", help="same-class mixup augmentation")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--copies", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_augment)

    for name, func, text in (("train", cmd_train, "train on an 80/20 holdout split"),
                             ("eval", cmd_eval, "five-fold cross-validation")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--config")
        s.add_argument("--data")
        s.add_argument("--out-dir")
        s.add_argument("--seed", type=int)
        s.add_argument("--epochs", type=int)
        s.add_argument("--copies", type=int)
        s.set_defaults(func=func)

    s = sub.add_parser("explain", help="Grad-CAM overlap report")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--betas", default="0.2,0.3,0.4,0.5")
    s.add_argument("--bands")
    s.add_argument("--mode", choices=("weights_in_band", "band_mass"), default="weights_in_band")
    s.add_argument("--out", default="overlap.csv")
    s.add_argument("--svg-dir")
    s.set_defaults(func=cmd_explain)

    s = sub.add_parser("pca", help="two-component PCA report")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--preprocess", action="store_true")
    s.set_defaults(func=cmd_pca)

    s = sub.add_parser("plot", help="render a JSON/CSV report to SVG")
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--beta")
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        threads = _threads()
    except ValidationError as e:
        print(f"ropesat: error: {e}", file=sys.stderr)
        return 1
    try:
        with _thread_cap(threads):
            args.func(args, threads)
    except (ValidationError, ConfigError, SpectraError, FileNotFoundError,
            json.JSONDecodeError) as e:
        print(f"ropesat: error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        print(f"ropesat: failed: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
