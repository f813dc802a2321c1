import json

import numpy as np
import pytest

from ropesat.cli import main
from ropesat.spectra import load_dataset
from ropesat.synthgen import default_profiles, save_profiles

TINY_MODEL = {"embed_dim": 8, "num_heads": 2, "num_encoder_blocks": 1,
              "head_conv_channels": 4, "fc_hidden": 8}


@pytest.fixture
def cohort(tmp_path):
    assert main(["synth", "--preset", "default", "--n", "6", "--seed", "7",
                 "--out", str(tmp_path / "cohort.jsonl")]) == 0
    return tmp_path / "cohort.jsonl"


def _config(tmp_path, data, **extra):
    cfg = {"data": str(data), "out_dir": "out", "seed": 3, "model": TINY_MODEL,
           "augment": {"copies_per_sample": 2}, "optimizer": {"epochs": 1, "batch_size": 16}}
    cfg.update(extra)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return path


def test_synth_with_profiles_file(tmp_path):
    p = tmp_path / "p.json"
    save_profiles(default_profiles(), p)
    out = tmp_path / "cohort.jsonl"
    assert main(["synth", "--profiles", str(p), "--n", "50", "--seed", "7",
                 "--out", str(out)]) == 0
    ds = load_dataset(out)
    assert len(ds) == 150
    assert ds.provenance["manifest"]["seed"] == 7


def test_preprocess_augment_pca_chain(tmp_path, cohort):
    pre = tmp_path / "pre.csv"
    assert main(["preprocess", "--data", str(cohort), "--out", str(pre)]) == 0
    ds = load_dataset(pre)
    assert ds.grid.points == 217
    assert ds.provenance["manifest"]["run_config"]["preprocess"]["boundary_policy"] == "shrink"
    aug = tmp_path / "aug.jsonl"
    assert main(["augment", "--data", str(pre), "--out", str(aug), "--copies", "3",
                 "--seed", "1"]) == 0
    assert len(load_dataset(aug)) == 18 * 4
    pca = tmp_path / "pca.json"
    assert main(["pca", "--data", str(cohort), "--preprocess", "--out", str(pca)]) == 0
    assert len(json.loads(pca.read_text())["scores"]) == 18
    assert main(["plot", "--input", str(pca), "--out", str(tmp_path / "pca.svg")]) == 0
    assert (tmp_path / "pca.svg").read_text().lstrip().startswith("<?xml")


def test_eval_outputs_and_determinism(tmp_path, cohort):
    cfg = _config(tmp_path, cohort)
    assert main(["eval", "--config", str(cfg)]) == 0
    out = tmp_path / "out"
    names = sorted(p.name for p in out.iterdir())
    for k in range(5):
        assert f"fold_{k}.json" in names and f"curves_fold_{k}.csv" in names
    assert {"aggregate.json", "confusion.svg", "roc_fold_0.svg"} <= set(names)
    fold = json.loads((out / "fold_0.json").read_text())
    assert fold["manifest"]["run_config"]["seed"] == 3
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert main(["eval", "--config", str(cfg)]) == 0
    second = {p.name: p.read_bytes() for p in out.iterdir()}
    assert first == second


def test_train_then_explain(tmp_path, cohort):
    cfg = _config(tmp_path, cohort)
    assert main(["train", "--config", str(cfg)]) == 0
    out = tmp_path / "out"
    assert (out / "model.ckpt").exists()
    header = (out / "curves.csv").read_text().splitlines()[0]
    assert header == "epoch,train_loss,train_acc,val_loss,val_acc"
    csv_path = tmp_path / "overlap.csv"
    args = ["explain", "--checkpoint", str(out / "model.ckpt"), "--data",
            str(out / "test.jsonl"), "--betas", "0.2,0.3,0.4,0.5", "--out", str(csv_path),
            "--svg-dir", str(tmp_path / "svg")]
    assert main(args) == 0
    rows = csv_path.read_text().splitlines()[1:]
    by_key = {}
    for r in rows:
        cls, band, beta, gamma, mode = r.split(",")
        assert 0.0 <= float(gamma) <= 1.0 and mode == "weights_in_band"
        by_key.setdefault((cls, band), []).append(float(beta))
    assert by_key and all(b == [0.2, 0.3, 0.4, 0.5] for b in by_key.values())
    manifest = json.loads((tmp_path / "overlap.csv.manifest.json").read_text())
    assert manifest["betas"] == [0.2, 0.3, 0.4, 0.5]
    first = csv_path.read_bytes()
    assert main(args) == 0
    assert csv_path.read_bytes() == first
    assert main(["plot", "--input", str(csv_path), "--out", str(tmp_path / "o.svg")]) == 0
    assert main(["plot", "--input", str(out / "curves.csv"),
                 "--out", str(tmp_path / "c.svg")]) == 0


def test_exit_codes(tmp_path, cohort, capsys, monkeypatch):
    assert main(["nonsense"]) == 1
    assert main(["synth", "--n", "3"]) == 1
    assert main(["preprocess", "--data", str(tmp_path / "missing.jsonl"),
                 "--out", str(tmp_path / "x.jsonl")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["eval", "--config", str(bad)]) == 1
    assert main(["eval", "--config", str(_config(tmp_path, cohort, colour="red"))]) == 1
    assert main(["explain", "--checkpoint", str(cohort), "--data", str(cohort)]) == 2
    monkeypatch.setenv("SPECTRA_SAT_THREADS", "zero")
    assert main(["synth", "--n", "3", "--out", str(tmp_path / "y.jsonl")]) == 1
    err = capsys.readouterr().err
    assert "error" in err
    assert capsys.readouterr().out == ""


def test_threads_env_is_recorded(tmp_path, monkeypatch):
    monkeypatch.setenv("SPECTRA_SAT_THREADS", "1")
    out = tmp_path / "c.jsonl"
    assert main(["synth", "--n", "2", "--out", str(out)]) == 0
    assert load_dataset(out).provenance["manifest"]["threads"] == 1
    assert np.isfinite(load_dataset(out).X).all()
