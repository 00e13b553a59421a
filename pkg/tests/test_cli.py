"""End-to-end command-line tests driven through main(), covering exit
codes, produced artifacts, multi-seed summaries, and rerun determinism.
"""

import hashlib
import json

import pytest

from featadapt.cli import main
from featadapt.feature_store import load_dataset


def _write_config(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


SYNTH_DOC = {
    "synth": {"seed": 3, "n_classes": 3, "n_layers": 2, "dim": 6,
              "n_source": 60, "n_target": 60, "class_sep": 6.0,
              "domain_shift": 1.0},
}

TRAIN_DOC = {
    "train": {"method": "p+CFd", "lr": 0.02, "batch_cls": 16, "batch_mi": 16,
              "max_epochs": 3, "seed": 7},
    "fam": {"n_layers_used": 2, "in_dim": 6, "out_dim": 6, "tau": 0.3},
    "schedule": {"k0": 10, "k_step": 10, "max_epoch": 2},
}


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    cfg = _write_config(out / "cfg.json", SYNTH_DOC)
    assert main(["synth", "--config", cfg, "--out", str(out / "data")]) == 0
    return out / "data"


def test_synth_writes_four_featsets_and_manifest(synth_dir):
    names = sorted(p.name for p in synth_dir.iterdir())
    assert names == ["manifest.json", "source_train.fset", "source_valid.fset",
                     "target_test.fset", "target_unlabeled.fset"]
    ds = load_dataset(synth_dir / "source_train.fset")
    assert len(ds) == 60 and ds.n_classes == 3


def test_synth_rerun_is_byte_identical(synth_dir, tmp_path):
    cfg = _write_config(tmp_path / "cfg.json", SYNTH_DOC)
    assert main(["synth", "--config", cfg, "--out", str(tmp_path / "data")]) == 0
    for name in ("source_train.fset", "target_unlabeled.fset"):
        a = hashlib.sha256((synth_dir / name).read_bytes()).hexdigest()
        b = hashlib.sha256((tmp_path / "data" / name).read_bytes()).hexdigest()
        assert a == b


def test_synth_missing_section_is_config_error(tmp_path):
    cfg = _write_config(tmp_path / "cfg.json", {"out": "x"})
    assert main(["synth", "--config", cfg]) == 2


def test_unknown_top_level_key_is_config_error(tmp_path):
    doc = dict(SYNTH_DOC, mystery=1)
    cfg = _write_config(tmp_path / "cfg.json", doc)
    assert main(["synth", "--config", cfg, "--out", str(tmp_path / "d")]) == 2


def test_missing_config_file_is_config_error(tmp_path):
    assert main(["synth", "--config", str(tmp_path / "absent.json")]) == 2


@pytest.fixture(scope="module")
def trained_dir(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    doc = dict(TRAIN_DOC, manifest=str(synth_dir / "manifest.json"))
    cfg = _write_config(out / "cfg.json", doc)
    assert main(["train", "--config", cfg, "--out", str(out / "run")]) == 0
    return out / "run"


def test_train_writes_trace_and_checkpoint(trained_dir):
    assert (trained_dir / "trace.csv").exists()
    assert (trained_dir / "checkpoint.fckp").exists()
    lines = (trained_dir / "trace.csv").read_text().splitlines()
    assert len(lines) == 1 + TRAIN_DOC["train"]["max_epochs"]


def test_train_unknown_method_is_config_error(synth_dir, tmp_path):
    doc = dict(TRAIN_DOC, manifest=str(synth_dir / "manifest.json"))
    cfg = _write_config(tmp_path / "cfg.json", doc)
    assert main(["train", "--config", cfg, "--method", "telepathy",
                 "--out", str(tmp_path / "run")]) == 2


def test_train_unknown_train_key_is_config_error(synth_dir, tmp_path):
    doc = dict(TRAIN_DOC, manifest=str(synth_dir / "manifest.json"))
    doc["train"] = dict(doc["train"], typo_key=1)
    cfg = _write_config(tmp_path / "cfg.json", doc)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "run")]) == 2


def test_train_multi_seed_summary(synth_dir, tmp_path):
    doc = dict(TRAIN_DOC, manifest=str(synth_dir / "manifest.json"))
    cfg = _write_config(tmp_path / "cfg.json", doc)
    out = tmp_path / "runs"
    assert main(["train", "--config", cfg, "--seeds", "2",
                 "--out", str(out)]) == 0
    assert (out / "seed7" / "checkpoint.fckp").exists()
    assert (out / "seed8" / "checkpoint.fckp").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["method"] == "p_cfd"
    assert {"mean", "std"} <= set(summary["valid_acc"])
    assert len(summary["runs"]) == 2


def test_train_corrupted_featset_is_data_error(synth_dir, tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    for p in synth_dir.iterdir():
        (data / p.name).write_bytes(p.read_bytes())
    blob = bytearray((data / "source_train.fset").read_bytes())
    blob[:4] = b"XXXX"
    (data / "source_train.fset").write_bytes(bytes(blob))
    doc = dict(TRAIN_DOC, manifest=str(data / "manifest.json"))
    cfg = _write_config(tmp_path / "cfg.json", doc)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "run")]) == 3


def test_diagnose_accuracy(trained_dir, synth_dir, tmp_path, capsys):
    out = tmp_path / "report.json"
    code = main(["diagnose",
                 "--checkpoint", str(trained_dir / "checkpoint.fckp"),
                 "--manifest", str(synth_dir / "manifest.json"),
                 "--which", "accuracy,adist", "--out", str(out)])
    assert code == 0
    report = json.loads(out.read_text())
    assert 0.0 <= report["accuracy"] <= 1.0
    assert 0.0 <= report["a_distance"] <= 2.0
    assert report["method"] == "p_cfd"


def test_diagnose_unknown_which_is_config_error(trained_dir, synth_dir):
    assert main(["diagnose",
                 "--checkpoint", str(trained_dir / "checkpoint.fckp"),
                 "--manifest", str(synth_dir / "manifest.json"),
                 "--which", "horoscope"]) == 2


def test_gradcheck_passes_and_fault_injection_fails(capsys):
    assert main(["gradcheck", "--batches", "2"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out
    assert main(["gradcheck", "--batches", "2", "--inject-fault"]) == 4
    assert "FAIL" in capsys.readouterr().out
