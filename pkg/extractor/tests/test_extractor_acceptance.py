"""Extractor acceptance gate: conformance of extracted features with the
FEATSET consumer, bit-identical re-extraction, and an end-to-end training
smoke run on real encoder features.
"""

import numpy as np

from extractor import ExtractionJob, extract

from featadapt.fam import FamConfig
from featadapt.feature_store import load_dataset
from featadapt.self_training import Schedule
from featadapt.trainer import TrainConfig, train


def _report(criterion, ok, detail):
    print(f"\nACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{criterion}: {detail}"


def _write_corpus(path, n, seed, labeled):
    """Two crude topics over disjoint word pools, one example per line."""
    rng = np.random.default_rng(seed)
    pools = (["cat", "dog", "bird", "fish", "sat", "ran"],
             ["film", "book", "good", "bad", "happy", "sad"])
    lines = []
    for i in range(n):
        topic = i % 2
        words = rng.choice(pools[topic], size=rng.integers(3, 8))
        text = " ".join(words)
        lines.append(f"{text}\ttopic{topic}" if labeled else text)
    path.write_text("\n".join(lines) + "\n")
    return path


def test_criterion_9_extractor_conformance(tiny_encoder_dir, tmp_path):
    # part 1: 10 short texts load with the declared shape, twice identically
    tsv = _write_corpus(tmp_path / "ten.tsv", 10, seed=0, labeled=True)
    paths = [tmp_path / "ten_a.fset", tmp_path / "ten_b.fset"]
    for p in paths:
        extract(ExtractionJob(input=str(tsv), encoder_name=tiny_encoder_dir,
                              layers=3, output=str(p), batch_size=4))
    ds = load_dataset(paths[0], role="source_train")
    shape_ok = ds.features().shape == (10, 3, 16) and ds.n_classes == 2
    identical = paths[0].read_bytes() == paths[1].read_bytes()

    # part 2: 200-example smoke run trains end-to-end on real features
    src_tsv = _write_corpus(tmp_path / "src.tsv", 100, seed=1, labeled=True)
    tgt_tsv = _write_corpus(tmp_path / "tgt.tsv", 100, seed=2, labeled=False)
    src_fset, tgt_fset = tmp_path / "src.fset", tmp_path / "tgt.fset"
    for t, f in ((src_tsv, src_fset), (tgt_tsv, tgt_fset)):
        extract(ExtractionJob(input=str(t), encoder_name=tiny_encoder_dir,
                              layers=3, output=str(f), batch_size=16))
    source = load_dataset(src_fset, domain_tag="src", role="source_train")
    target = load_dataset(tgt_fset, domain_tag="tgt", role="target_unlabeled")
    from featadapt.feature_store import subset
    train_split = subset(source, range(80))
    valid_split = subset(source, range(80, 100), role="source_valid")
    cfg = TrainConfig(
        method="p_cfd",
        fam=FamConfig(n_layers_used=3, in_dim=16, out_dim=16, tau=0.3),
        schedule=Schedule(k0=20, k_step=20, max_epoch=4),
        lr=1e-3, batch_cls=20, batch_mi=20, max_epochs=5, seed=0,
    )
    _, trace = train(cfg, train_split, valid_split, target, None)
    smoke_ok = (len(trace.rows) == 5
                and all(np.isfinite(r["valid_acc"]) for r in trace.rows))

    ok = shape_ok and identical and smoke_ok
    _report("criterion-9 extractor conformance", ok,
            f"shape {ds.features().shape}, re-extraction identical: "
            f"{identical}, 200-example smoke run finished: {smoke_ok}")
