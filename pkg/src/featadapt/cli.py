"""Command-line surface: synth / train / diagnose / gradcheck.

Configs are JSON documents; unknown keys are rejected, and command-line
flags override file values. Exit codes: 0 success, 2 config error,
3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import datagen, evaluation
from .fam import FamConfig
from .feature_store import FeatureStoreError, Manifest, load_dataset, save_dataset
from .gradcheck_suite import run_all
from .self_training import Schedule
from .trainer import (
    METHODS,
    TrainConfig,
    accuracy,
    load_checkpoint,
    save_checkpoint,
    train,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

# presets matching the published method names
METHOD_ALIASES = {
    "p+CFd": "p_cfd", "p+C": "p_c", "p+Fd": "p_fd",
    "CFd": "cfd_only", "Fd": "fd_only",
}


class ConfigError(Exception):
    pass


def _build(dc_type, doc: dict, where: str):
    names = {f.name for f in dataclasses.fields(dc_type)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    try:
        return dc_type(**doc)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {where}: {e}") from e


def load_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    allowed = {"synth", "manifest", "train", "fam", "schedule",
               "diagnostics", "out", "seeds"}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    return doc


def _train_config(doc: dict, args) -> TrainConfig:
    fam = _build(FamConfig, doc.get("fam", {}), "fam")
    sched_doc = dict(doc.get("schedule", {}))
    train_doc = dict(doc.get("train", {}))
    sched_doc.setdefault("max_epoch", train_doc.get("max_epochs", 25))
    schedule = _build(Schedule, sched_doc, "schedule")
    method = train_doc.get("method", "p_cfd")
    if getattr(args, "method", None):
        method = args.method
    method = METHOD_ALIASES.get(method, method)
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    train_doc["method"] = method
    if getattr(args, "seed", None) is not None:
        train_doc["seed"] = args.seed
    train_doc["fam"] = fam
    train_doc["schedule"] = schedule
    return _build(TrainConfig, train_doc, "train")


def _resolve_manifest(doc: dict, args) -> tuple[Manifest, Path]:
    path = getattr(args, "manifest", None) or doc.get("manifest")
    if path is None:
        raise ConfigError("missing required key 'manifest' (or --manifest)")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"manifest not found: {p}")
    return Manifest.load(p), p.parent


def _out_dir(doc: dict, args) -> Path:
    out = getattr(args, "out", None) or doc.get("out") or "out"
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_synth(args) -> int:
    doc = load_config(args.config)
    if "synth" not in doc:
        raise ConfigError("missing required key 'synth'")
    synth_doc = dict(doc["synth"])
    if "layer_noise_profile" in synth_doc and synth_doc["layer_noise_profile"]:
        synth_doc["layer_noise_profile"] = tuple(synth_doc["layer_noise_profile"])
    if args.seed is not None:
        synth_doc["seed"] = args.seed
    config = _build(datagen.SynthConfig, synth_doc, "synth")
    out = _out_dir(doc, args)
    datasets = datagen.generate(config)
    files, domains = {}, {}
    for ds in datasets:
        name = f"{ds.role}.fset"
        save_dataset(ds, out / name)
        files[ds.role] = name
        domains[ds.role] = ds.domain_tag
    Manifest(files=files, domains=domains).save(out / "manifest.json")
    print(f"wrote {len(files)} FEATSET files + manifest to {out}")
    return EXIT_OK


def _load_roles(manifest: Manifest, base: Path):
    required = ("source_train", "source_valid", "target_unlabeled")
    splits = {}
    for role in required:
        splits[role] = manifest.load_role(role, base)
    splits["target_test"] = (
        manifest.load_role("target_test", base)
        if "target_test" in manifest.files else None
    )
    return splits


def _run_one_seed(config: TrainConfig, splits, out: Path):
    model, trace = train(config, splits["source_train"], splits["source_valid"],
                         splits["target_unlabeled"], splits["target_test"])
    out.mkdir(parents=True, exist_ok=True)
    trace.save(out / "trace.csv")
    save_checkpoint(model, config, out / "checkpoint.fckp")
    final = trace.rows[-1]
    return model, trace, final


def cmd_train(args) -> int:
    doc = load_config(args.config)
    config = _train_config(doc, args)
    manifest, base = _resolve_manifest(doc, args)
    splits = _load_roles(manifest, base)
    out = _out_dir(doc, args)

    seeds = [config.seed]
    if args.seeds is not None:
        seeds = [config.seed + i for i in range(args.seeds)]
    elif doc.get("seeds"):
        seeds = list(doc["seeds"])

    finals = []
    for seed in seeds:
        cfg = dataclasses.replace(config, seed=seed)
        run_out = out if len(seeds) == 1 else out / f"seed{seed}"
        _, _, final = _run_one_seed(cfg, splits, run_out)
        finals.append({"seed": seed,
                       "valid_acc": final["valid_acc"],
                       "target_acc": final["target_acc"]})
        print(f"seed {seed}: valid_acc={final['valid_acc']:.4f}"
              + (f" target_acc={final['target_acc']:.4f}"
                 if final["target_acc"] is not None else ""))
    if len(seeds) > 1:
        summary = {"method": config.method, "runs": finals}
        for key in ("valid_acc", "target_acc"):
            vals = [f[key] for f in finals if f[key] is not None]
            if vals:
                summary[key] = evaluation.summarize(vals)
        (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return EXIT_OK


DIAG_KEYS = ("accuracy", "adist", "jointerr", "indomain")


def cmd_diagnose(args) -> int:
    which = set(args.which.split(",")) if args.which else set(DIAG_KEYS)
    unknown = which - set(DIAG_KEYS)
    if unknown:
        raise ConfigError(f"unknown diagnostic(s): {sorted(unknown)}")
    model, meta = load_checkpoint(args.checkpoint)
    manifest = Manifest.load(args.manifest)
    base = Path(args.manifest).parent
    splits = _load_roles(manifest, base)
    probe = evaluation.ProbeConfig(seed=args.seed or 0)

    report = {"method": meta.get("method")}
    if "accuracy" in which:
        if splits["target_test"] is None:
            raise ConfigError("accuracy diagnostic needs a target_test role")
        report["accuracy"] = accuracy(model, splits["target_test"])
    if "adist" in which:
        report["a_distance"] = evaluation.a_distance(
            model, splits["source_train"], splits["target_unlabeled"], probe)
    if "jointerr" in which:
        if splits["target_test"] is None:
            raise ConfigError("jointerr diagnostic needs a target_test role")
        report["joint_error"] = evaluation.joint_error(
            model, splits["source_train"], splits["target_test"], probe)
    if "indomain" in which:
        fd_acc, sup_acc = evaluation.in_domain_fd_test(
            splits["source_train"], splits["source_valid"],
            splits["source_valid"], model.config, probe=probe,
            seed=args.seed or 0)
        report["indomain_fd_accuracy"] = fd_acc
        report["indomain_supervised_accuracy"] = sup_acc

    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_all(tolerance=args.tolerance, n_batches=args.batches,
                      inject_fault=args.inject_fault)
    all_ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: max relative error {r.max_rel_error:.3e}")
        all_ok &= r.passed
    return EXIT_OK if all_ok else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="featadapt",
        description="Domain adaptation over frozen multi-layer encoder features",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic FEATSET files")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="run a training recipe")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest")
    p.add_argument("--method")
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=int, help="run N consecutive seeds")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("diagnose", help="diagnostics on a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--which", help="comma list of accuracy,adist,jointerr,indomain")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_diagnose)

    p = sub.add_parser("gradcheck", help="finite-difference check of all losses")
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--batches", type=int, default=20)
    p.add_argument("--inject-fault", action="store_true")
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FeatureStoreError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
