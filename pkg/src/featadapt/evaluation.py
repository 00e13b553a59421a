"""Diagnostic estimators: accuracy, proxy A-distance over frozen features,
error of the ideal joint hypothesis, and the in-domain distillation test.

All probes are fresh, seeded single affine layers trained on frozen FAM
outputs, so they measure feature quality rather than probe capacity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .diff_core import Rng, Tensor, adam_step, affine, cross_entropy, glorot, zeros_param
from .fam import FamConfig, Model, fam_forward
from .feature_store import Dataset
from .objectives import nce_fd_loss, sample_negatives, source_ce
from .trainer import accuracy  # re-exported: the standard accuracy metric

__all__ = [
    "ProbeConfig", "DiagnosticReport", "accuracy", "a_distance",
    "joint_error", "in_domain_fd_test", "summarize",
]


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 30
    lr: float = 0.01
    batch_size: int = 50
    holdout_fraction: float = 0.2
    seed: int = 0


@dataclass
class DiagnosticReport:
    accuracy: float | None = None
    a_distance: float | None = None
    joint_error: float | None = None
    per_seed: dict[str, list[float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        doc = {k: v for k, v in (
            ("accuracy", self.accuracy),
            ("a_distance", self.a_distance),
            ("joint_error", self.joint_error),
        ) if v is not None}
        if self.per_seed:
            doc["per_seed"] = self.per_seed
            doc["summary"] = {k: summarize(v) for k, v in self.per_seed.items()}
        return doc


def summarize(values: list[float]) -> dict:
    if len(values) == 0:
        raise ValueError("summarize needs at least one value")
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


def _train_probe(z: np.ndarray, labels: np.ndarray, n_classes: int,
                 cfg: ProbeConfig, rng: Rng):
    w = glorot("probe_w", (n_classes, z.shape[1]), rng)
    b = zeros_param("probe_b", (n_classes,))
    n = len(labels)
    steps = max(1, math.ceil(n / cfg.batch_size))
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for s in range(steps):
            idx = order[s * cfg.batch_size:(s + 1) * cfg.batch_size]
            if len(idx) == 0:
                continue
            loss = cross_entropy(affine(Tensor(z[idx]), w, b), labels[idx])
            loss.backward()
            adam_step([w, b], cfg.lr)

    def predict(x: np.ndarray) -> np.ndarray:
        return (x @ w.data.T + b.data).argmax(axis=1)

    return predict


def _split(n: int, holdout_fraction: float, rng: Rng):
    order = rng.permutation(n)
    n_hold = max(1, int(round(n * holdout_fraction)))
    return order[n_hold:], order[:n_hold]


def _frozen_z(model: Model, features: np.ndarray) -> np.ndarray:
    return fam_forward(model, features).z.data


def a_distance(model: Model, source: Dataset, target: Dataset,
               probe: ProbeConfig = ProbeConfig()) -> float:
    """Proxy A-distance over frozen FAM outputs, in [0, 2].

    A fresh probe is trained to tell domains apart; with held-out error
    delta, the distance is 2 * (1 - 2 * delta): indistinguishable domains
    (delta ~ 1/2) give ~0, perfectly separable ones give ~2.
    """
    if len(source) < 10 or len(target) < 10:
        raise ValueError("a_distance needs >= 10 examples per domain")
    rng = Rng(probe.seed)
    n = min(len(source), len(target))  # balance the sample
    z_s = _frozen_z(model, source.features()[:n])
    z_t = _frozen_z(model, target.features()[:n])
    z = np.concatenate([z_s, z_t], axis=0)
    dom = np.concatenate([np.zeros(n, dtype=np.int64),
                          np.ones(n, dtype=np.int64)])
    train_idx, hold_idx = _split(2 * n, probe.holdout_fraction, rng)
    predict = _train_probe(z[train_idx], dom[train_idx], 2, probe, rng)
    delta = float(np.mean(predict(z[hold_idx]) != dom[hold_idx]))
    return float(np.clip(2.0 * (1.0 - 2.0 * delta), 0.0, 2.0))


def joint_error(model: Model, source: Dataset, target: Dataset,
                probe: ProbeConfig = ProbeConfig()) -> float:
    """Held-out source error + target error of one probe trained on both.

    Requires target labels; this is a test-only diagnostic.
    """
    if any(r.label is None for r in target.records):
        raise ValueError("joint_error requires labeled target data")
    rng = Rng(probe.seed)
    z_s, y_s = _frozen_z(model, source.features()), source.labels().astype(np.int64)
    z_t, y_t = _frozen_z(model, target.features()), target.labels().astype(np.int64)
    s_train, s_hold = _split(len(source), probe.holdout_fraction, rng)
    t_train, t_hold = _split(len(target), probe.holdout_fraction, rng)
    z_train = np.concatenate([z_s[s_train], z_t[t_train]], axis=0)
    y_train = np.concatenate([y_s[s_train], y_t[t_train]])
    predict = _train_probe(z_train, y_train, source.n_classes, probe, rng)
    err_s = float(np.mean(predict(z_s[s_hold]) != y_s[s_hold]))
    err_t = float(np.mean(predict(z_t[t_hold]) != y_t[t_hold]))
    return err_s + err_t


def in_domain_fd_test(train: Dataset, valid: Dataset, test: Dataset,
                      fam_config: FamConfig, fd_epochs: int = 20,
                      n_negatives: int = 10, batch_size: int = 100,
                      probe: ProbeConfig = ProbeConfig(),
                      seed: int = 0) -> tuple[float, float]:
    """Single-domain discriminativeness check of distillation-only features.

    Path A pre-trains the FAM with the distillation loss alone on unlabeled
    train features, freezes it, and fits a linear probe on the labels.
    Path B trains FAM + classifier jointly supervised. Returns both test
    accuracies (fd_accuracy, supervised_accuracy).
    """
    if len(train) < batch_size // 2 or len(test) < 10:
        raise ValueError("in_domain_fd_test needs larger splits")
    feats = train.features()
    labels = train.labels().astype(np.int64)
    n = len(train)

    # path A: distillation-only FAM, frozen, then linear probe
    rng = Rng(seed)
    fd_model = Model.init(fam_config, train.n_classes, rng)
    fd_params = fd_model.parameters(("fam", "inf"))
    steps = max(1, math.ceil(n / batch_size))
    for _ in range(fd_epochs):
        order = rng.permutation(n)
        for s in range(steps):
            idx = order[s * batch_size:(s + 1) * batch_size]
            if len(idx) < 2:
                continue
            negs = sample_negatives(len(idx), n_negatives, rng)
            loss = nce_fd_loss(fd_model, feats[idx], negs)
            loss.backward()
            adam_step(fd_params, probe.lr)
    z_train = _frozen_z(fd_model, feats)
    predict = _train_probe(z_train, labels, train.n_classes, probe, rng)
    fd_acc = float(np.mean(
        predict(_frozen_z(fd_model, test.features())) == test.labels()
    ))

    # path B: jointly supervised FAM + classifier
    rng = Rng(seed + 1)
    sup_model = Model.init(fam_config, train.n_classes, rng)
    sup_params = sup_model.parameters(("fam", "cls"))
    for _ in range(probe.epochs):
        order = rng.permutation(n)
        for s in range(steps):
            idx = order[s * batch_size:(s + 1) * batch_size]
            if len(idx) == 0:
                continue
            loss = source_ce(sup_model, feats[idx], labels[idx])
            loss.backward()
            adam_step(sup_params, probe.lr)
    sup_acc = accuracy(sup_model, test)
    return fd_acc, sup_acc
