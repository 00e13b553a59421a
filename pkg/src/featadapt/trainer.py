"""Training orchestration: epoch loop, batch construction, center and
pseudo-label refresh, schedules, plateau learning-rate halving, tracing,
and checkpoint/trace serialization.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diff_core import Rng, adam_step, softmax as t_softmax
from .fam import FamConfig, Model, fam_forward, forward_logits
from .feature_store import Dataset
from .objectives import (
    ClassCenters,
    adv_baseline,
    class_centers,
    intra_class_loss,
    kl_baseline,
    mmd_baseline,
    nce_fd_loss,
    pseudo_ce,
    sample_negatives,
    source_ce,
)
from .self_training import PseudoLabelSet, Schedule, alpha_at, build_pseudo_set

METHODS = {
    "source_only": frozenset({"S"}),
    "p": frozenset({"S", "P"}),
    "p_c": frozenset({"S", "P", "C"}),
    "p_fd": frozenset({"S", "P", "Fd"}),
    "p_cfd": frozenset({"S", "P", "Fd", "C"}),
    "fd_only": frozenset({"S", "Fd"}),
    "cfd_only": frozenset({"S", "Fd", "C"}),
    "kl": frozenset({"S", "KL"}),
    "mmd": frozenset({"S", "MMD"}),
    "adv": frozenset({"S", "Adv"}),
}

TRACE_COLUMNS = (
    "epoch", "lr", "alpha", "n_pseudo", "L_pred_S", "L_pred_T", "L_Fd",
    "L_C", "L_baseline", "valid_acc", "target_acc", "L_intra_class",
)

CKPT_MAGIC = b"FCKP"
CKPT_VERSION = 1


class CheckpointError(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    method: str = "p_cfd"
    fam: FamConfig = field(default_factory=FamConfig)
    schedule: Schedule = field(default_factory=Schedule)
    lr: float = 1e-3
    batch_cls: int = 50
    batch_mi: int = 100
    max_epochs: int = 25
    warmup_epochs: int = 1
    plateau_patience: int = 10
    lam: float = 1.0
    kl_weight: float = 500.0
    mmd_weight: float = 1.0
    adv_weight: float = 0.01
    n_negatives: int = 10
    exclude_self_negatives: bool = False
    # ramp the intra-class weight with the alpha schedule so clustering
    # only bites once pseudo-labels have stabilized
    lam_ramp: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be >= 1")
        needs_pairs = METHODS[self.method] & {"Fd", "KL", "MMD", "Adv"}
        if needs_pairs and self.batch_mi < 2:
            raise ValueError("batch_mi must be >= 2 for pairwise terms")


@dataclass
class TrainTrace:
    rows: list[dict] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = [",".join(TRACE_COLUMNS)]
        for row in self.rows:
            lines.append(",".join(_fmt(row[c]) for c in TRACE_COLUMNS))
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_csv())

    def column(self, name: str) -> list:
        return [row[name] for row in self.rows]


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


def predict(model: Model, dataset: Dataset):
    """Argmax labels and softmax probability rows for every record."""
    if len(dataset) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, dataset.n_classes))
    probs = t_softmax(forward_logits(model, dataset.features())).data
    return probs.argmax(axis=1), probs


def accuracy(model: Model, dataset: Dataset) -> float:
    if len(dataset) == 0:
        raise ValueError("accuracy of empty dataset")
    preds, _ = predict(model, dataset)
    return float(np.mean(preds == dataset.labels()))


def _cycled_batch(order: np.ndarray, cursor: int, size: int):
    n = len(order)
    idx = order[np.arange(cursor, cursor + size) % n]
    return idx, (cursor + size) % n


def _member_union(src_feats, src_labels, tgt_feats, pseudo: PseudoLabelSet):
    if len(pseudo) == 0:
        return src_feats, src_labels
    pids = pseudo.ids()
    feats = np.concatenate([src_feats, tgt_feats[pids]], axis=0)
    labels = np.concatenate([src_labels, pseudo.labels()])
    return feats, labels


def train(config: TrainConfig, source_train: Dataset, source_valid: Dataset,
          target_unlabeled: Dataset, target_test: Dataset | None = None):
    """Run the full optimization for `config.method`; returns (Model, TrainTrace).

    Per epoch: refresh pseudo labels (after warmup), refresh class centers
    when the method uses the intra-class term, take one Adam step per
    classifier batch with all active loss terms summed, then evaluate
    source validation and halve the learning rate on plateau.
    """
    active = METHODS[config.method]
    rng = Rng(config.seed)
    model = Model.init(config.fam, source_train.n_classes, rng)

    groups = ["fam", "cls"]
    if "Fd" in active:
        groups.append("inf")
    if "Adv" in active:
        groups.append("dom")
    params = model.parameters(groups)

    src_feats = source_train.features()
    src_labels = source_train.labels().astype(np.int64)
    tgt_feats = target_unlabeled.features()
    n_src, n_tgt = len(source_train), len(target_unlabeled)
    needs_pseudo = bool(active & {"P", "C"})

    lr = config.lr
    best_valid = -1.0
    stale = 0
    trace = TrainTrace()

    for epoch in range(config.max_epochs):
        sched_epoch = epoch - config.warmup_epochs
        pseudo = PseudoLabelSet(entries=[], epoch=epoch, k_target=0)
        if needs_pseudo and sched_epoch >= 0:
            pseudo = build_pseudo_set(model, target_unlabeled,
                                      config.schedule, sched_epoch)
        alpha = alpha_at(config.schedule, sched_epoch) if sched_epoch >= 0 else 0.0
        lam_eff = config.lam
        if config.lam_ramp and config.schedule.alpha_max > 0:
            lam_eff *= alpha / config.schedule.alpha_max

        centers: ClassCenters | None = None
        if "C" in active:
            mf, ml = _member_union(src_feats, src_labels, tgt_feats, pseudo)
            centers = class_centers(model, mf, ml, source_train.n_classes, epoch)

        src_order = rng.permutation(n_src)
        tgt_order = rng.permutation(n_tgt)
        pseudo_order = rng.permutation(len(pseudo)) if len(pseudo) else None
        tgt_cur = 0
        ps_cur = 0
        n_steps = math.ceil(n_src / config.batch_cls)
        sums = {"L_pred_S": 0.0, "L_pred_T": 0.0, "L_Fd": 0.0, "L_C": 0.0,
                "L_baseline": 0.0}

        for step in range(n_steps):
            sb = src_order[step * config.batch_cls:(step + 1) * config.batch_cls]
            total = source_ce(model, src_feats[sb], src_labels[sb])
            sums["L_pred_S"] += total.item()

            if "P" in active and len(pseudo) > 0 and alpha > 0.0:
                pb, ps_cur = _cycled_batch(
                    pseudo_order, ps_cur, min(config.batch_cls, len(pseudo)))
                pids = pseudo.ids()[pb]
                l_p = pseudo_ce(model, tgt_feats[pids],
                                pseudo.labels()[pb], alpha)
                sums["L_pred_T"] += l_p.item()
                total = total + l_p

            if "Fd" in active:
                mb, tgt_cur = _cycled_batch(
                    tgt_order, tgt_cur, min(config.batch_mi, n_tgt))
                negs = sample_negatives(len(mb), config.n_negatives, rng,
                                        config.exclude_self_negatives)
                l_fd = nce_fd_loss(model, tgt_feats[mb], negs)
                sums["L_Fd"] += l_fd.item()
                total = total + l_fd

            if "C" in active and lam_eff != 0.0:
                cf, cl = src_feats[sb], src_labels[sb]
                if len(pseudo) > 0:
                    pb2, _ = _cycled_batch(
                        pseudo_order, ps_cur, min(config.batch_cls, len(pseudo)))
                    pids2 = pseudo.ids()[pb2]
                    cf = np.concatenate([cf, tgt_feats[pids2]], axis=0)
                    cl = np.concatenate([cl, pseudo.labels()[pb2]])
                l_c = intra_class_loss(model, cf, cl, centers)
                sums["L_C"] += l_c.item()
                # per-member mean keeps the term's scale independent of
                # batch size, matching the CE terms it is summed with
                total = total + l_c * (lam_eff / len(cl))

            if active & {"KL", "MMD", "Adv"}:
                bsz = min(config.batch_mi, n_tgt, n_src)
                tb, tgt_cur = _cycled_batch(tgt_order, tgt_cur, bsz)
                ub = rng.permutation(n_src)[:bsz]  # source unlabeled stand-in
                if "Adv" in active:
                    mixed = np.concatenate([src_feats[ub], tgt_feats[tb]], axis=0)
                    z_mixed = fam_forward(model, mixed).z
                    dom = np.concatenate([np.zeros(bsz, dtype=np.int64),
                                          np.ones(bsz, dtype=np.int64)])
                    l_b = adv_baseline(model, z_mixed, dom, config.adv_weight)
                else:
                    z_s = fam_forward(model, src_feats[ub]).z
                    z_t = fam_forward(model, tgt_feats[tb]).z
                    if "KL" in active:
                        l_b = kl_baseline(z_s, z_t) * config.kl_weight
                    else:
                        l_b = mmd_baseline(z_s, z_t) * config.mmd_weight
                sums["L_baseline"] += l_b.item()
                total = total + l_b

            total.backward()
            adam_step(params, lr)

        valid_acc = accuracy(model, source_valid)
        target_acc = accuracy(model, target_test) if target_test is not None else None

        # full-set intra-class sum for the trace (fresh centers when the
        # method does not maintain frozen ones)
        mf, ml = _member_union(src_feats, src_labels, tgt_feats, pseudo)
        report_centers = centers if centers is not None else class_centers(
            model, mf, ml, source_train.n_classes, epoch)
        l_intra_full = intra_class_loss(model, mf, ml, report_centers).item()

        trace.rows.append({
            "epoch": epoch, "lr": lr, "alpha": alpha, "n_pseudo": len(pseudo),
            "L_pred_S": sums["L_pred_S"] / n_steps,
            "L_pred_T": sums["L_pred_T"] / n_steps,
            "L_Fd": sums["L_Fd"] / n_steps,
            "L_C": sums["L_C"] / n_steps,
            "L_baseline": sums["L_baseline"] / n_steps,
            "valid_acc": valid_acc, "target_acc": target_acc,
            "L_intra_class": l_intra_full,
        })

        if valid_acc > best_valid:
            best_valid = valid_acc
            stale = 0
        else:
            stale += 1
            if stale >= config.plateau_patience:
                lr *= 0.5
                stale = 0

    return model, trace


# -- checkpoint io ----------------------------------------------------------


def save_checkpoint(model: Model, config: TrainConfig, path):
    """Versioned binary checkpoint: FCKP magic, JSON meta, named f64 tensors."""
    meta = json.dumps({
        "method": config.method,
        "n_classes": model.n_classes,
        "fam": {
            "n_layers_used": model.config.n_layers_used,
            "in_dim": model.config.in_dim,
            "out_dim": model.config.out_dim,
            "tau": model.config.tau,
            "attention_mode": model.config.attention_mode,
            "per_layer_projection": model.config.per_layer_projection,
        },
    }, sort_keys=True).encode()
    tensors = model.named_tensors()
    blob = struct.pack("<4sHI", CKPT_MAGIC, CKPT_VERSION, len(meta)) + meta
    blob += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        nb = name.encode()
        blob += struct.pack("<H", len(nb)) + nb
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    Path(path).write_bytes(blob)


def load_checkpoint(path) -> tuple[Model, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic in {path}")
    version, meta_len = struct.unpack_from("<HI", raw, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 10
    meta = json.loads(raw[off:off + meta_len].decode())
    off += meta_len
    (n_tensors,) = struct.unpack_from("<I", raw, off)
    off += 4
    tensors = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + name_len].decode()
        off += name_len
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off)
        off += count * 8
        tensors[name] = arr.reshape(shape).copy()
    fam_cfg = FamConfig(**meta["fam"])
    model = Model.init(fam_cfg, meta["n_classes"], Rng(0))
    for p in model.parameters():
        if p.name not in tensors:
            raise CheckpointError(f"checkpoint missing tensor {p.name!r}")
        if p.data.shape != tensors[p.name].shape:
            raise CheckpointError(f"shape mismatch for tensor {p.name!r}")
        p.data = tensors[p.name]
    return model, meta
