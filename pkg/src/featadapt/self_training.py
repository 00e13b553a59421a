"""Pseudo-label generation: entropy ranking, class round-robin retention,
and the growth schedules for the retained-set size and the pseudo-loss weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diff_core import softmax as t_softmax
from .fam import Model, forward_logits
from .feature_store import Dataset
from .objectives import entropy_scores


@dataclass(frozen=True)
class Schedule:
    k0: int = 100
    k_step: int = 100
    alpha_kind: str = "linear"
    alpha_max: float = 1.0
    max_epoch: int = 25

    def __post_init__(self):
        if self.k0 < 0 or self.k_step < 0 or self.alpha_max < 0:
            raise ValueError("schedule values must be >= 0")
        if self.alpha_kind not in ("linear", "quadratic"):
            raise ValueError(f"unknown alpha_kind {self.alpha_kind!r}")


@dataclass
class PseudoLabelSet:
    """The retained target subset: (record_id, pseudo_label, entropy) triples."""

    entries: list[tuple[int, int, float]]
    epoch: int
    k_target: int

    def ids(self) -> np.ndarray:
        return np.array([e[0] for e in self.entries], dtype=np.int64)

    def labels(self) -> np.ndarray:
        return np.array([e[1] for e in self.entries], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.entries)


def rank(model: Model, target: Dataset) -> list[tuple[int, int, float]]:
    """Pseudo-label every target record and sort ascending by entropy.

    Ties break by record id, so the ordering is fully deterministic.
    """
    if len(target) == 0:
        raise ValueError("rank on empty target set")
    feats = target.features()
    logits = forward_logits(model, feats)
    probs = t_softmax(logits).data
    preds = probs.argmax(axis=1)
    ents = entropy_scores(model, feats)
    order = np.lexsort((np.arange(len(target)), ents))
    return [(int(i), int(preds[i]), float(ents[i])) for i in order]


def diversify(ranked: list[tuple[int, int, float]], k: int,
              n_classes: int, epoch: int = 0) -> PseudoLabelSet:
    """Round-robin selection over predicted classes, lowest entropy first.

    Classes are visited in ascending index order, skipping exhausted ones,
    until k entries are selected or every class runs out.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    buckets: list[list[tuple[int, int, float]]] = [[] for _ in range(n_classes)]
    for entry in ranked:  # already ascending by entropy
        buckets[entry[1]].append(entry)
    cursors = [0] * n_classes
    selected: list[tuple[int, int, float]] = []
    while len(selected) < k:
        advanced = False
        for c in range(n_classes):
            if len(selected) >= k:
                break
            if cursors[c] < len(buckets[c]):
                selected.append(buckets[c][cursors[c]])
                cursors[c] += 1
                advanced = True
        if not advanced:
            break
    return PseudoLabelSet(entries=selected, epoch=epoch, k_target=k)


def k_at(schedule: Schedule, epoch: int, n_target: int) -> int:
    """Retained-set size at `epoch`: k0 + k_step * epoch, capped at |T|."""
    return min(schedule.k0 + schedule.k_step * epoch, n_target)


def alpha_at(schedule: Schedule, epoch: int) -> float:
    """Pseudo-loss weight: ramps to alpha_max over max_epoch epochs."""
    frac = min(epoch / schedule.max_epoch, 1.0) if schedule.max_epoch > 0 else 1.0
    if schedule.alpha_kind == "quadratic":
        frac = frac * frac
    return schedule.alpha_max * frac


def build_pseudo_set(model: Model, target: Dataset, schedule: Schedule,
                     epoch: int) -> PseudoLabelSet:
    ranked = rank(model, target)
    k = k_at(schedule, epoch, len(target))
    return diversify(ranked, k, target.n_classes, epoch=epoch)
