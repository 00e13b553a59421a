"""All training objectives.

Source / pseudo-label cross-entropy, prediction-entropy confidence score,
the NCE feature self-distillation loss with shuffle-sampled negatives,
the intra-class clustering loss with epoch-frozen centers, their combined
class-aware distillation loss, and the KL / MMD / adversarial
domain-alignment baselines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fam as fam_mod
from .diff_core import (
    Rng,
    Tensor,
    affine,
    cosine_rows,
    cross_entropy,
    dense_tanh,
    entropy,
    grad_reverse,
    l2norm_rows,
    softmax,
)
from .fam import Model, fam_forward, forward_logits

MMD_BANDWIDTH_SCALES = (0.25, 0.5, 1.0, 2.0, 4.0)


@dataclass
class NegativeSet:
    """Per-negative batch permutations: indices[:, k] is the k-th shuffle."""

    indices: np.ndarray  # [batch, n_neg]


@dataclass
class ClassCenters:
    centers: np.ndarray      # [n_classes, out_dim]
    counts: np.ndarray       # [n_classes]
    epoch_stamp: int

    def present(self, c: int) -> bool:
        return bool(self.counts[c] > 0)


@dataclass
class LossReport:
    total: Tensor
    components: dict[str, float] = field(default_factory=dict)


# -- classifier losses ------------------------------------------------------


def source_ce(model: Model, features: np.ndarray, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of the classifier over a labeled batch."""
    if len(labels) == 0:
        raise ValueError("source_ce on empty batch")
    return cross_entropy(forward_logits(model, features), labels)


def entropy_scores(model: Model, features: np.ndarray) -> np.ndarray:
    """Prediction entropy per record (confidence score; lower = more confident)."""
    return entropy(forward_logits(model, features)).data


def pseudo_ce(model: Model, features: np.ndarray, pseudo_labels: np.ndarray,
              alpha: float) -> Tensor:
    """alpha-weighted mean cross-entropy over the retained pseudo-label set."""
    if len(pseudo_labels) == 0 or alpha == 0.0:
        return Tensor(0.0)
    return cross_entropy(forward_logits(model, features), pseudo_labels) * alpha


# -- feature self-distillation ----------------------------------------------


def sum_last_n(features: np.ndarray, n: int) -> np.ndarray:
    """Sum of the last n pooled layer rows, [B, L, d] -> [B, d] (constant)."""
    if features.shape[1] < n:
        raise ValueError(f"need {n} layers, records have {features.shape[1]}")
    return features[:, -n:, :].sum(axis=1)


def sample_negatives(batch_size: int, n_neg: int, rng: Rng,
                     exclude_self: bool = False) -> NegativeSet:
    """Draw n_neg independent uniform batch shuffles (self-matches allowed).

    With exclude_self, any shuffle mapping i -> i is redrawn per column.
    """
    if batch_size < 2:
        raise ValueError("negative sampling needs batch_size >= 2")
    cols = []
    for _ in range(n_neg):
        perm = rng.permutation(batch_size)
        if exclude_self:
            while np.any(perm == np.arange(batch_size)):
                perm = rng.permutation(batch_size)
        cols.append(perm)
    return NegativeSet(indices=np.stack(cols, axis=1))


def nce_fd_loss(model: Model, target_features: np.ndarray,
                negatives: NegativeSet) -> Tensor:
    """Negated NCE lower bound between FAM outputs and summed raw features.

    Per sample: critic(z, own x_bar) minus the mean critic value over the
    shuffled negatives; the loss is -mean over the batch, bounded in [-2, 2].
    """
    cfg = model.config
    z = fam_forward(model, target_features).z
    u = dense_tanh(z, model.inf_w, model.inf_b)          # resize out -> in dim
    x_bar = sum_last_n(target_features, cfg.n_layers_used)
    pos = cosine_rows(u, x_bar)                          # [B]
    neg_sum = None
    for k in range(negatives.indices.shape[1]):
        term = cosine_rows(u, x_bar[negatives.indices[:, k]])
        neg_sum = term if neg_sum is None else neg_sum + term
    j = pos - neg_sum * (1.0 / negatives.indices.shape[1])
    return -j.mean()


# -- class information --------------------------------------------------------


def class_centers(model: Model, features: np.ndarray, labels: np.ndarray,
                  n_classes: int, epoch: int) -> ClassCenters:
    """Per-class mean of FAM outputs, computed without gradient tracking."""
    z = fam_forward(model, features).z.data
    centers = np.zeros((n_classes, z.shape[1]))
    counts = np.zeros(n_classes, dtype=np.int64)
    for c in range(n_classes):
        mask = labels == c
        counts[c] = mask.sum()
        if counts[c] > 0:
            centers[c] = z[mask].mean(axis=0)
    return ClassCenters(centers=centers, counts=counts, epoch_stamp=epoch)


class AbsentClassError(ValueError):
    pass


def intra_class_loss(model: Model, features: np.ndarray, labels: np.ndarray,
                     centers: ClassCenters) -> Tensor:
    """Sum over members of ||z_i - center(class_i)||_2; centers are constants."""
    for c in np.unique(labels):
        if not centers.present(int(c)):
            raise AbsentClassError(f"class {c} has no center this epoch")
    z = fam_forward(model, features).z
    diff = z - Tensor(centers.centers[labels])
    return l2norm_rows(diff).sum()


def cfd_loss(model: Model, target_features: np.ndarray,
             member_features: np.ndarray, member_labels: np.ndarray,
             negatives: NegativeSet, centers: ClassCenters,
             lam: float) -> LossReport:
    """Distillation on the target batch plus lam-weighted intra-class loss."""
    l_fd = nce_fd_loss(model, target_features, negatives)
    if lam != 0.0:
        l_c = intra_class_loss(model, member_features, member_labels, centers)
        total = l_fd + l_c * lam
        comps = {"L_Fd": l_fd.item(), "L_C": l_c.item()}
    else:
        total = l_fd
        comps = {"L_Fd": l_fd.item(), "L_C": 0.0}
    return LossReport(total=total, components=comps)


# -- domain-alignment baselines ------------------------------------------------


def kl_baseline(source_z: Tensor, target_z: Tensor) -> Tensor:
    """Symmetric KL between softmaxed batch-mean representations."""
    xs = softmax(source_z.mean(axis=0))
    xt = softmax(target_z.mean(axis=0))
    log_ratio = xs.log() - xt.log()
    return (xs * log_ratio).sum() + (xt * (-log_ratio)).sum()


def _pairwise_sqdist(a: Tensor, b: Tensor) -> Tensor:
    sq_a = (a * a).sum(axis=1, keepdims=True)          # [n, 1]
    sq_b = (b * b).sum(axis=1, keepdims=True)          # [m, 1]
    bt = Tensor(b.data.T, (b,))
    bt._backward = lambda g: b._accumulate(g.T)
    sq_bt = Tensor(sq_b.data.T, (sq_b,))
    sq_bt._backward = lambda g: sq_b._accumulate(g.T)
    return sq_a + sq_bt - a.matmul(bt) * 2.0


def _median_of(tensors: list[Tensor]) -> Tensor:
    """Median of all entries as an order-statistic selection.

    Selecting the middle element(s) keeps the median differentiable almost
    everywhere, so finite-difference checks agree with the backward pass.
    """
    flat = np.concatenate([t.data.ravel() for t in tensors])
    order = np.argsort(flat, kind="stable")
    n = flat.size
    mids = [order[n // 2]] if n % 2 else [order[n // 2 - 1], order[n // 2]]
    value = float(np.mean(flat[mids]))
    sizes = [t.data.size for t in tensors]
    starts = np.cumsum([0] + sizes)
    out = Tensor(value, tuple(tensors))

    def back(g):
        share = g / len(mids)
        for flat_idx in mids:
            which = int(np.searchsorted(starts, flat_idx, side="right") - 1)
            t = tensors[which]
            acc = np.zeros_like(t.data)
            acc.reshape(-1)[flat_idx - starts[which]] = share
            t._accumulate(acc)

    out._backward = back
    return out


def mmd_baseline(source_z: Tensor, target_z: Tensor) -> Tensor:
    """Biased multi-kernel Gaussian MMD^2 estimate (always >= 0).

    Five bandwidths on a geometric ladder around the median pairwise
    squared distance, recomputed per batch.
    """
    if source_z.data.shape[0] < 2 or target_z.data.shape[0] < 2:
        raise ValueError("mmd_baseline needs batches of size >= 2")
    d_ss = _pairwise_sqdist(source_z, source_z)
    d_tt = _pairwise_sqdist(target_z, target_z)
    d_st = _pairwise_sqdist(source_z, target_z)
    med = _median_of([d_ss, d_tt, d_st])
    if med.data < 1e-12:  # identical batches: loss is exactly 0 anyway
        med = Tensor(1.0)
    total = None
    for s in MMD_BANDWIDTH_SCALES:
        inv_bw = (med * (2.0 * s)).powi(-1.0)
        k = ((d_ss * -1.0 * inv_bw).exp().mean()
             + (d_tt * -1.0 * inv_bw).exp().mean()
             - (d_st * -1.0 * inv_bw).exp().mean() * 2.0)
        total = k if total is None else total + k
    return total


class SingleDomainBatchError(ValueError):
    pass


def adv_baseline(model: Model, mixed_z: Tensor, domain_labels: np.ndarray,
                 reversal_weight: float) -> Tensor:
    """Domain-classifier cross-entropy with gradient reversal into z.

    The domain head receives the plain gradient; the gradient flowing back
    into the features is multiplied by -reversal_weight.
    """
    if len(np.unique(domain_labels)) < 2:
        raise SingleDomainBatchError("adv baseline needs both domains in batch")
    logits = affine(grad_reverse(mixed_z, reversal_weight), model.dom_w,
                    model.dom_b)
    return cross_entropy(logits, domain_labels)
