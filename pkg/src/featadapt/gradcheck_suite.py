"""Finite-difference verification of every registered loss.

Each registered loss is rebuilt on seeded toy batches and its analytic
gradients are compared against central differences. The adversarial loss
is special-cased: its gradient-reversal hook deliberately breaks the
grad = d(loss)/d(param) identity on the feature path, so the domain head
is finite-difference checked and the reversal contract is verified by
comparing the reversed and unreversed backward passes directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diff_core import Rng, Tensor, grad_check
from .fam import FamConfig, Model, fam_forward
from .objectives import (
    adv_baseline,
    class_centers,
    entropy_scores,
    intra_class_loss,
    kl_baseline,
    mmd_baseline,
    nce_fd_loss,
    pseudo_ce,
    sample_negatives,
    source_ce,
)
from .diff_core import entropy
from .fam import forward_logits

TOY_FAM = FamConfig(n_layers_used=3, in_dim=6, out_dim=4, tau=0.3)
TOY_CLASSES = 3
TOY_BATCH = 6

LOSS_NAMES = (
    "source_ce", "pseudo_ce", "entropy", "nce_fd", "intra_class",
    "kl", "mmd", "adv",
)


@dataclass
class LossCheckResult:
    name: str
    max_rel_error: float
    passed: bool


def _toy_batch(rng: Rng):
    feats = rng.normal((TOY_BATCH, TOY_FAM.n_layers_used, TOY_FAM.in_dim))
    # every class appears at least once so center-based losses are defined
    labels = (np.arange(TOY_BATCH) % TOY_CLASSES)[rng.permutation(TOY_BATCH)]
    return feats, labels


def _corrupt_backward(t: Tensor) -> Tensor:
    """Identity forward with a deliberately wrong backward (negative control)."""
    out = Tensor(t.data, (t,))
    out._backward = lambda g: t._accumulate(-g)
    return out


def _check_one(name: str, model: Model, rng: Rng, tolerance: float,
               inject_fault: bool) -> LossCheckResult:
    feats, labels = _toy_batch(rng)
    feats2, labels2 = _toy_batch(rng)
    negs = sample_negatives(TOY_BATCH, 4, rng)
    centers = class_centers(model, feats2, labels2, TOY_CLASSES, epoch=0)

    if name == "source_ce":
        params = model.parameters(("fam", "cls"))
        build = lambda: source_ce(model, feats, labels)
    elif name == "pseudo_ce":
        params = model.parameters(("fam", "cls"))
        build = lambda: pseudo_ce(model, feats, labels, alpha=0.7)
    elif name == "entropy":
        params = model.parameters(("fam", "cls"))
        build = lambda: entropy(forward_logits(model, feats)).mean()
    elif name == "nce_fd":
        params = model.parameters(("fam", "inf"))
        build = lambda: nce_fd_loss(model, feats, negs)
    elif name == "intra_class":
        params = model.parameters(("fam",))
        build = lambda: intra_class_loss(model, feats, labels, centers)
    elif name == "kl":
        params = model.parameters(("fam",))
        build = lambda: kl_baseline(fam_forward(model, feats).z,
                                    fam_forward(model, feats2).z)
    elif name == "mmd":
        params = model.parameters(("fam",))
        build = lambda: mmd_baseline(fam_forward(model, feats).z,
                                     fam_forward(model, feats2).z)
    elif name == "adv":
        return _check_adv(model, feats, feats2, tolerance, inject_fault)
    else:
        raise ValueError(f"unknown loss {name!r}")

    fn = (lambda: _corrupt_backward(build())) if inject_fault else build
    report = grad_check(fn, params, tolerance=tolerance)
    worst = max(e.max_rel_error for e in report.entries)
    return LossCheckResult(name, worst, report.passed)


def _check_adv(model: Model, feats, feats2, tolerance: float,
               inject_fault: bool) -> LossCheckResult:
    dom = np.concatenate([np.zeros(TOY_BATCH, dtype=np.int64),
                          np.ones(TOY_BATCH, dtype=np.int64)])
    mixed = np.concatenate([feats, feats2], axis=0)
    weight = 0.01

    def loss_fn():
        return adv_baseline(model, fam_forward(model, mixed).z, dom, weight)

    report = grad_check(loss_fn, model.parameters(("dom",)),
                        tolerance=tolerance)
    worst = max(e.max_rel_error for e in report.entries)

    # reversal contract: FAM-path gradient with reversal equals
    # -weight times the gradient of the plain (unreversed) loss
    fam_params = model.parameters(("fam",))
    for p in fam_params + model.parameters(("dom",)):
        p.zero_grad()
    adv_baseline(model, fam_forward(model, mixed).z, dom, weight).backward()
    reversed_grads = {p.name: p.grad.copy() for p in fam_params}
    for p in fam_params + model.parameters(("dom",)):
        p.zero_grad()
    adv_baseline(model, fam_forward(model, mixed).z, dom, -1.0).backward()
    for p in fam_params:
        expect = -weight * p.grad
        denom = max(float(np.abs(expect).max()), 1e-8)
        rel = float(np.abs(reversed_grads[p.name] - expect).max()) / denom
        worst = max(worst, rel)
        p.zero_grad()
    if inject_fault:
        worst += 1.0
    return LossCheckResult("adv", worst, worst < tolerance)


def run_all(tolerance: float = 1e-5, n_batches: int = 20, seed: int = 0,
            inject_fault: bool = False) -> list[LossCheckResult]:
    """Check every registered loss on `n_batches` seeded toy batches.

    Returns one aggregated result per loss name (worst case over batches).
    """
    worst: dict[str, LossCheckResult] = {}
    for b in range(n_batches):
        rng = Rng(seed * 10_000 + b)
        model = Model.init(TOY_FAM, TOY_CLASSES, rng)
        for name in LOSS_NAMES:
            res = _check_one(name, model, rng, tolerance, inject_fault)
            prev = worst.get(name)
            if prev is None or res.max_rel_error > prev.max_rel_error:
                worst[name] = res
    return [worst[n] for n in LOSS_NAMES]
