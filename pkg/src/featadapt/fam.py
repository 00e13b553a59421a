"""Feature adaptation module: per-layer projection + sharpened layer attention.

The FAM maps the last N pooled encoder layers through a dense+tanh
projection, scores each projected layer with a learned attention vector,
sharpens the weights with temperature tau, and returns the weighted
combination z. Since the raw weights are exp(tanh(w_att . z_i)) normalized,
sharpening by 1/tau is computed as softmax(tanh(w_att . z_i) / tau): the
normalization constant cancels, so the two-step form and this one are
identical (and gradients flow through both the scoring and the sharpening).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diff_core import (
    ParamTensor,
    Rng,
    Tensor,
    affine,
    dense_tanh,
    glorot,
    softmax,
    zeros_param,
)

ATTENTION_MODES = ("att", "ave", "one_layer")


@dataclass(frozen=True)
class FamConfig:
    n_layers_used: int = 4
    in_dim: int = 16
    out_dim: int = 16
    tau: float = 0.3
    attention_mode: str = "att"
    per_layer_projection: bool = False

    def __post_init__(self):
        if self.n_layers_used < 1:
            raise ValueError("n_layers_used must be >= 1")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.attention_mode not in ATTENTION_MODES:
            raise ValueError(f"unknown attention_mode {self.attention_mode!r}")


@dataclass
class FamOutput:
    z: Tensor            # [batch, out_dim]
    alphas: np.ndarray   # [batch, N] post-sharpening weights
    z_layers: Tensor     # [batch, N, out_dim]


@dataclass
class Model:
    """All trainable parameters: FAM, classifier, critic projector, domain head."""

    config: FamConfig
    n_classes: int
    proj_w: list[ParamTensor] = field(default_factory=list)
    proj_b: list[ParamTensor] = field(default_factory=list)
    att_w: ParamTensor | None = None
    cls_w: ParamTensor | None = None
    cls_b: ParamTensor | None = None
    inf_w: ParamTensor | None = None
    inf_b: ParamTensor | None = None
    dom_w: ParamTensor | None = None
    dom_b: ParamTensor | None = None

    @classmethod
    def init(cls, config: FamConfig, n_classes: int, rng: Rng) -> "Model":
        m = cls(config=config, n_classes=n_classes)
        n_proj = config.n_layers_used if config.per_layer_projection else 1
        for i in range(n_proj):
            m.proj_w.append(glorot(f"proj_w{i}", (config.out_dim, config.in_dim), rng))
            m.proj_b.append(zeros_param(f"proj_b{i}", (config.out_dim,)))
        m.att_w = glorot("att_w", (1, config.out_dim), rng)
        m.cls_w = glorot("cls_w", (n_classes, config.out_dim), rng)
        m.cls_b = zeros_param("cls_b", (n_classes,))
        m.inf_w = glorot("inf_w", (config.in_dim, config.out_dim), rng)
        m.inf_b = zeros_param("inf_b", (config.in_dim,))
        m.dom_w = glorot("dom_w", (2, config.out_dim), rng)
        m.dom_b = zeros_param("dom_b", (2,))
        return m

    def parameters(self, groups=("fam", "cls", "inf", "dom")) -> list[ParamTensor]:
        out: list[ParamTensor] = []
        if "fam" in groups:
            out += self.proj_w + self.proj_b + [self.att_w]
        if "cls" in groups:
            out += [self.cls_w, self.cls_b]
        if "inf" in groups:
            out += [self.inf_w, self.inf_b]
        if "dom" in groups:
            out += [self.dom_w, self.dom_b]
        return out

    def named_tensors(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.parameters()}


def _stack_layers(tensors: list[Tensor]) -> Tensor:
    out = Tensor(np.stack([t.data for t in tensors], axis=1), tuple(tensors))

    def back(g):
        for i, t in enumerate(tensors):
            t._accumulate(g[:, i, :])

    out._backward = back
    return out


def project_layers(model: Model, h_sel: np.ndarray) -> Tensor:
    """Project selected raw layers [B, N, in] -> z_layers [B, N, out]."""
    cfg = model.config
    if h_sel.shape[-1] != cfg.in_dim:
        raise ValueError(
            f"feature dim {h_sel.shape[-1]} != configured in_dim {cfg.in_dim}"
        )
    if cfg.per_layer_projection:
        cols = [
            dense_tanh(Tensor(h_sel[:, l, :]), model.proj_w[l], model.proj_b[l])
            for l in range(h_sel.shape[1])
        ]
        return _stack_layers(cols)
    return dense_tanh(Tensor(h_sel), model.proj_w[0], model.proj_b[0])


def attend(model: Model, z_layers: Tensor, tau: float | None = None) -> FamOutput:
    """Attention-weighted combination of projected layers.

    Raw weights follow exp(tanh(w_att . z_i)) normalized over layers;
    sharpening raises them to 1/tau and renormalizes.
    """
    cfg = model.config
    tau = cfg.tau if tau is None else tau
    n = z_layers.data.shape[1]
    if cfg.attention_mode == "ave":
        alphas = Tensor(np.full((z_layers.data.shape[0], n, 1), 1.0 / n))
    else:
        scores = affine(z_layers, model.att_w, Tensor(np.zeros(1))).tanh()
        alphas = softmax(scores * (1.0 / tau), axis=1)  # [B, N, 1]
    z = (alphas * z_layers).sum(axis=1)
    return FamOutput(z=z, alphas=alphas.data[..., 0].copy(), z_layers=z_layers)


def raw_attention_weights(model: Model, z_layers: np.ndarray) -> np.ndarray:
    """Unsharpened weights exp(tanh(w_att . z_i)) / sum_j (constant path)."""
    scores = np.tanh(z_layers @ model.att_w.data.T)[..., 0]
    e = np.exp(scores - scores.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def select_layers(features: np.ndarray, n: int) -> np.ndarray:
    """Keep the last (uppermost) n layers of [B, n_layers, dim]."""
    if features.shape[1] < n:
        raise ValueError(
            f"records carry {features.shape[1]} layers, need {n}"
        )
    return features[:, -n:, :]


def fam_forward(model: Model, features: np.ndarray) -> FamOutput:
    """Full FAM pass over a batch of raw per-layer features [B, L, in]."""
    cfg = model.config
    n = 1 if cfg.attention_mode == "one_layer" else cfg.n_layers_used
    h_sel = select_layers(features, n)
    z_layers = project_layers(model, h_sel)
    return attend(model, z_layers)


def classifier_logits(model: Model, z: Tensor) -> Tensor:
    return affine(z, model.cls_w, model.cls_b)


def forward_logits(model: Model, features: np.ndarray) -> Tensor:
    return classifier_logits(model, fam_forward(model, features).z)
