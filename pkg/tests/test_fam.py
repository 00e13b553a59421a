"""Feature adaptation module tests: attention weight properties, the
temperature-sharpening contract, ablation modes, and gradient integrity of
the composed forward pass.
"""

import numpy as np
import pytest

from featadapt.diff_core import Rng, Tensor, cross_entropy, grad_check
from featadapt.fam import (
    FamConfig,
    Model,
    attend,
    fam_forward,
    forward_logits,
    project_layers,
    raw_attention_weights,
    select_layers,
)

CFG = FamConfig(n_layers_used=3, in_dim=5, out_dim=4, tau=0.3)


def _model(seed=0, cfg=CFG, n_classes=3):
    return Model.init(cfg, n_classes, Rng(seed))


def test_config_validation():
    with pytest.raises(ValueError):
        FamConfig(n_layers_used=0)
    with pytest.raises(ValueError):
        FamConfig(tau=0.0)
    with pytest.raises(ValueError):
        FamConfig(attention_mode="nope")


def test_alphas_are_distributions():
    model = _model()
    for seed in range(10):
        feats = Rng(seed).normal((6, 3, 5)) * 3.0
        out = fam_forward(model, feats)
        assert np.all(out.alphas > 0)
        np.testing.assert_allclose(out.alphas.sum(axis=1), 1.0, atol=1e-10)


def test_identical_layers_give_uniform_alphas():
    model = _model()
    row = Rng(1).normal((4, 1, 5))
    feats = np.repeat(row, 3, axis=1)  # all layers identical per record
    for tau in (0.1, 0.3, 1.0, 5.0):
        z_layers = project_layers(model, feats)
        out = attend(model, z_layers, tau=tau)
        np.testing.assert_allclose(out.alphas, 1.0 / 3.0, atol=1e-12)
        # z equals the shared projected row
        np.testing.assert_allclose(out.z.data, z_layers.data[:, 0, :],
                                   atol=1e-12)


def test_tau_one_matches_unsharpened_weights():
    model = _model()
    feats = Rng(2).normal((5, 3, 5))
    z_layers = project_layers(model, feats)
    out = attend(model, z_layers, tau=1.0)
    raw = raw_attention_weights(model, z_layers.data)
    np.testing.assert_allclose(out.alphas, raw, atol=1e-12)


def test_sharpening_preserves_ordering_on_1000_inputs():
    model = _model()
    rng = Rng(3)
    for _ in range(1000):
        z_layers_data = rng.normal((1, 3, 4))
        raw = raw_attention_weights(model, z_layers_data)[0]
        out = attend(model, Tensor(z_layers_data), tau=0.3)
        sharp = out.alphas[0]
        assert np.array_equal(np.argsort(raw, kind="stable"),
                              np.argsort(sharp, kind="stable"))


def test_small_tau_concentrates_on_argmax():
    model = _model()
    feats = Rng(4).normal((8, 3, 5)) * 2.0
    z_layers = project_layers(model, feats)
    raw = raw_attention_weights(model, z_layers.data)
    out = attend(model, z_layers, tau=1e-3)
    assert np.array_equal(out.alphas.argmax(axis=1), raw.argmax(axis=1))
    assert np.all(out.alphas.max(axis=1) > 0.999)


def test_ave_mode_is_plain_mean():
    cfg = FamConfig(n_layers_used=3, in_dim=5, out_dim=4, tau=0.3,
                    attention_mode="ave")
    model = _model(cfg=cfg)
    feats = Rng(5).normal((4, 3, 5))
    out = fam_forward(model, feats)
    z_layers = project_layers(model, feats)
    np.testing.assert_allclose(out.z.data, z_layers.data.mean(axis=1),
                               atol=1e-12)
    np.testing.assert_allclose(out.alphas, 1.0 / 3.0)


def test_one_layer_mode_uses_last_layer_only():
    cfg = FamConfig(n_layers_used=3, in_dim=5, out_dim=4, tau=0.3,
                    attention_mode="one_layer")
    model = _model(cfg=cfg)
    feats = Rng(6).normal((4, 3, 5))
    out = fam_forward(model, feats)
    np.testing.assert_allclose(out.alphas, 1.0)
    last_only = project_layers(model, feats[:, -1:, :])
    np.testing.assert_allclose(out.z.data, last_only.data[:, 0, :], atol=1e-12)


def test_projection_output_in_tanh_range_and_zero_weights_zero():
    model = _model()
    feats = Rng(7).normal((4, 3, 5)) * 10.0
    z = project_layers(model, feats)
    assert np.all(np.abs(z.data) <= 1.0)
    for p in model.proj_w + model.proj_b:
        p.data[:] = 0.0
    np.testing.assert_allclose(project_layers(model, feats).data, 0.0)


def test_per_layer_projection_flag():
    cfg = FamConfig(n_layers_used=3, in_dim=5, out_dim=4, tau=0.3,
                    per_layer_projection=True)
    model = _model(cfg=cfg)
    assert len(model.proj_w) == 3
    feats = Rng(8).normal((2, 3, 5))
    out = fam_forward(model, feats)
    assert out.z.data.shape == (2, 4)
    # layers now project differently even on identical inputs
    same = np.repeat(Rng(9).normal((2, 1, 5)), 3, axis=1)
    z_layers = project_layers(model, same)
    assert not np.allclose(z_layers.data[:, 0, :], z_layers.data[:, 1, :])


def test_forward_is_deterministic():
    model = _model()
    feats = Rng(10).normal((2, 3, 5))
    a = fam_forward(model, feats)
    b = fam_forward(model, feats)
    np.testing.assert_array_equal(a.z.data, b.z.data)
    np.testing.assert_array_equal(a.alphas, b.alphas)


def test_select_layers_takes_uppermost_and_validates():
    feats = np.arange(2 * 4 * 3, dtype=np.float64).reshape(2, 4, 3)
    np.testing.assert_array_equal(select_layers(feats, 2), feats[:, -2:, :])
    with pytest.raises(ValueError):
        select_layers(feats, 5)


def test_input_dim_mismatch_rejected():
    model = _model()
    with pytest.raises(ValueError):
        fam_forward(model, np.zeros((2, 3, 7)))


def test_composed_forward_gradient_check():
    model = _model(seed=1)
    feats = Rng(11).normal((5, 3, 5))
    labels = np.array([0, 1, 2, 0, 1])
    report = grad_check(
        lambda: cross_entropy(forward_logits(model, feats), labels),
        model.parameters(("fam", "cls")), tolerance=1e-5,
    )
    assert report.passed, [(e.name, e.max_rel_error) for e in report.entries]
