import math

import numpy as np
import pytest

from tresdiag.datagen import BreakSpec, TransientCase
from tresdiag.errors import DatasetLoadError, NumericError, UnsupportedArchitectureError, ValidationError
from tresdiag.interpret import (InterpretConfig, LimeExplanation, SaliencyMap, explain_case, explain_cases,
                                grad_campp, grad_campp_batch, gradcampp_map, gradcampp_weights,
                                lime_broadcast, lime_explain, load_attribution, max_normalize,
                                resize_bilinear, sample_masks, save_attribution, weighted_ridge)
from tresdiag.model import ArchConfig, build_model
from tresdiag.numerics import Rng

from helpers import cases_for, rigged_model


def two_channel_case(n_times=10):
    return TransientCase(np.ones((2, n_times)), BreakSpec("cold_leg", 0.5), 0, 0, ("a", "b"))


def linear_black_box(values):
    """Probability linear in the channel means: 0.5 + 0.3 m1 - 0.2 m2."""
    s = 0.5 + 0.3 * values[:, 0].mean(axis=1) - 0.2 * values[:, 1].mean(axis=1)
    return np.stack([s, 1.0 - s], axis=1)


def assert_valid_map(values):
    assert np.all(np.isfinite(values)) and values.min() >= 0
    assert values.max() in (0.0, 1.0)


# --- helpers ------------------------------------------------------------------------

def test_resize_identity_and_constant():
    a = np.arange(12.0).reshape(3, 4)
    np.testing.assert_array_equal(resize_bilinear(a, (3, 4)), a)
    np.testing.assert_allclose(resize_bilinear(np.full((2, 5), 3.0), (2, 20)), 3.0)


def test_resize_interpolates_linearly():
    out = resize_bilinear(np.array([[0.0, 1.0]]), (1, 4))
    np.testing.assert_allclose(out, [[0.0, 0.25, 0.75, 1.0]])


def test_max_normalize():
    np.testing.assert_array_equal(max_normalize(np.zeros((2, 2))), 0.0)
    assert max_normalize(np.array([1.0, 4.0])).tolist() == [0.25, 1.0]


def test_gradcampp_weights_formula():
    acts = np.array([[[1.0, 2.0], [0.0, 1.0]]])
    grads = np.array([[[0.5, -1.0], [0.0, 2.0]]])
    total = acts.sum()
    expected = 0.0
    for g in grads.ravel():
        denom = 2 * g ** 2 + total * g ** 3
        alpha = g ** 2 / denom if denom != 0 else 0.0
        expected += alpha * max(g, 0.0)
    np.testing.assert_allclose(gradcampp_weights(acts, grads), [expected], rtol=1e-14)


def test_zero_activations_give_zero_map():
    out = gradcampp_map(np.zeros((2, 3, 4)), np.ones((2, 3, 4)), (3, 8))
    assert out.shape == (3, 8) and not out.any()


# --- Grad-CAM++ on models ---------------------------------------------------------------

def test_rigged_channel_holds_the_maximum():
    m = rigged_model(k=2)
    for case in cases_for(m, 5):
        smap = grad_campp(m, case)
        assert_valid_map(smap.values)
        assert np.unravel_index(np.argmax(smap.values), smap.values.shape)[0] == 2
        assert smap.values.sum(axis=1).argmax() == 2


def test_dead_size_path_gives_zero_map():
    m = rigged_model(k=2)
    # negative inputs everywhere: every relu in the pass-through trunk outputs zero
    case = TransientCase(-np.ones((6, 20)), BreakSpec("cold_leg", 0.5), 0, 0, m.channels)
    assert not grad_campp(m, case).values.any()


def test_argmax_invariant_to_head_scale(tiny_model):
    case = cases_for(tiny_model, 1, seed=3)[0]
    a = grad_campp(tiny_model, case).values
    scaled = tiny_model.copy()
    scaled.weights["head_size.w"] = scaled.weights["head_size.w"] * 3.7
    b = grad_campp(scaled, case).values
    assert np.argmax(a) == np.argmax(b)


def test_dead_channel_nullity(tiny_model):
    """Parameter k's input is scaled to exactly zero before the first convolution."""
    k = 4
    m = tiny_model.copy()
    m.norm_std = m.norm_std.copy()
    m.norm_std[k] = np.inf
    m.arch.positional_encoding = False
    maps = [grad_campp(m, c).values for c in cases_for(m, 10, seed=1)]
    mean_map = np.mean(maps, axis=0)
    assert mean_map[k].mean() <= 0.05 * mean_map.mean()


def test_batched_equals_single(tiny_model):
    cases = cases_for(tiny_model, 4, seed=2)
    batch = grad_campp_batch(tiny_model, cases, batch_size=3)
    for c, smap in zip(cases, batch):
        np.testing.assert_allclose(grad_campp(tiny_model, c).values, smap.values, rtol=1e-12, atol=1e-15)
        assert_valid_map(smap.values)


def test_gradcam_errors(tiny_model):
    mlp = build_model(ArchConfig(kind="mlp_baseline", n_params=6, n_times=20, dense_width=3), Rng(0),
                      tiny_model.channels)
    case = cases_for(tiny_model, 1)[0]
    with pytest.raises(UnsupportedArchitectureError):
        grad_campp(mlp, case)
    with pytest.raises(ValidationError):
        grad_campp(tiny_model, case, target="location")


# --- LIME -----------------------------------------------------------------------------

def test_lime_recovers_linear_black_box():
    lime = lime_explain(linear_black_box, two_channel_case(), n_perturb=500, rng=Rng(0))
    assert lime.r2 >= 0.99
    assert abs(lime.weights[0] / lime.weights[1] - (-1.5)) <= 0.1 * 1.5
    assert lime.target_class == 0


def test_lime_constant_black_box():
    lime = lime_explain(lambda v: np.tile([0.3, 0.7], (len(v), 1)), two_channel_case(), rng=Rng(1))
    assert np.all(np.abs(lime.weights) < 1e-6)
    assert lime.target_class == 1


def test_lime_sampling_stability(tiny_model):
    case = cases_for(tiny_model, 1, seed=5)[0]
    a = lime_explain(tiny_model, case, n_perturb=2000, rng=Rng(3))
    b = lime_explain(tiny_model, case, n_perturb=4000, rng=Rng(3))
    assert np.max(np.abs(a.weights - b.weights)) < 0.05 * np.max(np.abs(b.weights))


def test_lime_is_seeded(tiny_model):
    case = cases_for(tiny_model, 1)[0]
    a = lime_explain(tiny_model, case, n_perturb=100, rng=Rng(3))
    b = lime_explain(tiny_model, case, n_perturb=100, rng=Rng(3))
    assert a.weights.tobytes() == b.weights.tobytes()


def test_lime_requires_enough_samples():
    with pytest.raises(ValidationError):
        lime_explain(linear_black_box, two_channel_case(), n_perturb=3)


def test_masks_keep_first_row():
    z = sample_masks(50, 7, Rng(0))
    assert z.shape == (50, 7) and np.all(z[0] == 1) and set(np.unique(z)) <= {0.0, 1.0}


def test_weighted_ridge_exact_fit():
    rng = np.random.default_rng(0)
    z = rng.integers(0, 2, (40, 3)).astype(float)
    y = z @ [1.0, -2.0, 0.5] + 0.25
    coef, b, r2 = weighted_ridge(z, y, rng.uniform(0.1, 1, 40), 0.0)
    np.testing.assert_allclose(coef, [1.0, -2.0, 0.5], atol=1e-10)
    assert b == pytest.approx(0.25) and r2 == pytest.approx(1.0)


def test_degenerate_masks_raise(monkeypatch):
    import tresdiag.interpret as mod
    monkeypatch.setattr(mod, "sample_masks", lambda n, p, rng: np.ones((n, p)))
    with pytest.raises(NumericError):
        lime_explain(linear_black_box, two_channel_case(), n_perturb=10)


# --- explain_case -------------------------------------------------------------------------

def test_rigged_model_ranks_channel_first_in_both():
    m = rigged_model(k=3)
    case = cases_for(m, 1, seed=7)[0]
    smap, lime = explain_case(m, case, InterpretConfig(n_perturb=100), Rng(0))
    assert smap.case_id == lime.case_id == case.case_id
    assert np.argmax(smap.values.sum(axis=1)) == 3
    assert np.argmax(np.abs(lime.weights)) == 3


def test_attribution_depends_on_input(tiny_model):
    a, b = cases_for(tiny_model, 2, seed=8)
    sa, la = explain_case(tiny_model, a, InterpretConfig(n_perturb=100), Rng(0))
    sb, lb = explain_case(tiny_model, b, InterpretConfig(n_perturb=100), Rng(0))
    assert not np.allclose(sa.values, sb.values)
    assert not np.allclose(la.weights, lb.weights)


def test_explain_cases_matches_explain_case(tiny_model):
    cases = cases_for(tiny_model, 3, seed=9)
    cfg = InterpretConfig(n_perturb=60)
    many = explain_cases(tiny_model, cases, cfg, Rng(4))
    for c, (smap, lime) in zip(cases, many):
        s1, l1 = explain_case(tiny_model, c, cfg, Rng(4).child(c.case_id))
        np.testing.assert_allclose(s1.values, smap.values, rtol=1e-12, atol=1e-15)
        assert l1.weights.tobytes() == lime.weights.tobytes()


def test_lime_broadcast():
    lime = LimeExplanation(0, np.array([0.5, -1.0, 0.0]), 0.0, 1.0, 10)
    smap = lime_broadcast(lime, 4)
    assert smap.source == "lime_broadcast" and smap.values.shape == (3, 4)
    np.testing.assert_allclose(smap.values[:, 0], [0.5, 1.0, 0.0])
    assert_valid_map(smap.values)


# --- files --------------------------------------------------------------------------------

def test_attribution_round_trip(tmp_path, tiny_model):
    case = cases_for(tiny_model, 1)[0]
    smap, lime = explain_case(tiny_model, case, InterpretConfig(n_perturb=60), Rng(0))
    path = save_attribution(tmp_path, smap, lime)
    assert path.name == "attr_0000.json"
    s2, l2 = load_attribution(path)
    assert s2.values.tobytes() == smap.values.tobytes()
    assert l2.weights.tobytes() == lime.weights.tobytes()
    assert l2.channels == lime.channels and l2.r2 == lime.r2


def test_attribution_errors(tmp_path):
    smap = SaliencyMap(1, np.zeros((2, 3)), channels=("a", "b"))
    lime = LimeExplanation(2, np.zeros(2), 0.0, 1.0, 10, channels=("a", "b"))
    with pytest.raises(ValidationError):
        save_attribution(tmp_path, smap, lime)
    (tmp_path / "bad.json").write_text("[")
    with pytest.raises(DatasetLoadError):
        load_attribution(tmp_path / "bad.json")


def test_row_separable_lime_matches_full_forward(tiny_model):
    from tresdiag.interpret import _model_probs
    from tresdiag.model import rows_independent
    assert rows_independent(tiny_model.arch)
    case = cases_for(tiny_model, 1, seed=11)[0]
    fast = lime_explain(tiny_model, case, n_perturb=200, rng=Rng(2))
    slow = lime_explain(_model_probs(tiny_model, 64), case, n_perturb=200, rng=Rng(2),
                        fill=tiny_model.norm_mean)
    np.testing.assert_allclose(fast.weights, slow.weights, rtol=1e-9, atol=1e-12)
    assert fast.target_class == slow.target_class


def test_tall_kernels_use_the_full_forward():
    from tresdiag.model import BlockSpec, rows_independent
    arch = ArchConfig(n_params=6, n_times=20, dense_width=4, blocks=[BlockSpec(2, (3, 3), (1, 2))])
    assert not rows_independent(arch)
    m = build_model(arch, Rng(0))
    lime = lime_explain(m, cases_for(m, 1)[0], n_perturb=40, rng=Rng(0))
    assert np.all(np.isfinite(lime.weights))
