"""Tests for roomrank.scorer.network: forward, backward, Huber loss, Adam."""

import math

import numpy as np
import pytest

from roomrank.features import MelSpectrogram
from roomrank.scorer.network import (
    AdamState,
    ModelError,
    ScorerArchitecture,
    accumulate,
    adam_step,
    backward,
    draw_dropout_masks,
    forward,
    huber_loss,
    init_adam_state,
    init_model,
    zero_model,
)

TINY = ScorerArchitecture(input_shape=(4, 4), conv_filters=(1,), kernel=2, stride=2,
                          dense_units=2)
SMALL = ScorerArchitecture(input_shape=(6, 6), conv_filters=(2, 2), kernel=3, stride=2,
                           dense_units=3)


def _sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


# ===========================================================================
# Architecture
# ===========================================================================

def test_default_shape_chain():
    shapes = [(oh, ow) for _, _, _, oh, ow, _ in ScorerArchitecture().conv_shapes()]
    assert shapes == [(20, 100), (4, 20), (1, 4), (1, 1), (1, 1)]
    assert ScorerArchitecture().flat_size() == 16


def test_param_shapes():
    shapes = TINY.param_shapes()
    assert shapes["conv0.w"] == (2, 2, 1, 1)
    assert shapes["dense.w"] == (4, 2)
    assert shapes["head.w"] == (2, 1)
    assert init_model(TINY).n_params == 18


def test_small_net_is_under_200_parameters():
    assert init_model(SMALL).n_params <= 200


def test_init_is_seeded_and_float32_exact():
    a = init_model(SMALL, seed=3)
    b = init_model(SMALL, seed=3)
    for name in a.params:
        np.testing.assert_array_equal(a.params[name], b.params[name])
        np.testing.assert_array_equal(
            a.params[name], a.params[name].astype(np.float32).astype(np.float64))
    assert np.all(a.params["conv0.b"] == 0.0)


# ===========================================================================
# forward
# ===========================================================================

def test_zero_network_scores_half():
    model = zero_model()
    spec = MelSpectrogram(np.random.default_rng(0).standard_normal((96, 500)))
    assert forward(model, spec) == 0.5


def test_infer_is_deterministic():
    model = init_model(seed=1)
    spec = MelSpectrogram(np.random.default_rng(1).standard_normal((96, 500)))
    assert forward(model, spec) == forward(model, spec)


def test_default_score_in_open_interval():
    model = init_model(seed=2)
    score = forward(model, np.random.default_rng(2).standard_normal((96, 500)))
    assert 0.0 < score < 1.0


def test_hand_computed_tiny_net():
    model = zero_model(TINY)
    model.params["conv0.w"] = np.full((2, 2, 1, 1), 0.25)
    model.params["conv0.b"] = np.array([-0.1])
    model.params["dense.w"] = np.array([[1.0, -1.0], [0.5, 0.0], [0.0, 0.5], [-0.5, 1.0]])
    model.params["dense.b"] = np.array([0.0, 0.1])
    model.params["head.w"] = np.array([[2.0], [1.5]])
    model.params["head.b"] = np.array([-1.0])
    x = np.arange(16, dtype=np.float64).reshape(4, 4) / 16.0
    # block means 0.15625, 0.28125, 0.65625, 0.78125 minus 0.1;
    # dense unit 0 is negative, unit 1 = 1.003125; logit = 1.5 * 1.003125 - 1
    assert forward(model, x) == pytest.approx(_sigmoid(0.5046875), abs=1e-6)


def test_saturated_logits_stay_inside_unit_interval():
    model = zero_model(TINY)
    x = np.ones((4, 4))
    model.params["head.b"] = np.array([1000.0])
    assert forward(model, x) < 1.0
    model.params["head.b"] = np.array([-1000.0])
    assert forward(model, x) > 0.0


def test_shape_mismatch():
    with pytest.raises(ModelError):
        forward(zero_model(), np.zeros((96, 499)))


def test_train_mode_needs_rng():
    with pytest.raises(ModelError):
        forward(zero_model(TINY), np.zeros((4, 4)), mode="train")


def test_unknown_mode():
    with pytest.raises(ModelError):
        forward(zero_model(TINY), np.zeros((4, 4)), mode="eval")


def test_train_mode_is_seeded():
    model = init_model(SMALL, seed=4)
    x = np.random.default_rng(4).standard_normal((6, 6))
    a = forward(model, x, mode="train", rng=np.random.default_rng(9))
    b = forward(model, x, mode="train", rng=np.random.default_rng(9))
    assert a == b


def test_dropout_masks_are_inverted():
    masks = draw_dropout_masks(init_model(SMALL), np.random.default_rng(0))
    assert len(masks) == 3
    assert masks[0].shape == (3, 3, 2)
    assert masks[-1].shape == (3,)
    for mask in masks:
        assert set(np.unique(mask)).issubset({0.0, 2.0})


# ===========================================================================
# huber_loss
# ===========================================================================

@pytest.mark.parametrize("pred,target,loss,grad", [
    (0.3, 0.3, 0.0, 0.0),
    (0.5, 0.0, 0.125, 0.5),
    (2.0, 0.0, 1.5, 1.0),
    (-2.0, 0.0, 1.5, -1.0),
])
def test_huber_branches(pred, target, loss, grad):
    value, derivative = huber_loss(pred, target)
    assert value == pytest.approx(loss)
    assert derivative == pytest.approx(grad)


def test_huber_rejects_nonpositive_delta():
    with pytest.raises(ValueError):
        huber_loss(0.0, 1.0, delta=0.0)


# ===========================================================================
# backward
# ===========================================================================

def _randomized(arch, seed):
    model = init_model(arch, seed=seed)
    rng = np.random.default_rng(seed + 100)
    for name in model.params:
        if name.endswith(".b"):
            model.params[name] = rng.uniform(-0.2, 0.2, size=model.params[name].shape)
    return model


def _loss(model, x, target, masks):
    mode = "train" if masks is not None else "infer"
    return huber_loss(forward(model, x, mode=mode, masks=masks), target)[0]


def _finite_difference_errors(model, x, target, masks, checks=20, eps=1e-3, seed=0):
    result = backward(model, x, target, mode="train" if masks is not None else "infer",
                      masks=masks)
    rng = np.random.default_rng(seed)
    names = list(model.params)
    errors = []
    for _ in range(checks):
        name = names[rng.integers(len(names))]
        idx = tuple(rng.integers(s) for s in model.params[name].shape)
        original = model.params[name][idx]
        model.params[name][idx] = original + eps
        plus = _loss(model, x, target, masks)
        model.params[name][idx] = original - eps
        minus = _loss(model, x, target, masks)
        model.params[name][idx] = original
        numeric = (plus - minus) / (2 * eps)
        analytic = result.grads[name][idx]
        errors.append(abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-3))
    return errors


def test_gradients_match_finite_differences_infer():
    model = _randomized(SMALL, seed=5)
    x = np.random.default_rng(6).uniform(0.5, 1.5, size=(6, 6))
    assert max(_finite_difference_errors(model, x, 0.9, masks=None)) < 1e-3


def test_gradients_match_finite_differences_with_dropout():
    model = _randomized(SMALL, seed=7)
    x = np.random.default_rng(8).uniform(0.5, 1.5, size=(6, 6))
    masks = draw_dropout_masks(model, np.random.default_rng(9))
    assert max(_finite_difference_errors(model, x, 0.1, masks=masks, seed=1)) < 1e-3


def test_backward_loss_and_score_match_forward():
    model = _randomized(SMALL, seed=11)
    x = np.random.default_rng(12).standard_normal((6, 6))
    result = backward(model, x, 0.7, mode="infer")
    score = forward(model, x)
    assert result.score == score
    assert result.loss == huber_loss(score, 0.7)[0]
    assert list(result.grads) == list(model.params)


def test_dead_network_has_zero_conv_gradients():
    model = zero_model()
    result = backward(model, np.zeros((96, 500)), 1.0, mode="infer")
    for i in range(5):
        assert not np.any(result.grads[f"conv{i}.w"])
        assert not np.any(result.grads[f"conv{i}.b"])


def test_summed_identical_examples_double_gradients():
    model = _randomized(SMALL, seed=13)
    x = np.random.default_rng(14).standard_normal((6, 6))
    grads = backward(model, x, 0.2, mode="infer").grads
    doubled = accumulate([grads, grads])
    for name in grads:
        np.testing.assert_array_equal(doubled[name], 2 * grads[name])


# ===========================================================================
# adam_step
# ===========================================================================

def test_adam_first_step_scalar():
    weights = {"w": np.array(0.0)}
    new, state = adam_step(weights, {"w": np.array(1.0)}, init_adam_state(weights), lr=0.1)
    assert float(new["w"]) == pytest.approx(-0.1, rel=1e-6)
    assert state.step == 1


def test_adam_zero_gradient_keeps_weights():
    weights = {"w": np.array([0.3, -0.2])}
    new, _ = adam_step(weights, {"w": np.zeros(2)}, init_adam_state(weights), lr=0.1)
    np.testing.assert_array_equal(new["w"], weights["w"])


def test_adam_elementwise_independence():
    weights = {"a": np.array([0.5]), "b": np.array([0.5])}
    grads = {"a": np.array([0.3]), "b": np.array([0.3])}
    new, _ = adam_step(weights, grads, init_adam_state(weights), lr=0.01)
    assert new["a"][0] == new["b"][0]


def test_adam_does_not_mutate_inputs():
    weights = {"w": np.array([1.0, 2.0])}
    state = AdamState(m={"w": np.zeros(2)}, v={"w": np.zeros(2)}, step=0)
    adam_step(weights, {"w": np.array([1.0, 1.0])}, state, lr=0.1)
    np.testing.assert_array_equal(weights["w"], [1.0, 2.0])
    assert state.step == 0
    assert not np.any(state.m["w"])
