import json

import numpy as np
import pytest

from agents.neural_core import (
    MLParams,
    adam_init,
    adam_step,
    clip_grad_norm,
    clip_joint_grad_norm,
    entropy,
    entropy_logit_grad,
    forward,
    global_norm,
    gradient,
    init_mlp,
    params_from_dict,
    params_to_dict,
    softmax,
)
from services.errors import ConfigurationError, ContractViolation


def _numeric_derivative(params, x, coeffs, layer, kind, index, eps=1e-6):
    def loss(p):
        return float(np.sum(coeffs * forward(p, x)))

    plus, minus = params.copy(), params.copy()
    target_plus = plus.weights[layer] if kind == "w" else plus.biases[layer]
    target_minus = minus.weights[layer] if kind == "w" else minus.biases[layer]
    target_plus[index] += eps
    target_minus[index] -= eps
    return (loss(plus) - loss(minus)) / (2 * eps)


@pytest.mark.parametrize("activation,sizes", [
    ("tanh", [4, 64, 64, 2]),
    ("relu", [6, 64, 64, 2]),
    ("tanh", [4, 64, 64, 1]),
])
def test_gradient_matches_finite_differences(activation, sizes):
    """Analytic gradients agree with central differences at 100 random points"""
    rng = np.random.default_rng(0)
    params = init_mlp(sizes, activation, rng)
    x = rng.normal(size=(5, sizes[0]))
    coeffs = rng.normal(size=(5, sizes[-1]))
    grads = gradient(params, x, coeffs)

    for _ in range(100):
        layer = int(rng.integers(len(params.weights)))
        if rng.random() < 0.7:
            index = tuple(int(rng.integers(n)) for n in params.weights[layer].shape)
            analytic = grads.weights[layer][index]
            numeric = _numeric_derivative(params, x, coeffs, layer, "w", index)
        else:
            index = (int(rng.integers(params.biases[layer].shape[0])),)
            analytic = grads.biases[layer][index]
            numeric = _numeric_derivative(params, x, coeffs, layer, "b", index)
        assert analytic == pytest.approx(numeric, rel=1e-4, abs=1e-7)


def test_forward_accepts_vector_and_batch():
    """A single observation gives the first row of the batched output"""
    rng = np.random.default_rng(1)
    params = init_mlp([4, 8, 2], "tanh", rng)
    batch = rng.normal(size=(3, 4))
    np.testing.assert_allclose(forward(params, batch[0]), forward(params, batch)[0], rtol=0, atol=1e-15)


def test_forward_rejects_wrong_input_width():
    params = init_mlp([4, 8, 2], "tanh", np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        forward(params, np.zeros(5))


def test_mismatched_layers_are_rejected():
    with pytest.raises(ConfigurationError):
        MLParams([np.zeros((3, 4)), np.zeros((2, 5))], [np.zeros(3), np.zeros(2)], ["tanh", "identity"])
    with pytest.raises(ConfigurationError):
        MLParams([np.zeros((3, 4))], [np.zeros(3)], ["sigmoid"])


def test_adam_first_step_moves_by_learning_rate():
    """With bias correction the first update is lr * sign(g)"""
    params = MLParams([np.array([[1.0, -2.0]])], [np.array([0.5])], ["identity"])
    grads = MLParams([np.array([[3.0, -0.5]])], [np.array([0.0])], ["identity"])
    new_params, state = adam_step(params, grads, adam_init(params, learning_rate=0.1))
    np.testing.assert_allclose(new_params.weights[0], [[0.9, -1.9]], atol=1e-6)
    assert new_params.biases[0][0] == 0.5
    assert state.timestep == 1


def test_adam_step_is_pure():
    """The input parameters and state are left untouched"""
    params = init_mlp([2, 3, 1], "tanh", np.random.default_rng(2))
    before = params.copy()
    state = adam_init(params, 1e-3)
    adam_step(params, params.copy(), state)
    for a, b in zip(params.arrays(), before.arrays()):
        np.testing.assert_array_equal(a, b)
    assert state.timestep == 0


def test_adam_minimizes_a_quadratic():
    """Repeated steps drive a parameter to the minimum of (p - 3)^2"""
    params = MLParams([np.zeros((1, 1))], [np.zeros(1)], ["identity"])
    state = adam_init(params, 0.1)
    for _ in range(500):
        g = MLParams([2 * (params.weights[0] - 3.0)], [np.zeros(1)], ["identity"])
        params, state = adam_step(params, g, state)
    assert params.weights[0][0, 0] == pytest.approx(3.0, abs=5e-2)


def test_clip_grad_norm_scales_to_limit():
    grads = MLParams([np.array([[3.0, 4.0]])], [np.array([0.0])], ["identity"])
    clipped = clip_grad_norm(grads, 1.0)
    assert global_norm(clipped) == pytest.approx(1.0)
    np.testing.assert_allclose(clipped.weights[0], [[0.6, 0.8]])
    assert clip_grad_norm(grads, 10.0) is grads


def test_entropy_gradient_matches_finite_differences():
    logits = np.array([[0.3, -1.2], [2.0, 0.1]])
    analytic = entropy_logit_grad(logits)
    eps = 1e-6
    for i in range(2):
        for j in range(2):
            plus, minus = logits.copy(), logits.copy()
            plus[i, j] += eps
            minus[i, j] -= eps
            numeric = (entropy(plus)[i] - entropy(minus)[i]) / (2 * eps)
            assert analytic[i, j] == pytest.approx(numeric, rel=1e-5, abs=1e-9)


def test_softmax_is_a_distribution():
    probs = softmax(np.array([[1000.0, 0.0], [0.0, 0.0]]))
    np.testing.assert_allclose(probs.sum(axis=1), [1.0, 1.0])
    np.testing.assert_allclose(probs[1], [0.5, 0.5])


def test_params_survive_json_exactly():
    """Serialized parameters reload bit-for-bit"""
    params = init_mlp([4, 64, 64, 2], "relu", np.random.default_rng(3))
    restored = params_from_dict(json.loads(json.dumps(params_to_dict(params))))
    assert restored.activations == params.activations
    for a, b in zip(params.arrays(), restored.arrays()):
        np.testing.assert_array_equal(a, b)


def test_params_from_dict_checks_header():
    data = params_to_dict(init_mlp([2, 2], "tanh", np.random.default_rng(0)))
    data["layers"][0]["shape"] = [3, 2]
    with pytest.raises(ConfigurationError):
        params_from_dict(data)


def test_params_from_dict_rejects_non_finite_values():
    data = params_to_dict(init_mlp([2, 2], "tanh", np.random.default_rng(0)))
    data["layers"][0]["weights"][1] = float("nan")
    with pytest.raises(ConfigurationError):
        params_from_dict(data)


def test_adam_step_refuses_to_produce_non_finite_parameters():
    params = MLParams([np.zeros((1, 1))], [np.zeros(1)], ["identity"])
    grads = MLParams([np.array([[np.inf]])], [np.zeros(1)], ["identity"])
    with pytest.raises(ContractViolation):
        adam_step(params, grads, adam_init(params, 0.1))


def test_joint_clip_uses_one_scale_for_all_sets():
    """Combined norm 5 clipped to 1: both sets shrink by the same factor"""
    first = MLParams([np.array([[3.0]])], [np.array([0.0])], ["identity"])
    second = MLParams([np.array([[4.0]])], [np.array([0.0])], ["identity"])
    a, b = clip_joint_grad_norm([first, second], 1.0)
    np.testing.assert_allclose(a.weights[0], [[0.6]])
    np.testing.assert_allclose(b.weights[0], [[0.8]])
    unclipped = clip_joint_grad_norm([first, second], None)
    assert unclipped[0] is first and unclipped[1] is second
