"""
Neural Core
Dense networks as plain numpy parameter containers: forward pass,
reverse-mode gradients, Adam and parameter serialization
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from services.errors import ConfigurationError, ContractViolation

logger = logging.getLogger(__name__)

ACTIVATIONS = ("tanh", "relu", "identity")


@dataclass
class MLParams:
    """Layer weights (out x in), biases (out) and one activation tag per layer"""
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activations: List[str]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ConfigurationError("weights, biases and activations must have one entry per layer")
        for i, (w, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            if act not in ACTIVATIONS:
                raise ConfigurationError(f"Unknown activation '{act}' on layer {i}")
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ConfigurationError(f"Layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i > 0 and self.weights[i - 1].shape[0] != w.shape[1]:
                raise ConfigurationError(
                    f"Layer {i} expects {w.shape[1]} inputs but layer {i - 1} produces {self.weights[i - 1].shape[0]}"
                )

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "MLParams":
        return MLParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
        )

    def zeros_like(self) -> "MLParams":
        return MLParams(
            [np.zeros_like(w) for w in self.weights],
            [np.zeros_like(b) for b in self.biases],
            list(self.activations),
        )

    def arrays(self) -> List[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def init_mlp(
    sizes: Sequence[int],
    hidden_activation: str,
    rng: np.random.Generator,
    output_activation: str = "identity",
    output_scale: float = 1.0,
) -> MLParams:
    """Glorot-uniform weights, zero biases; the last layer is scaled by `output_scale`"""
    weights, biases, activations = [], [], []
    n_layers = len(sizes) - 1
    for i in range(n_layers):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        if i == n_layers - 1:
            w = w * output_scale
        weights.append(w)
        biases.append(np.zeros(fan_out))
        activations.append(output_activation if i == n_layers - 1 else hidden_activation)
    return MLParams(weights, biases, activations)


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "tanh":
        return np.tanh(z)
    if activation == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_grad(z: np.ndarray, y: np.ndarray, activation: str) -> np.ndarray:
    if activation == "tanh":
        return 1.0 - y ** 2
    if activation == "relu":
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


def _as_batch(params: MLParams, inputs: np.ndarray) -> Tuple[np.ndarray, bool]:
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ConfigurationError(f"Network expects inputs of length {params.input_dim}, got shape {x.shape}")
    return x, single


def forward_with_cache(params: MLParams, inputs: np.ndarray) -> Tuple[np.ndarray, List[Tuple[np.ndarray, np.ndarray, np.ndarray]]]:
    """Forward pass on a (batch, in) matrix, keeping (input, pre-activation, output) per layer"""
    x, _ = _as_batch(params, inputs)
    cache = []
    h = x
    for w, b, act in zip(params.weights, params.biases, params.activations):
        z = h @ w.T + b
        y = _activate(z, act)
        cache.append((h, z, y))
        h = y
    return h, cache


def forward(params: MLParams, inputs: np.ndarray) -> np.ndarray:
    """Affine + activation composition; accepts a vector or a (batch, in) matrix"""
    x, single = _as_batch(params, inputs)
    out, _ = forward_with_cache(params, x)
    return out[0] if single else out


def gradient(params: MLParams, inputs: np.ndarray, loss_grad_at_output: np.ndarray) -> MLParams:
    """
    Reverse-mode gradient of a scalar loss given dL/d(output).

    For batched inputs the per-sample gradients are summed, so callers fold
    any 1/N averaging into `loss_grad_at_output`.
    """
    x, single = _as_batch(params, inputs)
    delta = np.asarray(loss_grad_at_output, dtype=np.float64)
    if single and delta.ndim == 1:
        delta = delta[None, :]
    if delta.shape != (x.shape[0], params.output_dim):
        raise ConfigurationError(
            f"Output gradient shape {delta.shape} does not match ({x.shape[0]}, {params.output_dim})"
        )
    _, cache = forward_with_cache(params, x)

    grad_w: List[np.ndarray] = [None] * len(params.weights)
    grad_b: List[np.ndarray] = [None] * len(params.weights)
    for i in reversed(range(len(params.weights))):
        h_in, z, y = cache[i]
        dz = delta * _activation_grad(z, y, params.activations[i])
        grad_w[i] = dz.T @ h_in
        grad_b[i] = dz.sum(axis=0)
        if i > 0:
            delta = dz @ params.weights[i]
    return MLParams(grad_w, grad_b, list(params.activations))


def global_norm(grads: MLParams) -> float:
    return float(np.sqrt(sum(float(np.sum(a ** 2)) for a in grads.arrays())))


def clip_grad_norm(grads: MLParams, max_norm: Optional[float]) -> MLParams:
    return clip_joint_grad_norm([grads], max_norm)[0]


def clip_joint_grad_norm(grads: Sequence[MLParams], max_norm: Optional[float]) -> List[MLParams]:
    """Scale several gradient sets by one factor so their combined norm is at most `max_norm`"""
    if max_norm is None:
        return list(grads)
    norm = float(np.sqrt(sum(global_norm(g) ** 2 for g in grads)))
    if norm <= max_norm or norm == 0.0:
        return list(grads)
    scale = max_norm / norm
    return [MLParams([w * scale for w in g.weights], [b * scale for b in g.biases], list(g.activations))
            for g in grads]


@dataclass
class AdamState:
    first_moment: MLParams
    second_moment: MLParams
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    timestep: int = 0


def adam_init(params: MLParams, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(params.zeros_like(), params.zeros_like(), learning_rate, beta1, beta2, eps, 0)


def adam_step(params: MLParams, grads: MLParams, state: AdamState) -> Tuple[MLParams, AdamState]:
    """Bias-corrected adaptive-moment update; returns new parameters and state"""
    t = state.timestep + 1
    b1, b2 = state.beta1, state.beta2
    new_arrays, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.first_moment.arrays(), state.second_moment.arrays()):
        if p.shape != g.shape:
            raise ConfigurationError(f"Gradient shape {g.shape} does not match parameter shape {p.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g ** 2
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_arrays.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)

    def _rebuild(arrays: List[np.ndarray]) -> MLParams:
        return MLParams(arrays[0::2], arrays[1::2], list(params.activations))

    new_params = _rebuild(new_arrays)
    if not new_params.is_finite():
        logger.error(f"❌ Adam step {t} produced non-finite parameters")
        raise ContractViolation(f"Non-finite parameters after Adam step {t}")
    return new_params, AdamState(_rebuild(new_m), _rebuild(new_v), state.learning_rate, b1, b2, state.eps, t)


# ==============================================
# POLICY HEAD HELPERS
# ==============================================

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def entropy(logits: np.ndarray) -> np.ndarray:
    p = softmax(logits)
    return -np.sum(p * log_softmax(logits), axis=-1)


def entropy_logit_grad(logits: np.ndarray) -> np.ndarray:
    """dH/dlogits for a batch of categorical distributions"""
    p = softmax(logits)
    logp = log_softmax(logits)
    h = -np.sum(p * logp, axis=-1, keepdims=True)
    return -p * (logp + h)


# ==============================================
# SERIALIZATION
# ==============================================

def params_to_dict(params: MLParams) -> Dict[str, Any]:
    """Layer-shape header plus flat row-major values; floats survive json exactly"""
    return {
        "layers": [
            {
                "shape": [int(w.shape[0]), int(w.shape[1])],
                "activation": act,
                "weights": [float(x) for x in w.ravel()],
                "bias": [float(x) for x in b],
            }
            for w, b, act in zip(params.weights, params.biases, params.activations)
        ]
    }


def params_from_dict(data: Dict[str, Any]) -> MLParams:
    weights, biases, activations = [], [], []
    for i, layer in enumerate(data["layers"]):
        out_dim, in_dim = layer["shape"]
        values = np.asarray(layer["weights"], dtype=np.float64)
        if values.size != out_dim * in_dim or len(layer["bias"]) != out_dim:
            raise ConfigurationError(f"Layer {i} values do not match header shape {layer['shape']}")
        weights.append(values.reshape(out_dim, in_dim))
        biases.append(np.asarray(layer["bias"], dtype=np.float64))
        activations.append(layer["activation"])
    params = MLParams(weights, biases, activations)
    if not params.is_finite():
        raise ConfigurationError("Serialized network contains non-finite values")
    return params
