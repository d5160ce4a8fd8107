"""Minimal dense-network engine on float64 numpy.

Forward/backward are hand-written reverse mode for a fixed MLP topology;
everything is a pure function, so values can move freely between threads.
The batched entry points (`forward`, `backward`) are the ones training
uses; `mlp_forward` / `mlp_backward` are single-vector conveniences that
share the same code path.
"""

from dataclasses import dataclass

import numpy as np

from .errors import AggregationError, ConfigError, NumericError, ShapeError

RELU = "relu"
SELU = "selu"
SIGMOID = "sigmoid"
IDENTITY = "identity"
ACTIVATIONS = (RELU, SELU, SIGMOID, IDENTITY)

# Standard self-normalizing network constants.
SELU_ALPHA = 1.6732632423543772
SELU_LAMBDA = 1.0507009873554805


def stable_sigmoid(x):
    """Numerically stable logistic function (scalar or ndarray)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == RELU:
        return np.maximum(z, 0.0)
    if name == SELU:
        return SELU_LAMBDA * np.where(z > 0.0, z, SELU_ALPHA * (np.exp(z) - 1.0))
    if name == SIGMOID:
        return stable_sigmoid(z)
    if name == IDENTITY:
        return z
    raise ConfigError(f"unknown activation '{name}'")


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """d(activation)/dz, reusing the cached activation value a where cheap."""
    if name == RELU:
        return (z > 0.0).astype(np.float64)
    if name == SELU:
        return SELU_LAMBDA * np.where(z > 0.0, 1.0, SELU_ALPHA * np.exp(z))
    if name == SIGMOID:
        return a * (1.0 - a)
    if name == IDENTITY:
        return np.ones_like(z)
    raise ConfigError(f"unknown activation '{name}'")


@dataclass
class LayerParams:
    weights: np.ndarray  # [out, in]
    bias: np.ndarray  # [out]
    activation: str

    def copy(self) -> "LayerParams":
        return LayerParams(self.weights.copy(), self.bias.copy(), self.activation)


@dataclass
class MlpParams:
    layers: list

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("an MLP needs at least one layer")
        for i in range(len(self.layers) - 1):
            if self.layers[i].weights.shape[0] != self.layers[i + 1].weights.shape[1]:
                raise ShapeError(
                    f"layer {i} output {self.layers[i].weights.shape[0]} != "
                    f"layer {i + 1} input {self.layers[i + 1].weights.shape[1]}"
                )

    @property
    def input_size(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_size(self) -> int:
        return self.layers[-1].weights.shape[0]

    def n_params(self) -> int:
        return sum(l.weights.size + l.bias.size for l in self.layers)

    def copy(self) -> "MlpParams":
        return MlpParams([l.copy() for l in self.layers])

    def same_shape(self, other: "MlpParams") -> bool:
        return len(self.layers) == len(other.layers) and all(
            a.weights.shape == b.weights.shape and a.bias.shape == b.bias.shape
            for a, b in zip(self.layers, other.layers)
        )

    def equal(self, other: "MlpParams") -> bool:
        """Bitwise equality of every coordinate."""
        return self.same_shape(other) and all(
            np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)
            for a, b in zip(self.layers, other.layers)
        )

    def allclose(self, other: "MlpParams", atol=0.0, rtol=1e-12) -> bool:
        return self.same_shape(other) and all(
            np.allclose(a.weights, b.weights, atol=atol, rtol=rtol)
            and np.allclose(a.bias, b.bias, atol=atol, rtol=rtol)
            for a, b in zip(self.layers, other.layers)
        )


@dataclass
class LayerGrads:
    d_weights: np.ndarray
    d_bias: np.ndarray


@dataclass
class MlpGrads:
    layers: list

    def max_abs(self) -> float:
        return max(
            max(np.max(np.abs(l.d_weights)), np.max(np.abs(l.d_bias)))
            for l in self.layers
        )


@dataclass
class ForwardTrace:
    """Intermediates of one batched forward pass: inputs plus per-layer
    pre-activations and activations, each [n, width]."""

    inputs: np.ndarray
    pre_activations: list
    activations: list


def init_params(layer_sizes, activations, seed: int) -> MlpParams:
    """Seeded uniform init, zero biases.

    Bound is sqrt(6/fan_in) for relu layers (He-style) and sqrt(3/fan_in)
    otherwise (LeCun-style, unit 1/fan_in variance), per-layer by that
    layer's activation.
    """
    if len(layer_sizes) < 2:
        raise ConfigError("layer_sizes needs at least an input and an output size")
    if len(activations) != len(layer_sizes) - 1:
        raise ConfigError(
            f"expected {len(layer_sizes) - 1} activations, got {len(activations)}"
        )
    for a in activations:
        if a not in ACTIVATIONS:
            raise ConfigError(f"unknown activation '{a}'")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(layer_sizes[:-1], layer_sizes[1:], activations):
        bound = np.sqrt((6.0 if act == RELU else 3.0) / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(LayerParams(w, np.zeros(fan_out), act))
    return MlpParams(layers)


def forward(params: MlpParams, x: np.ndarray):
    """Batched forward pass. x is [n, input_size]; returns ([n, out], trace)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"batched input must be 2-d, got shape {x.shape}")
    if x.shape[1] != params.input_size:
        raise ShapeError(
            f"layer 0 expects input size {params.input_size}, got {x.shape[1]}"
        )
    pre, act = [], []
    a = x
    for layer in params.layers:
        z = a @ layer.weights.T + layer.bias
        a = _activate(layer.activation, z)
        pre.append(z)
        act.append(a)
    return a, ForwardTrace(x, pre, act)


def mlp_forward(params: MlpParams, x: np.ndarray):
    """Single-vector forward pass; same math as `forward` on a 1-row batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected a vector, got shape {x.shape}")
    out, trace = forward(params, x[None, :])
    return out[0], trace


def backward(params: MlpParams, trace: ForwardTrace, output_grad: np.ndarray):
    """Exact reverse-mode gradients.

    output_grad is [n, out]: row i holds d(loss)/d(output_i). Parameter
    gradients sum contributions over rows (so a caller wanting a batch
    mean scales output_grad by 1/n); the returned input gradient is
    per-row [n, input_size].
    """
    g = np.asarray(output_grad, dtype=np.float64)
    if g.ndim != 2:
        raise ShapeError(f"output_grad must be 2-d, got shape {g.shape}")
    if len(trace.pre_activations) != len(params.layers):
        raise ShapeError("trace does not match the parameter layer count")
    if g.shape != trace.activations[-1].shape:
        raise ShapeError(
            f"output_grad shape {g.shape} != output shape {trace.activations[-1].shape}"
        )
    grads = [None] * len(params.layers)
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        z, a = trace.pre_activations[i], trace.activations[i]
        delta = g * _activation_grad(layer.activation, z, a)
        below = trace.inputs if i == 0 else trace.activations[i - 1]
        grads[i] = LayerGrads(delta.T @ below, delta.sum(axis=0))
        g = delta @ layer.weights
    return MlpGrads(grads), g


def mlp_backward(params: MlpParams, trace: ForwardTrace, output_grad: np.ndarray):
    """Single-vector wrapper over `backward`."""
    g = np.asarray(output_grad, dtype=np.float64)
    if g.ndim != 1:
        raise ShapeError(f"expected a vector, got shape {g.shape}")
    grads, input_grad = backward(params, trace, g[None, :])
    return grads, input_grad[0]


def finite_diff_grad(params: MlpParams, loss_fn, step: float = 1e-5) -> MlpGrads:
    """Central-difference gradient of loss_fn over every coordinate.

    Test oracle: O(n_params) loss evaluations, independent of `backward`.
    """
    base = params.copy()

    def diff_array(arr, where):
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + step
            up = loss_fn(base)
            arr[idx] = orig - step
            down = loss_fn(base)
            arr[idx] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite loss at {where}{idx}")
            g[idx] = (up - down) / (2.0 * step)
        return g

    grads = [
        LayerGrads(
            diff_array(layer.weights, f"layer {li} weights"),
            diff_array(layer.bias, f"layer {li} bias"),
        )
        for li, layer in enumerate(base.layers)
    ]
    return MlpGrads(grads)


def sgd_step(params: MlpParams, grads: MlpGrads, lr: float) -> MlpParams:
    """w <- w - lr*g on every coordinate; pure (returns new params)."""
    if len(grads.layers) != len(params.layers):
        raise ShapeError("gradient layer count does not match parameters")
    layers = []
    for i, (p, g) in enumerate(zip(params.layers, grads.layers)):
        if p.weights.shape != g.d_weights.shape or p.bias.shape != g.d_bias.shape:
            raise ShapeError(f"gradient shape mismatch at layer {i}")
        layers.append(
            LayerParams(p.weights - lr * g.d_weights, p.bias - lr * g.d_bias, p.activation)
        )
    return MlpParams(layers)


def weighted_sum_params(items) -> MlpParams:
    """Convex combination of shape-identical parameter sets.

    Reduction follows the input-list order; that fixed order is what makes
    aggregation bitwise reproducible.
    """
    items = list(items)
    if not items:
        raise AggregationError("cannot aggregate an empty list of parameter sets")
    total = sum(w for _, w in items)
    if abs(total - 1.0) > 1e-9:
        raise AggregationError(f"aggregation weights sum to {total!r}, expected 1")
    first = items[0][0]
    for p, _ in items[1:]:
        if not first.same_shape(p):
            raise ShapeError("aggregation inputs are not shape-identical")
    layers = []
    for li, layer in enumerate(first.layers):
        w = np.zeros_like(layer.weights)
        b = np.zeros_like(layer.bias)
        for p, weight in items:
            w += weight * p.layers[li].weights
            b += weight * p.layers[li].bias
        layers.append(LayerParams(w, b, layer.activation))
    return MlpParams(layers)
