"""
tinynet.py

Minimal fully-connected softmax classifier with manual backpropagation. The
parameters live in a ParamVector with one segment per weight matrix ("W0",
"W1", ...) and one per bias vector ("b0", "b1", ...); weights are stored
row-major with shape (fan_in, fan_out).

Randomness comes from numpy's PCG64 generator (``numpy.random.default_rng``).
"""
from typing import List, Tuple

import numpy as np

from llaca.core.params import ParamVector
from llaca.exceptions import IncompatibleLayoutError, ShapeError
from llaca.models import NetSpec


class Model:
    """A NetSpec together with its flat parameters."""

    __slots__ = ("spec", "params")

    def __init__(self, spec: NetSpec, params: ParamVector):
        if params.layout != tuple(param_layout(spec)):
            raise IncompatibleLayoutError(f"Parameters {params.layer_names} do not fit spec {spec.layer_sizes}")
        self.spec = spec
        self.params = params

    def weights(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        """(W, b) pairs as shaped arrays (read-only views)."""
        sizes = self.spec.layer_sizes
        out = []
        for k in range(len(sizes) - 1):
            W = self.params.layer(f"W{k}").values.reshape(sizes[k], sizes[k + 1])
            b = self.params.layer(f"b{k}").values
            out.append((W, b))
        return out

    def __repr__(self) -> str:
        return f"Model(sizes={self.spec.layer_sizes}, activation={self.spec.activation})"


def param_layout(spec: NetSpec) -> List[Tuple[str, int, int]]:
    """Segment layout derived from a NetSpec: W0, b0, W1, b1, ..."""
    layout, offset = [], 0
    sizes = spec.layer_sizes
    for k in range(len(sizes) - 1):
        n_w = sizes[k] * sizes[k + 1]
        layout.append((f"W{k}", offset, n_w))
        offset += n_w
        layout.append((f"b{k}", offset, sizes[k + 1]))
        offset += sizes[k + 1]
    return layout


def zero_params(spec: NetSpec) -> ParamVector:
    layout = param_layout(spec)
    total = sum(length for _, _, length in layout)
    return ParamVector(np.zeros(total), layout)


def init_model(spec: NetSpec) -> Model:
    """
    Deterministic Glorot-uniform initialization from ``spec.init_seed``.

    Each weight matrix is drawn from U[-a, a], a = sqrt(6 / (fan_in + fan_out));
    biases start at zero.
    """
    rng = np.random.default_rng(spec.init_seed)
    sizes = spec.layer_sizes
    layers = []
    for k in range(len(sizes) - 1):
        fan_in, fan_out = sizes[k], sizes[k + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append((f"W{k}", rng.uniform(-limit, limit, size=(fan_in, fan_out))))
        layers.append((f"b{k}", np.zeros(fan_out)))
    return Model(spec, ParamVector.from_layers(layers))


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


def _check_batch(model: Model, inputs, labels=None) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != model.spec.num_inputs:
        raise ShapeError(f"Expected inputs of width {model.spec.num_inputs}, got shape {X.shape}")
    y = None
    if labels is not None:
        y = np.asarray(labels).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise ShapeError(f"{X.shape[0]} inputs but {y.shape[0]} labels")
        if y.size and (y.min() < 0 or y.max() >= model.spec.num_classes):
            raise ShapeError(f"Labels must lie in [0, {model.spec.num_classes})")
        y = y.astype(np.int64)
    return X, y


def _forward(model: Model, X: np.ndarray):
    kind = model.spec.activation
    acts, pre = [X], []
    layers = model.weights()
    h = X
    for k, (W, b) in enumerate(layers):
        z = h @ W + b
        pre.append(z)
        h = z if k == len(layers) - 1 else _activate(z, kind)
        acts.append(h)
    return acts, pre


def logits(model: Model, inputs) -> np.ndarray:
    X, _ = _check_batch(model, inputs)
    acts, _ = _forward(model, X)
    return acts[-1]


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grad(model: Model, inputs, labels) -> Tuple[float, ParamVector]:
    """
    Mean softmax cross-entropy over the batch and its gradient.

    Args:
        model: Network to evaluate
        inputs: (n, input_width) features
        labels: (n,) class indices

    Returns:
        (loss, grads) with grads layout-compatible to ``model.params``
    """
    X, y = _check_batch(model, inputs, labels)
    n = X.shape[0]
    if n == 0:
        raise ShapeError("Empty batch")
    kind = model.spec.activation
    acts, pre = _forward(model, X)
    log_p = _log_softmax(acts[-1])
    loss = float(-log_p[np.arange(n), y].mean())

    delta = np.exp(log_p)
    delta[np.arange(n), y] -= 1.0
    delta /= n

    layers = model.weights()
    grads = {}
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        grads[f"W{k}"] = acts[k].T @ delta
        grads[f"b{k}"] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ W.T) * _activate_grad(pre[k - 1], acts[k], kind)
    return loss, model.params.with_layers(grads)


def sgd_step(model: Model, grads: ParamVector, lr: float) -> Model:
    """Plain gradient step ``params - lr * grads``; returns a new Model."""
    if not model.params.is_compatible(grads):
        raise IncompatibleLayoutError("Gradient layout does not match the model")
    if lr < 0:
        raise ValueError(f"lr must be non-negative, got {lr}")
    return Model(model.spec, model.params.with_values(model.params.values - lr * grads.values))


def predict(model: Model, inputs) -> np.ndarray:
    # argmax returns the lowest index on ties
    return np.argmax(logits(model, inputs), axis=1)


def accuracy(model: Model, inputs, labels) -> float:
    """Fraction of argmax-correct predictions."""
    X, y = _check_batch(model, inputs, labels)
    if X.shape[0] == 0:
        raise ShapeError("accuracy of an empty batch is undefined")
    return float(np.mean(predict(model, X) == y))


def numerical_grad(model: Model, inputs, labels, step: float = 1e-4) -> ParamVector:
    """Central finite-difference gradient of the mean loss."""
    base = model.params.values
    out = np.empty_like(base)
    for i in range(base.shape[0]):
        bumped = np.array(base, copy=True)
        bumped[i] = base[i] + step
        up, _ = loss_and_grad(Model(model.spec, model.params.with_values(bumped)), inputs, labels)
        bumped[i] = base[i] - step
        down, _ = loss_and_grad(Model(model.spec, model.params.with_values(bumped)), inputs, labels)
        out[i] = (up - down) / (2.0 * step)
    return model.params.with_values(out)


def gradient_check(model: Model, inputs, labels, step: float = 1e-4, floor: float = 1e-2) -> float:
    """
    Largest per-entry relative error |a - n| / max(|a|, |n|, floor) between the
    analytic and the finite-difference gradient.
    """
    _, analytic = loss_and_grad(model, inputs, labels)
    numeric = numerical_grad(model, inputs, labels, step=step)
    a, n = analytic.values, numeric.values
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
