"""Dense MLP forward/backward passes and masked momentum SGD.

Weights of a fully connected layer are stored as ``(n_in, n_out)`` arrays so a
batch ``x`` of shape ``(B, n_in)`` maps to ``x @ W + b``. Every pass multiplies
weights by their binary mask before use, so the effective weight is ``W * M``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError, NumericalError

ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class Dense:
    n_in: int
    n_out: int
    has_bias: bool = True
    activation: str = "relu"

    def __post_init__(self):
        if self.n_in <= 0 or self.n_out <= 0:
            raise ConfigError(f"layer sizes must be positive, got {self.n_in}x{self.n_out}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def weight_shape(self) -> tuple[int, int]:
        return (self.n_in, self.n_out)


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered fully connected layers trained with softmax cross-entropy."""

    layers: tuple[Dense, ...]

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("network needs at least one layer")
        for i in range(1, len(self.layers)):
            if self.layers[i - 1].n_out != self.layers[i].n_in:
                raise ConfigError(
                    f"layer {i - 1} outputs {self.layers[i - 1].n_out} features "
                    f"but layer {i} expects {self.layers[i].n_in}"
                )

    @classmethod
    def mlp(cls, sizes: Sequence[int], bias: bool = True) -> "NetworkSpec":
        """ReLU MLP with an identity output layer, e.g. ``mlp([784, 300, 100, 10])``."""
        if len(sizes) < 2:
            raise ConfigError("an MLP needs at least input and output sizes")
        n = len(sizes) - 1
        return cls(tuple(
            Dense(sizes[i], sizes[i + 1], bias, "identity" if i == n - 1 else "relu")
            for i in range(n)
        ))

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    @property
    def n_inputs(self) -> int:
        return self.layers[0].n_in

    @property
    def n_classes(self) -> int:
        return self.layers[-1].n_out

    @property
    def weight_shapes(self) -> list[tuple[int, int]]:
        return [layer.weight_shape for layer in self.layers]


@dataclass
class Params:
    """Per-layer weight matrices and (optional) bias vectors."""

    weights: list[np.ndarray]
    biases: list[np.ndarray | None]

    def copy(self) -> "Params":
        return Params([w.copy() for w in self.weights],
                      [None if b is None else b.copy() for b in self.biases])

    def zeros_like(self) -> "Params":
        return Params([np.zeros_like(w) for w in self.weights],
                      [None if b is None else np.zeros_like(b) for b in self.biases])

    def arrays(self) -> list[np.ndarray]:
        return list(self.weights) + [b for b in self.biases if b is not None]


def init_params(net: NetworkSpec, rng: np.random.Generator, dtype=np.float64) -> Params:
    """Kaiming-uniform (fan-in, ReLU gain) dense weights and zero biases."""
    weights, biases = [], []
    for layer in net.layers:
        bound = math.sqrt(6.0 / layer.n_in)
        weights.append(rng.uniform(-bound, bound, layer.weight_shape).astype(dtype))
        biases.append(np.zeros(layer.n_out, dtype=dtype) if layer.has_bias else None)
    return Params(weights, biases)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each layer
    effective: list[np.ndarray]  # W * M used for each layer
    probs: np.ndarray
    labels: np.ndarray


def _check_shapes(net: NetworkSpec, params: Params, masks: Sequence[np.ndarray]):
    if len(params.weights) != len(net.layers) or len(masks) != len(net.layers):
        raise ConfigError(
            f"network has {len(net.layers)} layers but got {len(params.weights)} weights "
            f"and {len(masks)} masks"
        )
    for i, (layer, w, m, b) in enumerate(zip(net.layers, params.weights, masks, params.biases)):
        if w.shape != layer.weight_shape or m.shape != layer.weight_shape:
            raise ConfigError(
                f"layer {i}: expected weight/mask shape {layer.weight_shape}, "
                f"got {w.shape} / {m.shape}"
            )
        if layer.has_bias and (b is None or b.shape != (layer.n_out,)):
            raise ConfigError(f"layer {i}: bias missing or of wrong shape")


def _logits(net, params, masks, x, keep=False):
    if x.ndim != 2 or x.shape[1] != net.n_inputs:
        raise ConfigError(f"batch must have shape (B, {net.n_inputs}), got {x.shape}")
    inputs, effective = [], []
    h = x
    for i, (layer, w, m, b) in enumerate(zip(net.layers, params.weights, masks, params.biases)):
        eff = w * m
        if keep:
            inputs.append(h)
            effective.append(eff)
        z = h @ eff
        if b is not None:
            z += b
        if not np.isfinite(z).all():
            raise NumericalError(f"non-finite activation in layer {i}", layer=i)
        h = np.maximum(z, 0) if layer.activation == "relu" else z
    return h, inputs, effective


def _softmax_xent(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    probs = exp / total
    rows = np.arange(len(labels))
    loss = float(np.mean(np.log(total[:, 0]) - shifted[rows, labels]))
    return loss, probs


def _check_labels(net, x, labels):
    labels = np.asarray(labels)
    if labels.shape != (x.shape[0],):
        raise ConfigError(f"expected {x.shape[0]} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= net.n_classes):
        raise ConfigError(f"labels must lie in [0, {net.n_classes})")
    return labels.astype(np.intp, copy=False)


def forward(net: NetworkSpec, params: Params, masks: Sequence[np.ndarray],
            batch: np.ndarray, labels) -> tuple[float, ForwardCache]:
    """Mean softmax cross-entropy of the masked network on ``batch``."""
    _check_shapes(net, params, masks)
    labels = _check_labels(net, batch, labels)
    logits, inputs, effective = _logits(net, params, masks, batch, keep=True)
    loss, probs = _softmax_xent(logits, labels)
    return loss, ForwardCache(inputs, effective, probs, labels)


def loss_value(net: NetworkSpec, params: Params, masks: Sequence[np.ndarray], batch, labels) -> float:
    _check_shapes(net, params, masks)
    labels = _check_labels(net, batch, labels)
    logits, _, _ = _logits(net, params, masks, batch)
    return _softmax_xent(logits, labels)[0]


def predict(net: NetworkSpec, params: Params, masks: Sequence[np.ndarray], batch) -> np.ndarray:
    """Argmax class per row; ties go to the lowest class index."""
    _check_shapes(net, params, masks)
    logits, _, _ = _logits(net, params, masks, batch)
    return logits.argmax(axis=1)


def backward(net: NetworkSpec, params: Params, masks: Sequence[np.ndarray],
             cache: ForwardCache, labels, dense_mode: bool = False) -> Params:
    """Gradients of the mean loss w.r.t. weights and biases.

    With ``dense_mode`` the weight gradients cover every position, including
    masked-out ones; otherwise masked-out positions are zeroed.
    """
    labels = np.asarray(labels)
    if labels.shape != cache.labels.shape or not np.array_equal(labels, cache.labels):
        raise ContractError("labels differ from the ones used in the forward pass")
    if len(cache.effective) != len(net.layers):
        raise ContractError("activation cache does not match this network")
    for i, (w, m, eff) in enumerate(zip(params.weights, masks, cache.effective)):
        if eff.shape != w.shape or not np.array_equal(eff, w * m):
            raise ContractError(f"stale activation cache: layer {i} weights or mask changed since forward")

    n = len(labels)
    delta = cache.probs.copy()
    delta[np.arange(n), cache.labels] -= 1.0
    delta /= n
    gw: list[np.ndarray] = [None] * len(net.layers)  # type: ignore[list-item]
    gb: list[np.ndarray | None] = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        a_in = cache.inputs[i]
        g = a_in.T @ delta
        if not dense_mode:
            g *= masks[i]
        gw[i] = g
        if net.layers[i].has_bias:
            gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ cache.effective[i].T
            if net.layers[i - 1].activation == "relu":
                delta *= a_in > 0
    return Params(gw, gb)


@dataclass
class OptimizerState:
    """Momentum buffers plus the SGD hyper-parameters."""

    buffers: Params
    momentum: float = 0.9
    lr: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")

    @classmethod
    def for_params(cls, params: Params, momentum: float = 0.9, lr: float = 0.1) -> "OptimizerState":
        return cls(params.zeros_like(), momentum, lr)

    def reset(self, layer: int, flat_indices) -> None:
        """Zero the weight momentum at the given flat positions of one layer."""
        self.buffers.weights[layer].reshape(-1)[np.asarray(flat_indices, dtype=np.intp)] = 0


def sgd_step(params: Params, grads: Params, masks: Sequence[np.ndarray],
             opt: OptimizerState, lr: float) -> Params:
    """One momentum-SGD update in place: ``v = mu*v + g``; ``w -= lr*v``.

    Masked-out weights and their momentum stay exactly zero.
    """
    for i, (w, g, m, v) in enumerate(zip(params.weights, grads.weights, masks, opt.buffers.weights)):
        if w.shape != g.shape or w.shape != m.shape:
            raise ConfigError(f"layer {i}: shape mismatch in sgd_step")
        v *= opt.momentum
        v += g
        v *= m
        w -= lr * v
        w *= m
    for b, g, v in zip(params.biases, grads.biases, opt.buffers.biases):
        if b is None:
            continue
        v *= opt.momentum
        v += g
        b -= lr * v
    return params


def cosine_lr(t: int, t_end: int, lr0: float, lr_min: float = 0.0) -> float:
    if t_end <= 0:
        raise ConfigError("cosine schedule horizon must be positive")
    if t >= t_end:
        return lr_min
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * t / t_end))
