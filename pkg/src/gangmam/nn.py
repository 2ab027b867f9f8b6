"""Minimal dense-network numerics used by the GAN engine.

Float64 throughout, plain SGD, no framework: determinism and hand-checkable
gradients matter more here than speed.  Hidden layers use tanh (smooth, so
finite-difference checks hold everywhere); the output layer is sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    positive = z >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-z[positive]))
    ez = np.exp(z[~positive])
    out[~positive] = ez / (1.0 + ez)
    return out


@dataclass
class ForwardCache:
    """Per-layer (input activation, pre-activation) pairs plus the output."""

    inputs: list[np.ndarray]
    pre_activations: list[np.ndarray]
    output: np.ndarray


class DenseNet:
    """Fully connected net: tanh hidden layers, sigmoid output layer.

    ``weights[l]`` has shape (fan_in, fan_out); ``biases[l]`` has shape
    (fan_out,).
    """

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        if len(weights) != len(biases) or not weights:
            raise ValueError("need one bias per weight matrix, at least one layer")
        for i in range(1, len(weights)):
            if weights[i - 1].shape[1] != weights[i].shape[0]:
                raise ValueError("layer shapes do not chain")
        for w, b in zip(weights, biases):
            if b.shape != (w.shape[1],):
                raise ValueError("bias shape does not match its layer")
        self.weights = weights
        self.biases = biases

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator) -> "DenseNet":
        """Glorot-uniform weights, zero biases, drawn in layer order."""
        weights = []
        biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            scale = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-scale, scale, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "DenseNet":
        return DenseNet([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def forward(self, X: np.ndarray) -> np.ndarray:
        return self.forward_cached(X).output

    def forward_cached(self, X: np.ndarray) -> ForwardCache:
        inputs = []
        pre_activations = []
        activation = np.asarray(X, dtype=np.float64)
        last = len(self.weights) - 1
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(activation)
            z = activation @ w + b
            pre_activations.append(z)
            activation = sigmoid(z) if layer == last else np.tanh(z)
        return ForwardCache(inputs, pre_activations, activation)

    def backward(
        self, cache: ForwardCache, d_output_pre: np.ndarray
    ) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
        """Backprop from the gradient at the output pre-activation.

        Returns per-layer (dW, db) plus the gradient w.r.t. the network
        input (needed when this net sits downstream of another one).
        """
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(self.weights)
        dz = d_output_pre
        for layer in range(len(self.weights) - 1, -1, -1):
            a_in = cache.inputs[layer]
            grads[layer] = (a_in.T @ dz, dz.sum(axis=0))
            d_in = dz @ self.weights[layer].T
            if layer > 0:
                # a_in is the tanh output of the previous layer
                dz = d_in * (1.0 - a_in * a_in)
            else:
                dz = d_in
        return grads, dz

    def sgd_step(self, grads: list[tuple[np.ndarray, np.ndarray]], lr: float) -> None:
        for (dw, db), w, b in zip(grads, self.weights, self.biases):
            w -= lr * dw
            b -= lr * db

    def flatten(self) -> np.ndarray:
        """All parameters as one vector (layer order, weights then bias)."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def load_flat(self, theta: np.ndarray) -> None:
        offset = 0
        for w, b in zip(self.weights, self.biases):
            w[...] = theta[offset:offset + w.size].reshape(w.shape)
            offset += w.size
            b[...] = theta[offset:offset + b.size]
            offset += b.size
        if offset != theta.size:
            raise ValueError("flat parameter vector has the wrong length")


def flatten_grads(grads: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    parts = []
    for dw, db in grads:
        parts.append(dw.ravel())
        parts.append(db.ravel())
    return np.concatenate(parts)
