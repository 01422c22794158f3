from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .rng import Rng
from .tensor import ShapeError, Tensor, leaky_relu, matmul, relu, sigmoid

ACTIVATIONS = ("identity", "relu", "leaky_relu", "sigmoid")


@dataclass
class DenseLayer:
    """``activation(x @ W.T + b)`` with W of shape (out, in)."""

    weight: Tensor
    bias: Tensor
    activation: str = "identity"
    slope: float = 0.2

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.data.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"weight {self.weight.shape} and bias {self.bias.shape} disagree")

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: Rng, activation: str = "identity") -> "DenseLayer":
        bound = np.sqrt(1.0 / n_in)
        w = rng.uniform((n_out, n_in), -bound, bound)
        return cls(Tensor(w, requires_grad=True), Tensor(np.zeros(n_out), requires_grad=True), activation)

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        return forward_dense(self, x)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


def forward_dense(layer: DenseLayer, x: Tensor) -> Tensor:
    if x.data.ndim != 2 or x.shape[1] != layer.n_in:
        raise ShapeError(f"input shape {x.shape} does not match layer weight shape {layer.weight.shape}")
    h = matmul(x, layer.weight.T) + layer.bias
    if layer.activation == "relu":
        return relu(h)
    if layer.activation == "leaky_relu":
        return leaky_relu(h, layer.slope)
    if layer.activation == "sigmoid":
        return sigmoid(h)
    return h


@dataclass
class MLP:
    """Stack of dense layers; the last layer carries ``out_activation``."""

    layers: list[DenseLayer] = field(default_factory=list)

    @classmethod
    def init(cls, sizes: Sequence[int], rng: Rng, hidden_activation: str = "relu",
             out_activation: str = "identity") -> "MLP":
        layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            act = out_activation if i == len(sizes) - 2 else hidden_activation
            layers.append(DenseLayer.init(a, b, rng, act))
        return cls(layers)

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{prefix}.{i}.weight"] = layer.weight
            out[f"{prefix}.{i}.bias"] = layer.bias
        return out

    def weights(self) -> list[Tensor]:
        return [layer.weight for layer in self.layers]
