"""Minimal dense networks with reverse-mode differentiation.

Covers exactly what the hybrid agents need: linear layers with optional bias,
identity or tanh activation, Xavier / Orthogonal / Constant initialization,
and explicit backward passes that accumulate parameter gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Xavier:
    pass


@dataclass(frozen=True)
class Orthogonal:
    gain: float = 1.0

    def __post_init__(self):
        if self.gain <= 0:
            raise ValueError("orthogonal gain must be > 0")


@dataclass(frozen=True)
class Constant:
    value: float = 0.1


InitStrategy = Xavier | Orthogonal | Constant

_ACTIVATIONS = ("identity", "tanh")


def _orthogonal_matrix(out_dim: int, in_dim: int, gain: float, rng: np.random.Generator) -> np.ndarray:
    a = rng.normal(size=(max(out_dim, in_dim), min(out_dim, in_dim)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))  # fix the sign ambiguity of QR
    if out_dim < in_dim:
        q = q.T
    return gain * q


def init_weights(out_dim: int, in_dim: int, strategy: InitStrategy, rng: np.random.Generator) -> np.ndarray:
    if out_dim < 1 or in_dim < 1:
        raise ValueError("layer dimensions must be positive")
    if isinstance(strategy, Xavier):
        bound = np.sqrt(6.0 / (in_dim + out_dim))
        return rng.uniform(-bound, bound, size=(out_dim, in_dim))
    if isinstance(strategy, Orthogonal):
        return _orthogonal_matrix(out_dim, in_dim, strategy.gain, rng)
    if isinstance(strategy, Constant):
        return np.full((out_dim, in_dim), float(strategy.value))
    raise TypeError(f"unknown init strategy {strategy!r}")


class LinearLayer:
    """activation(W x + b), with explicit backward."""

    def __init__(
        self,
        out_dim: int,
        in_dim: int,
        strategy: InitStrategy,
        rng: np.random.Generator,
        bias: bool = True,
        activation: str = "identity",
    ):
        if activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}")
        self.weights = init_weights(out_dim, in_dim, strategy, rng)
        self.bias = np.zeros(out_dim) if bias else None
        self.activation = activation
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = np.zeros(out_dim) if bias else None
        self._cache: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    def n_params(self) -> int:
        return self.weights.size + (self.bias.size if self.bias is not None else 0)

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"expected input width {self.in_dim}, got {x.shape[-1]}")
        z = x @ self.weights.T
        if self.bias is not None:
            z = z + self.bias
        y = np.tanh(z) if self.activation == "tanh" else z
        if cache:
            self._cache = (x, y)
        return y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients; return gradient w.r.t. the input."""
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        x, y = self._cache
        gz = grad_out * (1.0 - y * y) if self.activation == "tanh" else grad_out
        self.grad_weights += gz.reshape(-1, self.out_dim).T @ x.reshape(-1, self.in_dim)
        if self.bias is not None:
            self.grad_bias += gz.reshape(-1, self.out_dim).sum(axis=0)
        return gz @ self.weights

    def zero_grad(self) -> None:
        self.grad_weights[:] = 0.0
        if self.grad_bias is not None:
            self.grad_bias[:] = 0.0


class Mlp:
    """Stack of LinearLayers; the classical critic is mlp(state, 64, 64, 1)."""

    def __init__(self, layers: Sequence[LinearLayer]):
        if not layers:
            raise ValueError("mlp needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError("inconsistent layer dimensions")
        self.layers = list(layers)

    @classmethod
    def build(
        cls,
        dims: Sequence[int],
        rng: np.random.Generator,
        hidden_activation: str = "tanh",
        hidden_init: InitStrategy = Orthogonal(np.sqrt(2.0)),
        output_init: InitStrategy = Orthogonal(1.0),
        bias: bool = True,
    ) -> "Mlp":
        if len(dims) < 2:
            raise ValueError("dims must name at least input and output widths")
        layers = []
        for i in range(len(dims) - 1):
            last = i == len(dims) - 2
            layers.append(
                LinearLayer(
                    dims[i + 1],
                    dims[i],
                    output_init if last else hidden_init,
                    rng,
                    bias=bias,
                    activation="identity" if last else hidden_activation,
                )
            )
        return cls(layers)

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, cache=cache)
        return x

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.zero_grad()

    def n_params(self) -> int:
        return sum(layer.n_params() for layer in self.layers)

    def parameters(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.layers):
            out[f"layer{i}.weight"] = layer.weights
            if layer.bias is not None:
                out[f"layer{i}.bias"] = layer.bias
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.layers):
            out[f"layer{i}.weight"] = layer.grad_weights
            if layer.grad_bias is not None:
                out[f"layer{i}.bias"] = layer.grad_bias
        return out
