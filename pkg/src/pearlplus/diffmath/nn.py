"""Multilayer perceptrons on top of the tape."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor, NonFiniteError

_ACTIVATIONS = {"relu": T.relu, "tanh": T.tanh}


class Mlp:
    """Fully connected network ``layer_dims[0] -> ... -> layer_dims[-1]``.

    Hidden layers use ``activation``; the output layer is linear. Hidden
    weights are drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the output
    layer from U(-out_init, out_init).
    """

    def __init__(
        self,
        layer_dims: Sequence[int],
        rng: np.random.Generator | None = None,
        activation: str = "relu",
        out_init: float = 3e-3,
        exact: bool = False,
        name: str = "mlp",
    ):
        if len(layer_dims) < 2 or any(int(d) <= 0 for d in layer_dims):
            raise ValueError(f"invalid layer_dims {layer_dims!r}")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.layer_dims = [int(d) for d in layer_dims]
        self.activation = activation
        self.exact = exact
        self.name = name
        rng = np.random.default_rng(0) if rng is None else rng
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        n_layers = len(self.layer_dims) - 1
        for i, (d_in, d_out) in enumerate(zip(self.layer_dims[:-1], self.layer_dims[1:])):
            bound = out_init if i == n_layers - 1 else 1.0 / np.sqrt(d_in)
            self.weights.append(
                T.parameter(rng.uniform(-bound, bound, (d_in, d_out)), f"{name}.W{i}")
            )
            self.biases.append(T.parameter(rng.uniform(-bound, bound, d_out), f"{name}.b{i}"))

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def n_parameters(self) -> int:
        return int(np.sum([p.size for p in self.parameters()]))

    def get_arrays(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def set_arrays(self, arrays: Sequence[np.ndarray]) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise ShapeError(f"{self.name}: expected {len(params)} arrays, got {len(arrays)}")
        for p, a in zip(params, arrays):
            a = np.asarray(a, dtype=np.float64)
            if a.shape != p.shape:
                raise ShapeError(f"{p.name}: shape {a.shape} != {p.shape}")
            p.data = a.copy()

    def __call__(self, x, track: bool = True) -> Tensor:
        return forward_mlp(self, x, track=track)


def forward_mlp(net: Mlp, x, track: bool = True) -> Tensor:
    """Run ``net`` on a ``(batch, d_in)`` input.

    With ``track=False`` the parameters act as constants: gradients still
    flow to a tracked input, never into the network.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ShapeError(f"{net.name}: expected input (batch, {net.in_dim}), got {x.shape}")
    if not x.tracked and not np.isfinite(x.data).all():
        raise NonFiniteError(f"{net.name}: non-finite input")
    act = _ACTIVATIONS[net.activation]
    mm = T.exact_matmul if net.exact else T.matmul
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        if not track:
            w, b = Tensor._wrap(w.data), Tensor._wrap(b.data)
        h = T.add(mm(h, w), b)
        if i < last:
            h = act(h)
    return h
