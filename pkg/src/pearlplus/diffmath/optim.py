"""Adam and Polyak averaging."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .tensor import NonFiniteError, ShapeError, Tensor


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], lr: float = 3e-4, **kw) -> AdamState:
        return cls(
            lr=lr,
            m=[np.zeros(np.shape(p)) for p in params],
            v=[np.zeros(np.shape(p)) for p in params],
            **kw,
        )


def adam_step(
    state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("adam_step: params, grads and moments must align")
    t = state.step + 1
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != np.shape(p) or m.shape != g.shape:
            raise ShapeError(f"adam_step: gradient shape {g.shape} != {np.shape(p)}")
        if not np.isfinite(g).all():
            raise NonFiniteError("adam_step: non-finite gradient")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        new_p.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(state.lr, state.beta1, state.beta2, state.eps, t, new_m, new_v)
    return new_p, new_state


class Adam:
    """Adam over a fixed list of parameter tensors."""

    def __init__(self, params: Sequence[Tensor], lr: float = 3e-4, **kw):
        self.params = list(params)
        self.state = AdamState.for_params([p.data for p in self.params], lr=lr, **kw)

    def step(self, grads: Mapping[Tensor, np.ndarray]) -> None:
        """Apply gradients from a :func:`backward` map; absent entries count as zero."""
        gs = [grads.get(p, None) for p in self.params]
        gs = [np.zeros(p.shape) if g is None else g for p, g in zip(self.params, gs)]
        new, self.state = adam_step(self.state, [p.data for p in self.params], gs)
        for p, a in zip(self.params, new):
            p.data = a

    def state_arrays(self) -> dict:
        return {
            "step": self.state.step,
            "m": [m.copy() for m in self.state.m],
            "v": [v.copy() for v in self.state.v],
        }

    def load_state_arrays(self, d: Mapping) -> None:
        if len(d["m"]) != len(self.params):
            raise ShapeError("optimizer state does not match parameter list")
        self.state.step = int(d["step"])
        self.state.m = [np.asarray(m, dtype=np.float64).copy() for m in d["m"]]
        self.state.v = [np.asarray(v, dtype=np.float64).copy() for v in d["v"]]


def soft_update(target: Sequence[Tensor], source: Sequence[Tensor], tau: float) -> None:
    """Polyak averaging in place: ``target <- (1 - tau) * target + tau * source``."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    if len(target) != len(source):
        raise ShapeError("soft_update: parameter lists differ in length")
    for t, s in zip(target, source):
        if t.shape != s.shape:
            raise ShapeError(f"soft_update: {t.shape} vs {s.shape}")
        if tau == 1.0:
            t.data = s.data.copy()
        else:
            t.data = (1.0 - tau) * t.data + tau * s.data
