"""Diagonal Gaussians, tanh-squashed Gaussians and categoricals on the tape.

Functions accept a single distribution over ``d`` dimensions (1-D
parameters) or a batch of them (``(n, d)`` parameters); reductions run over
the last axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .diffmath import ShapeError, Tensor, ops

LOG_2PI = math.log(2.0 * math.pi)
# actions are clamped this far inside (-1, 1) before taking atanh
SQUASH_EPS = 1e-6


def _reduce_last(x: Tensor) -> Tensor:
    return ops.sum(x, axis=x.ndim - 1)


@dataclass
class DiagGaussian:
    mean: Tensor
    variance: Tensor

    def __post_init__(self):
        self.mean = ops.tensor(self.mean)
        self.variance = ops.tensor(self.variance)
        if self.mean.shape != self.variance.shape:
            raise ShapeError(f"mean {self.mean.shape} vs variance {self.variance.shape}")
        if self.mean.ndim not in (1, 2):
            raise ShapeError("DiagGaussian parameters must be 1-D or 2-D")
        if (self.variance.data <= 0).any():
            raise ValueError("variance must be strictly positive")

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @classmethod
    def standard(cls, dim: int) -> DiagGaussian:
        return cls(Tensor(np.zeros(dim)), Tensor(np.ones(dim)))


@dataclass
class Categorical:
    logits: Tensor

    def __post_init__(self):
        self.logits = ops.tensor(self.logits)
        if self.logits.ndim not in (1, 2):
            raise ShapeError("Categorical logits must be 1-D or 2-D")

    @property
    def n(self) -> int:
        return self.logits.shape[-1]

    def log_probs(self) -> Tensor:
        return ops.log_softmax(self.logits)

    def probs(self) -> np.ndarray:
        return np.exp(ops.log_softmax(ops.stop_gradient(self.logits)).data)


def rsample(dist: DiagGaussian, noise) -> Tensor:
    """Reparameterized draw ``mean + sqrt(variance) * noise``."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != dist.mean.shape:
        raise ShapeError(f"noise shape {noise.shape} != {dist.mean.shape}")
    return ops.add(dist.mean, ops.mul(ops.sqrt(dist.variance), Tensor._wrap(noise)))


def gaussian_logprob(dist: DiagGaussian, x) -> Tensor:
    x = ops.tensor(x)
    if x.shape != dist.mean.shape:
        raise ShapeError(f"sample shape {x.shape} != {dist.mean.shape}")
    diff = ops.sub(x, dist.mean)
    quad = ops.div(ops.square(diff), dist.variance)
    elem = ops.add(ops.add(quad, ops.log(dist.variance)), LOG_2PI)
    return ops.mul(_reduce_last(elem), -0.5)


def kl_diag_gaussians(q: DiagGaussian, p: DiagGaussian) -> Tensor:
    """Closed-form KL(q || p), summed over the last axis."""
    if q.mean.shape != p.mean.shape:
        raise ShapeError(f"KL dimension mismatch {q.mean.shape} vs {p.mean.shape}")
    ratio = ops.div(q.variance, p.variance)
    maha = ops.div(ops.square(ops.sub(q.mean, p.mean)), p.variance)
    elem = ops.sub(ops.add(ratio, maha), ops.add(ops.log(ratio), 1.0))
    return ops.mul(_reduce_last(elem), 0.5)


def product_of_gaussians(factors: Sequence[DiagGaussian]) -> DiagGaussian:
    """Normalized product of Gaussian factors over the same variable.

    Precisions add; the mean is the precision-weighted average. Summation
    is order independent, so reordering ``factors`` gives bit-identical output.
    """
    if not factors:
        raise ValueError("product_of_gaussians needs at least one factor")
    dims = {f.mean.shape for f in factors}
    if len(dims) != 1 or factors[0].mean.ndim != 1:
        raise ShapeError("factors must be 1-D Gaussians of equal dimension")
    if len(factors) == 1:
        return factors[0]
    mean = ops.stack([f.mean for f in factors])
    var = ops.stack([f.variance for f in factors])
    out = grouped_product(mean, var, 1)
    d = factors[0].dim
    return DiagGaussian(ops.reshape(out.mean, (d,)), ops.reshape(out.variance, (d,)))


def grouped_product(mean: Tensor, variance: Tensor, n_groups: int) -> DiagGaussian:
    """Product of Gaussians over consecutive row groups: ``(G*m, d) -> (G, d)``."""
    precision = ops.div(1.0, variance)
    prec_sum = ops.group_sum(precision, n_groups)
    weighted = ops.group_sum(ops.mul(precision, mean), n_groups)
    post_var = ops.div(1.0, prec_sum)
    return DiagGaussian(ops.mul(weighted, post_var), post_var)


def _squash_correction(u: Tensor) -> Tensor:
    # log(1 - tanh(u)^2) = 2 * (log 2 - u - softplus(-2u)), stable for large |u|
    return ops.mul(ops.sub(ops.sub(math.log(2.0), u), ops.softplus(ops.mul(u, -2.0))), 2.0)


def tanh_gaussian_sample(dist: DiagGaussian, noise) -> tuple[Tensor, Tensor]:
    """Draw ``a = tanh(u)``, ``u ~ dist``; return ``(a, log pi(a))``."""
    u = rsample(dist, noise)
    logp = ops.sub(gaussian_logprob(dist, u), _reduce_last(_squash_correction(u)))
    return ops.tanh(u), logp


def squashed_gaussian_logprob(dist: DiagGaussian, action) -> Tensor:
    """Log-density of ``tanh(u)``, ``u ~ dist``, evaluated at ``action``."""
    a = np.asarray(action.data if isinstance(action, Tensor) else action, dtype=np.float64)
    if a.shape != dist.mean.shape:
        raise ShapeError(f"action shape {a.shape} != {dist.mean.shape}")
    if (np.abs(a) >= 1.0).any():
        raise ValueError("squashed Gaussian actions must lie strictly inside (-1, 1)")
    a = np.clip(a, -1.0 + SQUASH_EPS, 1.0 - SQUASH_EPS)
    u = Tensor._wrap(np.arctanh(a))
    return ops.sub(gaussian_logprob(dist, u), _reduce_last(_squash_correction(u)))


def categorical_entropy_and_logprob(dist: Categorical, action) -> tuple[Tensor, Tensor]:
    """Entropy and log-probability of ``action`` (an index, or one per row)."""
    logp = dist.log_probs()
    ent = ops.neg(_reduce_last(ops.mul(ops.exp(logp), logp)))
    if dist.logits.ndim == 1:
        idx = int(action)
        if not 0 <= idx < dist.n:
            raise IndexError(f"action {idx} outside [0, {dist.n})")
        row = ops.reshape(logp, (1, dist.n))
        return ent, ops.reshape(ops.pick(row, [idx]), ())
    idx = np.asarray(action, dtype=np.intp)
    if idx.shape != (dist.logits.shape[0],) or idx.min() < 0 or idx.max() >= dist.n:
        raise IndexError("action indices out of range")
    return ent, ops.pick(logp, idx)
