"""Latent task inference: per-transition Gaussian factors combined into
q(z | c), the unit-Gaussian prior, and the KL regularizer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffmath import Mlp, Tensor, forward_mlp, ops
from .distributions import DiagGaussian, grouped_product, kl_diag_gaussians

LatentPosterior = DiagGaussian

MIN_VARIANCE = 1e-7


@dataclass
class ContextBatch:
    """Transitions ``(s, a, r, s')`` from a single task.

    ``actions`` holds integer indices for discrete action spaces and
    vectors otherwise.
    """

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    task_id: int = 0
    source: str = "recent"

    def __post_init__(self):
        n = len(self.obs)
        if not (len(self.actions) == len(self.rewards) == len(self.next_obs) == n):
            raise ValueError("context arrays differ in length")

    def __len__(self) -> int:
        return len(self.obs)

    def permuted(self, perm) -> ContextBatch:
        perm = np.asarray(perm)
        return ContextBatch(
            self.obs[perm], self.actions[perm], self.rewards[perm], self.next_obs[perm],
            self.task_id, self.source,
        )


def context_dim(obs_dim: int, action_dim: int) -> int:
    return 2 * obs_dim + action_dim + 1


def context_features(obs, actions, rewards, next_obs, n_actions: int | None = None) -> np.ndarray:
    """Row-wise ``[s, a, r, s']``; discrete actions become one-hot when
    ``n_actions`` is given."""
    obs = np.asarray(obs, dtype=np.float64)
    if n_actions is not None:
        idx = np.asarray(actions, dtype=np.intp).reshape(-1)
        a = np.zeros((len(idx), n_actions))
        a[np.arange(len(idx)), idx] = 1.0
    else:
        a = np.asarray(actions, dtype=np.float64).reshape(len(obs), -1)
    r = np.asarray(rewards, dtype=np.float64).reshape(-1, 1)
    return np.concatenate([obs, a, r, np.asarray(next_obs, dtype=np.float64)], axis=1)


def make_encoder(
    obs_dim: int,
    action_dim: int,
    latent_dim: int,
    hidden: tuple[int, ...] = (64, 64, 64),
    rng: np.random.Generator | None = None,
) -> Mlp:
    """Encoder network emitting ``[mean, pre-softplus variance]`` per transition.

    Rows are computed independently of their position so the posterior is
    exactly permutation invariant.
    """
    dims = [context_dim(obs_dim, action_dim), *hidden, 2 * latent_dim]
    return Mlp(dims, rng=rng, exact=True, name="encoder")


def encode_factors(encoder: Mlp, features, track: bool = True) -> DiagGaussian:
    """Per-transition Gaussian factors, shape ``(n, d_z)``."""
    out = forward_mlp(encoder, features, track=track)
    d_z = encoder.out_dim // 2
    mean = ops.columns(out, 0, d_z)
    var = ops.add(ops.softplus(ops.columns(out, d_z, 2 * d_z)), MIN_VARIANCE)
    return DiagGaussian(mean, var)


def encode_grouped(encoder: Mlp, features, n_tasks: int, track: bool = True) -> DiagGaussian:
    """Posteriors for ``n_tasks`` stacked, equally sized context blocks."""
    features = features if isinstance(features, Tensor) else Tensor._wrap(np.asarray(features, dtype=np.float64))
    if features.shape[0] == 0:
        raise ValueError("empty context: sample the prior instead")
    f = encode_factors(encoder, features, track=track)
    return grouped_product(f.mean, f.variance, n_tasks)


def encode_posterior(ctx: ContextBatch, encoder: Mlp, n_actions: int | None = None, track: bool = True) -> LatentPosterior:
    """q(z | c) for one task's context, as a 1-D Gaussian over z."""
    if len(ctx) == 0:
        raise ValueError("empty context: sample the prior instead")
    feats = context_features(ctx.obs, ctx.actions, ctx.rewards, ctx.next_obs, n_actions)
    post = encode_grouped(encoder, feats, 1, track=track)
    d_z = encoder.out_dim // 2
    return DiagGaussian(ops.reshape(post.mean, (d_z,)), ops.reshape(post.variance, (d_z,)))


def sample_prior(rng: np.random.Generator, latent_dim: int) -> np.ndarray:
    """z ~ N(0, I)."""
    return rng.standard_normal(latent_dim)


def standard_prior(latent_dim: int) -> LatentPosterior:
    return DiagGaussian.standard(latent_dim)


def kl_to_prior(post: LatentPosterior) -> Tensor:
    """KL(post || N(0, I)), per row for batched posteriors."""
    shape = post.mean.shape
    prior = DiagGaussian(Tensor._wrap(np.zeros(shape)), Tensor._wrap(np.ones(shape)))
    return kl_diag_gaussians(post, prior)
