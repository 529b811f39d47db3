"""Actor-critic heads and the losses of one meta-training step.

All losses are sums over tasks of per-task batch means: with ``n_tasks``
tasks of ``B`` rows each stacked into ``(n_tasks * B, .)`` arrays, a loss
equals the sum of the per-task losses. The latent ``z`` arrives already
expanded to one row per sample.

Entropy enters with a fixed unit temperature; rewards are multiplied by
``reward_scale`` instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .diffmath import Mlp, Tensor, forward_mlp, ops
from .distributions import DiagGaussian, tanh_gaussian_sample
from .inference import make_encoder

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0


@dataclass
class Batch:
    """Stacked transitions from ``n_tasks`` equally sized task batches."""

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    n_tasks: int = 1

    def __post_init__(self):
        n = len(self.obs)
        if n == 0:
            raise ValueError("empty batch")
        if not (len(self.actions) == len(self.rewards) == len(self.next_obs) == len(self.dones) == n):
            raise ValueError("batch arrays differ in length")
        if n % self.n_tasks:
            raise ValueError("batch rows not divisible by n_tasks")

    def __len__(self) -> int:
        return len(self.obs)

    @property
    def per_task(self) -> int:
        return len(self.obs) // self.n_tasks


@dataclass
class AgentConfig:
    obs_dim: int
    action_dim: int  # discrete: number of actions
    discrete: bool
    latent_dim: int = 5
    hidden: tuple[int, ...] = (64, 64, 64)
    twin: bool = True
    prior_critic: bool = True
    discount: float = 0.99
    reward_scale: float = 5.0


@dataclass
class AgentNets:
    """Actor, critics, value heads and the context encoder."""

    cfg: AgentConfig
    encoder: Mlp
    actor: Mlp
    q: list[Mlp]
    v: Mlp
    v_target: Mlp
    q_prior: list[Mlp] = field(default_factory=list)
    v_prior: Mlp | None = None
    v_prior_target: Mlp | None = None

    @classmethod
    def build(cls, cfg: AgentConfig, rng: np.random.Generator) -> AgentNets:
        ds, da, dz, h = cfg.obs_dim, cfg.action_dim, cfg.latent_dim, tuple(cfg.hidden)
        enc = make_encoder(ds, da, dz, h, rng)
        actor_out = da if cfg.discrete else 2 * da
        actor = Mlp([ds + dz, *h, actor_out], rng=rng, name="actor")

        def critic(name):
            if cfg.discrete:
                return Mlp([ds + dz, *h, da], rng=rng, name=name)
            return Mlp([ds + da + dz, *h, 1], rng=rng, name=name)

        n_q = 2 if cfg.twin else 1
        q = [critic(f"q{i + 1}") for i in range(n_q)]
        v = Mlp([ds + dz, *h, 1], rng=rng, name="v")
        v_target = Mlp([ds + dz, *h, 1], rng=rng, name="v_target")
        v_target.set_arrays(v.get_arrays())
        nets = cls(cfg, enc, actor, q, v, v_target)
        if cfg.prior_critic:
            nets.q_prior = [critic(f"q_prior{i + 1}") for i in range(n_q)]
            nets.v_prior = Mlp([ds + dz, *h, 1], rng=rng, name="v_prior")
            nets.v_prior_target = Mlp([ds + dz, *h, 1], rng=rng, name="v_prior_target")
            nets.v_prior_target.set_arrays(nets.v_prior.get_arrays())
        return nets

    def named_networks(self) -> dict[str, Mlp]:
        out = {"encoder": self.encoder, "actor": self.actor}
        for m in self.q:
            out[m.name] = m
        out["v"] = self.v
        out["v_target"] = self.v_target
        for m in self.q_prior:
            out[m.name] = m
        if self.v_prior is not None:
            out["v_prior"] = self.v_prior
            out["v_prior_target"] = self.v_prior_target
        return out

    # parameter groups updated by separate optimizers
    def encoder_params(self) -> list[Tensor]:
        return self.encoder.parameters()

    def actor_params(self) -> list[Tensor]:
        return self.actor.parameters()

    def critic_params(self) -> list[Tensor]:
        return [p for m in self.q for p in m.parameters()] + self.v.parameters()

    def prior_critic_params(self) -> list[Tensor]:
        if not self.q_prior:
            return []
        return [p for m in self.q_prior for p in m.parameters()] + self.v_prior.parameters()


@dataclass
class PolicyOutput:
    """Policy evaluated on a batch.

    Continuous: ``actions`` (reparameterized, tanh-squashed) and ``logp``.
    Discrete: ``log_probs`` of shape ``(n, n_actions)``.
    """

    actions: Tensor | None = None
    logp: Tensor | None = None
    log_probs: Tensor | None = None


def _cat(*xs) -> Tensor:
    return ops.concat([x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=np.float64)) for x in xs], axis=1)


def _as_z(z) -> Tensor:
    return z if isinstance(z, Tensor) else Tensor._wrap(np.asarray(z, dtype=np.float64))


def policy_forward(nets: AgentNets, obs, z, noise=None, track: bool = True) -> PolicyOutput:
    """Evaluate pi(. | s, z). ``noise`` (standard normal, ``(n, action_dim)``)
    is required for continuous actions."""
    out = forward_mlp(nets.actor, _cat(obs, z), track=track)
    if nets.cfg.discrete:
        return PolicyOutput(log_probs=ops.log_softmax(out))
    da = nets.cfg.action_dim
    mean = ops.columns(out, 0, da)
    log_std = ops.clip(ops.columns(out, da, 2 * da), LOG_STD_MIN, LOG_STD_MAX)
    dist = DiagGaussian(mean, ops.exp(ops.mul(log_std, 2.0)))
    if noise is None:
        raise ValueError("continuous policy needs standard-normal noise")
    a, logp = tanh_gaussian_sample(dist, noise)
    return PolicyOutput(actions=a, logp=logp)


def q_values(critic: Mlp, obs, actions, z, discrete: bool, track: bool = True) -> Tensor:
    """Q(s, a, z) per row. Discrete critics output one column per action; the
    full ``(n, n_actions)`` matrix is returned when ``actions`` is None."""
    if discrete:
        out = forward_mlp(critic, _cat(obs, z), track=track)
        if actions is None:
            return out
        return ops.pick(out, np.asarray(actions, dtype=np.intp))
    return ops.reshape(forward_mlp(critic, _cat(obs, actions, z), track=track), (len(obs),))


def _min_over(critics: Sequence[Mlp], obs, actions, z, discrete: bool) -> Tensor:
    # critics act as constants here: gradients reach the action input only
    qs = [q_values(c, obs, actions, z, discrete, track=False) for c in critics]
    out = qs[0]
    for q in qs[1:]:
        out = ops.minimum(out, q)
    return out


def _task_sum_of_means(per_row: Tensor, batch: Batch) -> Tensor:
    return ops.mul(ops.sum(per_row), 1.0 / batch.per_task)


def _bellman_loss(batch: Batch, z, critics: Sequence[Mlp], value_target: Mlp, cfg: AgentConfig) -> Tensor:
    if len(batch) == 0:
        raise ValueError("empty batch")
    z = _as_z(z)
    z_bar = ops.stop_gradient(z)
    v_next = forward_mlp(value_target, _cat(batch.next_obs, z_bar), track=False).data.reshape(-1)
    target = cfg.reward_scale * batch.rewards + (1.0 - batch.dones) * cfg.discount * v_next
    target = Tensor._wrap(target)
    losses = []
    for c in critics:
        q = q_values(c, batch.obs, batch.actions, z, cfg.discrete)
        losses.append(_task_sum_of_means(ops.square(ops.sub(q, target)), batch))
    return ops.mul(ops.total(losses), 1.0 / len(losses))


def critic_loss(batch: Batch, z, nets: AgentNets) -> Tensor:
    """Bellman residual of the posterior critics against the target value net.

    ``z`` may be tracked (encoder gradients flow through it); the target
    side uses a gradient-stopped copy. Twin critics are averaged.
    """
    return _bellman_loss(batch, z, nets.q, nets.v_target, nets.cfg)


def prior_critic_loss(batch: Batch, z0, nets: AgentNets) -> Tensor:
    """Bellman residual of the prior-context critics. ``z0`` is a plain
    array, so no gradient can reach the encoder."""
    if not nets.q_prior:
        raise ValueError("prior critic is disabled for these networks")
    z0 = Tensor._wrap(np.asarray(z0.data if isinstance(z0, Tensor) else z0, dtype=np.float64))
    return _bellman_loss(batch, z0, nets.q_prior, nets.v_prior_target, nets.cfg)


def actor_loss(
    batch: Batch,
    z,
    nets: AgentNets,
    noise=None,
    critics: Sequence[Mlp] | None = None,
    gradient_stop_z: bool = True,
    policy: PolicyOutput | None = None,
) -> Tensor:
    """E_s[ E_{a~pi}[log pi(a|s,z) - Q(s,a,z)] ], summed over tasks.

    Discrete policies take the expectation over actions exactly.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    critics = nets.q if critics is None else critics
    z = _as_z(z)
    zc = ops.stop_gradient(z) if gradient_stop_z else z
    pol = policy if policy is not None else policy_forward(nets, batch.obs, zc, noise)
    if nets.cfg.discrete:
        qmat = _min_over(critics, batch.obs, None, zc, True)
        per_row = ops.sum(ops.mul(ops.exp(pol.log_probs), ops.sub(pol.log_probs, qmat)), axis=1)
    else:
        q = _min_over(critics, batch.obs, pol.actions, zc, False)
        per_row = ops.sub(pol.logp, q)
    return _task_sum_of_means(per_row, batch)


def combined_actor_loss(
    batch: Batch,
    z,
    z0,
    alpha: float,
    nets: AgentNets,
    noise=None,
    noise0=None,
) -> Tensor:
    """Posterior actor loss plus ``alpha`` times the prior-context actor loss.

    The prior branch is scored by the prior critics when present. At
    ``alpha == 0`` the posterior loss is returned unchanged.
    """
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    post = actor_loss(batch, z, nets, noise)
    if alpha == 0:
        return post
    z0 = Tensor._wrap(np.asarray(z0.data if isinstance(z0, Tensor) else z0, dtype=np.float64))
    critics = nets.q_prior if nets.q_prior else nets.q
    prior = actor_loss(batch, z0, nets, noise0, critics=critics)
    return ops.add(post, ops.mul(prior, float(alpha)))


def value_loss(
    batch: Batch,
    z,
    nets: AgentNets,
    noise=None,
    prior: bool = False,
    policy: PolicyOutput | None = None,
) -> Tensor:
    """Squared error of V(s, z) against the soft value E_pi[Q - log pi].

    ``prior=True`` trains the prior-context value head against the prior
    critics.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    if prior:
        if nets.v_prior is None:
            raise ValueError("prior critic is disabled for these networks")
        vnet, critics = nets.v_prior, nets.q_prior
    else:
        vnet, critics = nets.v, nets.q
    z_bar = ops.stop_gradient(_as_z(z))
    target = soft_value_target(batch, z_bar, nets, critics, noise, policy)
    v = ops.reshape(forward_mlp(vnet, _cat(batch.obs, z_bar)), (len(batch),))
    return _task_sum_of_means(ops.square(ops.sub(v, target)), batch)


def soft_value_target(batch, z_bar, nets, critics, noise=None, policy=None) -> Tensor:
    pol = policy if policy is not None else policy_forward(nets, batch.obs, z_bar, noise, track=False)
    if nets.cfg.discrete:
        lp = pol.log_probs.data
        q = _min_over(critics, batch.obs, None, z_bar, True).data
        target = (np.exp(lp) * (q - lp)).sum(axis=1)
    else:
        q = _min_over(critics, batch.obs, Tensor._wrap(pol.actions.data), z_bar, False).data
        target = q - pol.logp.data
    return Tensor._wrap(target)


# -- acting -------------------------------------------------------------------


def act(nets: AgentNets, obs: np.ndarray, z: np.ndarray, rng: np.random.Generator | None, deterministic: bool = False):
    """Choose an action for a single normalized observation.

    Returns an index for discrete policies and a vector in (-1, 1)^d otherwise.
    """
    x = Tensor._wrap(np.concatenate([obs, z])[None, :])
    out = forward_mlp(nets.actor, x, track=False).data[0]
    if nets.cfg.discrete:
        if deterministic:
            return int(np.argmax(out))
        p = np.exp(out - out.max())
        p /= p.sum()
        return int(rng.choice(len(p), p=p))
    da = nets.cfg.action_dim
    mean = out[:da]
    if deterministic:
        return np.tanh(mean)
    log_std = np.clip(out[da:], LOG_STD_MIN, LOG_STD_MAX)
    return np.tanh(mean + np.exp(log_std) * rng.standard_normal(da))
