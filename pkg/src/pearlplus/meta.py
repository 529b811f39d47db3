"""Meta-training and meta-testing.

:class:`MetaLearner` owns the train tasks, per-task replay buffers, the
networks and their optimizers. One iteration collects ``collect_passes``
passes per task (the first under a prior latent, later ones under the
posterior of the freshly collected context) and then runs
``train_steps`` gradient steps. Context for inference is always drawn from
the most recent collection pass; RL batches come from the whole buffer.
"""

from __future__ import annotations

import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np

from .agent import (
    AgentConfig,
    AgentNets,
    Batch,
    act,
    actor_loss,
    critic_loss,
    policy_forward,
    prior_critic_loss,
    value_loss,
)
from .diffmath import Adam, Tape, backward, ops, soft_update
from .distributions import rsample
from .envs import MergeConfig, MergeTaskRanges, PointConfig, TaskEnv, TaskSpec, make_env, sample_tasks, trace_row
from .inference import context_features, encode_grouped, kl_to_prior, sample_prior
from .seeding import RngStreams, stream

log = logging.getLogger(__name__)

UPDATE_ORDER = ("encoder", "actor", "critic", "prior_critic")


@dataclass
class MetaTrainConfig:
    family: str = "point"
    n_train_tasks: int = 10
    n_test_tasks: int = 5
    n_iterations: int = 10
    collect_passes: int = 2
    episodes_per_pass: int = 1
    train_steps: int = 200
    context_batch: int = 64
    rl_batch: int = 256
    lr_encoder: float = 3e-4
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    alpha: float = 0.1
    beta: float = 0.1
    latent_dim: int = 5
    hidden: tuple[int, ...] = (64, 64, 64)
    twin: bool = True
    prior_critic: bool = True
    reward_scale: float = 5.0
    discount: float = 0.99
    tau: float = 0.005
    buffer_capacity: int = 100_000
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        for k in (
            "n_train_tasks", "n_test_tasks", "collect_passes", "episodes_per_pass",
            "train_steps", "context_batch", "rl_batch", "latent_dim", "buffer_capacity",
        ):
            if int(getattr(self, k)) <= 0:
                raise ValueError(f"{k} must be positive")
        if self.n_iterations < 0:
            raise ValueError("n_iterations must be non-negative")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.family not in ("point", "merge"):
            raise ValueError(f"unknown family {self.family!r}")


# -- replay -----------------------------------------------------------------


class TaskBuffer:
    """Ring buffer of one task's transitions.

    ``begin_pass``/``end_pass`` bracket a collection pass; the transitions
    of the last completed pass form the recent region used for context.
    """

    def __init__(self, capacity: int, obs_dim: int, action_shape: tuple, discrete: bool):
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, *action_shape), dtype=np.int64 if discrete else np.float64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity)
        self.cursor = 0
        self.size = 0
        self.recent_start = 0
        self.recent_count = 0
        self._pass_start: int | None = None
        self._pass_count = 0

    def __len__(self) -> int:
        return self.size

    def begin_pass(self) -> None:
        self._pass_start = self.cursor
        self._pass_count = 0

    def add(self, obs, action, reward, next_obs, done) -> None:
        i = self.cursor
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.dones[i] = float(done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self._pass_count += 1

    def end_pass(self) -> None:
        if self._pass_start is None:
            raise RuntimeError("end_pass without begin_pass")
        self.recent_start = self._pass_start
        self.recent_count = min(self._pass_count, self.capacity)
        self._pass_start = None

    def recent_indices(self) -> np.ndarray:
        return (self.recent_start + np.arange(self.recent_count)) % self.capacity

    def sample_context(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.recent_count == 0:
            raise ValueError("no completed collection pass to draw context from")
        return self.recent_indices()[rng.integers(0, self.recent_count, n)]

    def sample_rl(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.size == 0:
            raise ValueError("empty replay buffer")
        return rng.integers(0, self.size, n)

    def state(self) -> dict:
        return {
            "obs": self.obs[: self.size].copy(), "next_obs": self.next_obs[: self.size].copy(),
            "actions": self.actions[: self.size].copy(), "rewards": self.rewards[: self.size].copy(),
            "dones": self.dones[: self.size].copy(),
            "meta": np.array([self.cursor, self.size, self.recent_start, self.recent_count]),
        }

    def load_state(self, st: dict) -> None:
        cursor, size, rs, rc = (int(x) for x in st["meta"])
        self.obs[:size] = st["obs"]
        self.next_obs[:size] = st["next_obs"]
        self.actions[:size] = st["actions"]
        self.rewards[:size] = st["rewards"]
        self.dones[:size] = st["dones"]
        self.cursor, self.size, self.recent_start, self.recent_count = cursor, size, rs, rc


# -- rollouts ---------------------------------------------------------------------


class Agent(Protocol):
    latent_dim: int

    def act(self, obs: np.ndarray, z: np.ndarray, rng, deterministic: bool): ...

    def posterior(self, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


class PolicyAgent:
    """Adapter exposing trained networks through the :class:`Agent` protocol."""

    def __init__(self, nets: AgentNets):
        self.nets = nets
        self.latent_dim = nets.cfg.latent_dim
        self.n_actions = nets.cfg.action_dim if nets.cfg.discrete else None

    def act(self, obs, z, rng, deterministic=False):
        return act(self.nets, obs, z, rng, deterministic)

    def posterior(self, features):
        post = encode_grouped(self.nets.encoder, features, 1, track=False)
        return post.mean.data[0], post.variance.data[0]


@dataclass
class Trajectory:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    z: np.ndarray
    infos: list[dict]
    trace: list[dict]

    @property
    def ret(self) -> float:
        return float(np.sum(self.rewards))

    @property
    def failure(self) -> bool:
        return bool(self.infos and self.infos[-1].get("failure", False))

    @property
    def min_braking(self) -> float | None:
        for info in self.infos:
            if info.get("min_braking") is not None:
                return float(info["min_braking"])
        return None

    def __len__(self) -> int:
        return len(self.rewards)


def collect_rollout(
    env: TaskEnv,
    agent: Agent,
    z: np.ndarray,
    rng: np.random.Generator,
    env_seed: int,
    deterministic: bool = False,
    buffer: TaskBuffer | None = None,
) -> Trajectory:
    """Run one episode with ``z`` held fixed throughout.

    Observations are divided by ``env.obs_scale``. Time-limit terminations
    are stored as non-terminal so the critic keeps bootstrapping.
    """
    z = np.asarray(z, dtype=np.float64).copy()
    obs = env.reset(env_seed) / env.obs_scale
    O, A, R, O2, D, infos, trace = [], [], [], [], [], [], []
    while True:
        a = agent.act(obs, z, rng, deterministic)
        res = env.step(a)
        nxt = res.observation / env.obs_scale
        done = res.terminal and not res.info.get("timeout", False)
        O.append(obs)
        A.append(a)
        R.append(res.reward)
        O2.append(nxt)
        D.append(float(done))
        infos.append(res.info)
        trace.append(trace_row(len(R), env.ego_state(), a, res.reward, res.terminal, res.info))
        if buffer is not None:
            buffer.add(obs, a, res.reward, nxt, done)
        obs = nxt
        if res.terminal:
            break
    return Trajectory(
        np.array(O), np.array(A), np.array(R), np.array(O2), np.array(D), z, infos, trace
    )


def _features(env: TaskEnv, trajs: Sequence[Trajectory]) -> np.ndarray:
    n_actions = env.n_actions if env.discrete else None
    return np.concatenate(
        [context_features(t.obs, t.actions, t.rewards, t.next_obs, n_actions) for t in trajs]
    )


# -- meta-training --------------------------------------------------------------


@dataclass
class EnvSettings:
    point: PointConfig = field(default_factory=PointConfig)
    merge: MergeConfig = field(default_factory=MergeConfig)
    merge_ranges: MergeTaskRanges = field(default_factory=MergeTaskRanges)


class MetaLearner:
    """PEARL+ meta-training state. ``alpha=0`` with ``prior_critic=False``
    is plain PEARL."""

    def __init__(
        self,
        cfg: MetaTrainConfig,
        env_settings: EnvSettings | None = None,
        train_tasks: Sequence[TaskSpec] | None = None,
    ):
        self.cfg = cfg
        self.env_settings = env_settings or EnvSettings()
        self.streams = RngStreams(cfg.seed)
        es = self.env_settings
        task_rng = self.streams["tasks"]
        kw = {"merge_ranges": es.merge_ranges, "point_config": es.point}
        self.train_tasks = sample_tasks(cfg.family, cfg.n_train_tasks, task_rng, **kw)
        self.test_tasks = sample_tasks(cfg.family, cfg.n_test_tasks, task_rng, **kw)
        if train_tasks is not None:
            if any(t.family != cfg.family for t in train_tasks) or not train_tasks:
                raise ValueError(f"train_tasks must be a non-empty list of {cfg.family!r} tasks")
            self.train_tasks = list(train_tasks)
        self.envs = [self.make_env(t) for t in self.train_tasks]
        env0 = self.envs[0]
        self.agent_cfg = AgentConfig(
            obs_dim=env0.obs_dim,
            action_dim=env0.n_actions,
            discrete=env0.discrete,
            latent_dim=cfg.latent_dim,
            hidden=cfg.hidden,
            twin=cfg.twin,
            prior_critic=cfg.prior_critic,
            discount=cfg.discount,
            reward_scale=cfg.reward_scale,
        )
        self.nets = AgentNets.build(self.agent_cfg, self.streams["init"])
        self.opt = {
            "encoder": Adam(self.nets.encoder_params(), lr=cfg.lr_encoder),
            "actor": Adam(self.nets.actor_params(), lr=cfg.lr_actor),
            "critic": Adam(self.nets.critic_params(), lr=cfg.lr_critic),
        }
        if cfg.prior_critic:
            self.opt["prior_critic"] = Adam(self.nets.prior_critic_params(), lr=cfg.lr_critic)
        action_shape = () if env0.discrete else (env0.n_actions,)
        self.buffers = [
            TaskBuffer(cfg.buffer_capacity, env0.obs_dim, action_shape, env0.discrete)
            for _ in self.train_tasks
        ]
        self.agent = PolicyAgent(self.nets)
        self.iteration = 0
        self.env_steps = 0
        self.curve: list[dict] = []
        self.update_log: list[str] = []

    def make_env(self, task: TaskSpec) -> TaskEnv:
        return make_env(task, self.env_settings.merge, self.env_settings.point)

    # -- collection ------------------------------------------------------------

    def _posterior_z(self, env: TaskEnv, buf: TaskBuffer, rng: np.random.Generator) -> np.ndarray:
        idx = buf.sample_context(self.streams["batch"], self.cfg.context_batch)
        feats = context_features(
            buf.obs[idx], buf.actions[idx], buf.rewards[idx], buf.next_obs[idx],
            env.n_actions if env.discrete else None,
        )
        mean, var = self.agent.posterior(feats)
        return mean + np.sqrt(var) * rng.standard_normal(len(mean))

    def collect(self) -> list[float]:
        """Collection phase for every train task; returns episode returns."""
        returns = []
        env_rng, lat_rng, pol_rng = self.streams["env"], self.streams["latent"], self.streams["policy"]
        for env, buf in zip(self.envs, self.buffers):
            for k in range(self.cfg.collect_passes):
                if k == 0:
                    z = sample_prior(lat_rng, self.cfg.latent_dim)
                else:
                    z = self._posterior_z(env, buf, lat_rng)
                buf.begin_pass()
                for _ in range(self.cfg.episodes_per_pass):
                    seed = int(env_rng.integers(2**31))
                    traj = collect_rollout(env, self.agent, z, pol_rng, seed, buffer=buf)
                    returns.append(traj.ret)
                    self.env_steps += len(traj)
                buf.end_pass()
        return returns

    # -- gradient steps ------------------------------------------------------------

    def sample_batches(self) -> tuple[np.ndarray, Batch]:
        """Context features (recent region) and RL batch (whole buffer) for all tasks."""
        cfg = self.cfg
        rng = self.streams["batch"]
        env0 = self.envs[0]
        n_actions = env0.n_actions if env0.discrete else None
        feats, parts = [], []
        for buf in self.buffers:
            ci = buf.sample_context(rng, cfg.context_batch)
            feats.append(context_features(buf.obs[ci], buf.actions[ci], buf.rewards[ci], buf.next_obs[ci], n_actions))
            ri = buf.sample_rl(rng, cfg.rl_batch)
            parts.append((buf.obs[ri], buf.actions[ri], buf.rewards[ri], buf.next_obs[ri], buf.dones[ri]))
        batch = Batch(*(np.concatenate(x) for x in zip(*parts)), n_tasks=len(self.buffers))
        return np.concatenate(feats), batch

    def train_step(self) -> dict[str, float]:
        """One gradient step over all train tasks.

        A single tape carries every loss; gradient stops make each
        parameter group see exactly the loss it is assigned:
        encoder <- critic + KL, actor <- combined actor loss,
        critics/value <- Bellman and value losses, prior critics <- prior losses.
        """
        cfg, nets = self.cfg, self.nets
        n_tasks, B = len(self.buffers), cfg.rl_batch
        feats, batch = self.sample_batches()
        rows = np.repeat(np.arange(n_tasks), B)
        noise_z = self.streams["latent"].standard_normal((n_tasks, cfg.latent_dim))
        da = self.agent_cfg.action_dim
        noise_a = None if self.agent_cfg.discrete else self.streams["policy"].standard_normal((len(batch), da))
        use_prior = cfg.alpha > 0 or cfg.prior_critic
        if use_prior:
            z0_rng = self.streams["z0"]
            # one prior draw per step, shared by every row of every task
            z0_rows = np.tile(z0_rng.standard_normal(cfg.latent_dim), (len(rows), 1))
            noise0 = None if self.agent_cfg.discrete else z0_rng.standard_normal((len(batch), da))

        out: dict[str, float] = {}
        with Tape():
            post = encode_grouped(nets.encoder, feats, n_tasks)
            z_rows = ops.take_rows(rsample(post, noise_z), rows)
            l_critic = critic_loss(batch, z_rows, nets)
            l_kl = ops.mul(ops.sum(kl_to_prior(post)), cfg.beta)
            z_bar = ops.stop_gradient(z_rows)
            pol = policy_forward(nets, batch.obs, z_bar, noise_a)
            l_actor_post = actor_loss(batch, z_bar, nets, policy=pol)
            l_value = value_loss(batch, z_bar, nets, policy=pol)
            l_actor = l_actor_post
            terms = [l_critic, l_kl, l_value]
            if use_prior:
                pol0 = policy_forward(nets, batch.obs, z0_rows, noise0)
                if cfg.alpha > 0:
                    critics = nets.q_prior if nets.q_prior else nets.q
                    l_actor_prior = actor_loss(batch, z0_rows, nets, critics=critics, policy=pol0)
                    l_actor = ops.add(l_actor_post, ops.mul(l_actor_prior, float(cfg.alpha)))
                    out["actor_prior"] = l_actor_prior.item()
                if cfg.prior_critic:
                    l_pc = prior_critic_loss(batch, z0_rows, nets)
                    l_pv = value_loss(batch, z0_rows, nets, prior=True, policy=pol0)
                    terms += [l_pc, l_pv]
                    out["prior_critic"] = l_pc.item()
                    out["prior_value"] = l_pv.item()
            grads = backward(ops.total([*terms, l_actor]))
        self._apply(grads)
        out.update(
            critic=l_critic.item(), kl=l_kl.item(), actor=l_actor.item(),
            actor_posterior=l_actor_post.item(), value=l_value.item(),
        )
        return out

    def _apply(self, grads) -> None:
        self.update_log = []
        for name in UPDATE_ORDER:
            opt = self.opt.get(name)
            if opt is None:
                continue
            opt.step(grads)
            self.update_log.append(name)
        soft_update(self.nets.v_target.parameters(), self.nets.v.parameters(), self.cfg.tau)
        if self.nets.v_prior is not None:
            soft_update(self.nets.v_prior_target.parameters(), self.nets.v_prior.parameters(), self.cfg.tau)

    def run_iteration(self) -> dict:
        returns = self.collect()
        sums: dict[str, float] = {}
        for _ in range(self.cfg.train_steps):
            for k, v in self.train_step().items():
                sums[k] = sums.get(k, 0.0) + v
        self.iteration += 1
        row = {
            "iteration": self.iteration,
            "env_steps": self.env_steps,
            "mean_train_return": float(np.mean(returns)),
        }
        for k in ("critic", "kl", "actor", "actor_posterior", "value", "actor_prior", "prior_critic", "prior_value"):
            row[f"loss_{k}"] = sums[k] / self.cfg.train_steps if k in sums else 0.0
        self.curve.append(row)
        log.info("iteration %d: return %.3f env_steps %d", self.iteration, row["mean_train_return"], self.env_steps)
        return row

    def train(self, n_iterations: int | None = None, callback=None) -> list[dict]:
        n = self.cfg.n_iterations if n_iterations is None else n_iterations
        for _ in range(n):
            row = self.run_iteration()
            if callback is not None:
                callback(self, row)
        return self.curve


# -- reference PEARL -------------------------------------------------------------


def pearl_reference_step(learner: MetaLearner) -> None:
    """Plain PEARL gradient step, one tape per parameter group.

    Draws the same random numbers in the same order as
    :meth:`MetaLearner.train_step` but differentiates each loss on its own
    tape, so it serves as an independent route for checking that the
    PEARL+ step with ``alpha=0`` and no prior critic reduces to PEARL.
    """
    cfg, nets = learner.cfg, learner.nets
    n_tasks, B = len(learner.buffers), cfg.rl_batch
    feats, batch = learner.sample_batches()
    rows = np.repeat(np.arange(n_tasks), B)
    noise_z = learner.streams["latent"].standard_normal((n_tasks, cfg.latent_dim))
    noise_a = None
    if not learner.agent_cfg.discrete:
        noise_a = learner.streams["policy"].standard_normal((len(batch), learner.agent_cfg.action_dim))

    with Tape():
        post = encode_grouped(nets.encoder, feats, n_tasks)
        z = ops.take_rows(rsample(post, noise_z), rows)
        l_q = critic_loss(batch, z, nets)
        l_kl = ops.mul(ops.sum(kl_to_prior(post)), cfg.beta)
        g_q = backward(ops.add(l_q, l_kl))
    z_np = z.data.copy()

    with Tape():
        g_pi = backward(actor_loss(batch, z_np, nets, noise_a))
    with Tape():
        pol = policy_forward(nets, batch.obs, z_np, noise_a, track=False)
        g_v = backward(value_loss(batch, z_np, nets, policy=pol))

    learner.opt["encoder"].step(g_q)
    learner.opt["actor"].step(g_pi)
    learner.opt["critic"].step({**g_q, **g_v})
    soft_update(nets.v_target.parameters(), nets.v.parameters(), cfg.tau)


# -- meta-testing --------------------------------------------------------------------


@dataclass
class BudgetResult:
    task: int
    budget: int
    returns: list[float]
    failures: list[bool]
    min_braking: list[float | None]

    @property
    def mean_return(self) -> float:
        return float(np.mean(self.returns))

    @property
    def failure_rate(self) -> float:
        return float(np.mean(self.failures))


@dataclass
class AdaptationReport:
    results: list[BudgetResult]
    budgets: list[int]
    family: str
    traces: list[dict] = field(default_factory=list)

    def by_budget(self, budget: int) -> list[BudgetResult]:
        return [r for r in self.results if r.budget == budget]

    def failure_rate(self, budget: int) -> float:
        rs = self.by_budget(budget)
        n = sum(len(r.failures) for r in rs)
        return sum(sum(r.failures) for r in rs) / n

    def mean_return(self, budget: int) -> float:
        return float(np.mean([r.mean_return for r in self.by_budget(budget)]))

    def min_braking_histogram(self, budget: int, bins: Sequence[float] = (-np.inf, -2, -1, 0, 1, 2, 4, np.inf)) -> dict:
        vals = [b for r in self.by_budget(budget) for b in r.min_braking if b is not None]
        counts, _ = np.histogram(vals, bins=np.asarray(bins, dtype=float))
        return {"edges": [float(b) for b in bins], "counts": [int(c) for c in counts]}

    def rows(self) -> list[dict]:
        return [
            {
                "task": r.task, "budget": r.budget, "n_rollouts": len(r.returns),
                "mean_return": r.mean_return, "failure_rate": r.failure_rate,
                "failures": int(sum(r.failures)),
            }
            for r in sorted(self.results, key=lambda r: (r.task, r.budget))
        ]

    def summary(self) -> dict:
        out = {"family": self.family, "budgets": {}}
        for b in self.budgets:
            entry = {"mean_return": self.mean_return(b), "failure_rate": self.failure_rate(b)}
            if self.family == "merge":
                entry["min_braking_histogram"] = self.min_braking_histogram(b)
            out["budgets"][str(b)] = entry
        return out


def _test_task(j, env, agent, budgets, n_eval, root_seed, deterministic):
    rng = stream(root_seed, "eval", j)
    results, traces = [], []
    explored: list[Trajectory] = []
    for budget in sorted(budgets):
        while len(explored) < budget:
            if explored:
                mean, var = agent.posterior(_features(env, explored))
                z = mean + np.sqrt(var) * rng.standard_normal(len(mean))
            else:
                z = sample_prior(rng, agent.latent_dim)
            explored.append(collect_rollout(env, agent, z, rng, int(rng.integers(2**31))))
        if explored:
            mean, var = agent.posterior(_features(env, explored))
        res = BudgetResult(j, budget, [], [], [])
        for k in range(n_eval):
            if budget == 0:
                z = sample_prior(rng, agent.latent_dim)
            else:
                z = mean + np.sqrt(var) * rng.standard_normal(len(mean))
            traj = collect_rollout(env, agent, z, rng, int(rng.integers(2**31)), deterministic)
            res.returns.append(traj.ret)
            res.failures.append(traj.failure)
            res.min_braking.append(traj.min_braking)
            for row in traj.trace:
                traces.append({"task": j, "budget": budget, "rollout": k, **row})
        results.append(res)
    return results, traces


def meta_test(
    agent: Agent,
    envs: Sequence[TaskEnv],
    budgets: Sequence[int] = (0, 1, 3, 5),
    n_eval_rollouts: int = 10,
    root_seed: int = 0,
    deterministic: bool = True,
    workers: int = 1,
    family: str | None = None,
) -> AdaptationReport:
    """Adaptation curve on held-out tasks.

    For budget ``n`` the agent first gathers ``n`` exploration episodes
    (prior latent for the first, posterior of everything gathered so far
    for the rest), then runs ``n_eval_rollouts`` evaluation episodes with
    latents drawn from the posterior; budget 0 evaluates under the prior.
    Each task has its own random stream, so results do not depend on
    ``workers``.
    """
    if n_eval_rollouts <= 0:
        raise ValueError("n_eval_rollouts must be positive")
    budgets = sorted(set(int(b) for b in budgets))
    if not budgets or budgets[0] < 0:
        raise ValueError("budgets must be non-negative integers")
    args = [(j, env, agent, budgets, n_eval_rollouts, root_seed, deterministic) for j, env in enumerate(envs)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(lambda a: _test_task(*a), args))
    else:
        parts = [_test_task(*a) for a in args]
    results, traces = [], []
    for r, t in parts:
        results.extend(r)
        traces.extend(t)
    if family is None:
        family = "merge" if envs and envs[0].discrete else "point"
    return AdaptationReport(results, budgets, family, traces)


def recount_from_traces(traces: Sequence[dict]) -> dict[tuple[int, int], tuple[int, int]]:
    """``(task, budget) -> (failures, rollouts)`` from raw per-step trace rows."""
    last: dict[tuple[int, int, int], dict] = {}
    for row in traces:
        key = (int(row["task"]), int(row["budget"]), int(row["rollout"]))
        last[key] = row
    out: dict[tuple[int, int], list[int]] = {}
    for (task, budget, _), row in sorted(last.items()):
        acc = out.setdefault((task, budget), [0, 0])
        acc[0] += int(row["failure"])
        acc[1] += 1
    return {k: (v[0], v[1]) for k, v in out.items()}


# -- alpha sweep -------------------------------------------------------------------------


@dataclass
class SweepRun:
    alpha: float
    seed: int
    before_failure: float
    after_failure: float
    before_return: float
    after_return: float
    curve: list[dict]
    report: AdaptationReport


def pearl_config(cfg: MetaTrainConfig) -> MetaTrainConfig:
    return replace(cfg, alpha=0.0, prior_critic=False)


def run_experiment(
    cfg: MetaTrainConfig,
    env_settings: EnvSettings | None = None,
    budgets: Sequence[int] = (0, 1, 3, 5),
    n_eval_rollouts: int = 10,
    workers: int = 1,
) -> tuple[MetaLearner, AdaptationReport]:
    learner = MetaLearner(cfg, env_settings)
    learner.train()
    envs = [learner.make_env(t) for t in learner.test_tasks]
    report = meta_test(learner.agent, envs, budgets, n_eval_rollouts, root_seed=cfg.seed, workers=workers,
                       family=cfg.family)
    return learner, report


def alpha_sweep(
    cfg: MetaTrainConfig,
    alphas: Sequence[float],
    seeds: Sequence[int],
    env_settings: EnvSettings | None = None,
    budgets: Sequence[int] = (0, 1, 3, 5),
    n_eval_rollouts: int = 10,
    workers: int = 1,
    on_run=None,
) -> tuple[list[SweepRun], list[dict]]:
    """Train and meta-test once per ``(alpha, seed)``.

    ``alpha == 0`` runs plain PEARL (no prior critic). Returns the raw runs
    and one aggregated row per alpha holding medians over seeds.
    """
    if not alphas or not seeds:
        raise ValueError("need at least one alpha and one seed")
    if any(a < 0 for a in alphas):
        raise ValueError("alpha must be non-negative")
    budgets = sorted(set(budgets))
    runs = []
    for a in alphas:
        for s in seeds:
            run_cfg = replace(cfg, alpha=float(a), seed=int(s))
            if a == 0:
                run_cfg = pearl_config(run_cfg)
            learner, report = run_experiment(run_cfg, env_settings, budgets, n_eval_rollouts, workers)
            run = SweepRun(
                float(a), int(s),
                report.failure_rate(budgets[0]), report.failure_rate(budgets[-1]),
                report.mean_return(budgets[0]), report.mean_return(budgets[-1]),
                learner.curve, report,
            )
            runs.append(run)
            if on_run is not None:
                on_run(run, learner)
    return runs, aggregate_sweep(runs)


def aggregate_sweep(runs: Sequence[SweepRun]) -> list[dict]:
    table = []
    for a in sorted({r.alpha for r in runs}):
        rs = [r for r in runs if r.alpha == a]
        table.append(
            {
                "alpha": a,
                "n_seeds": len(rs),
                "before_failure": statistics.median(r.before_failure for r in rs),
                "after_failure": statistics.median(r.after_failure for r in rs),
                "before_return": statistics.median(r.before_return for r in rs),
                "after_return": statistics.median(r.after_return for r in rs),
            }
        )
    return table


def config_dict(cfg: MetaTrainConfig) -> dict:
    d = asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    return d
