"""scikit-learn style wrapper around :class:`~pearlplus.meta.MetaLearner`.

``fit`` takes a matrix of task parameters (one row per train task),
``transform`` maps context transitions to per-transition latent factors,
``predict`` returns deterministic actions for observations.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .envs import TaskSpec
from .inference import encode_factors, encode_grouped
from .meta import MetaLearner, MetaTrainConfig, meta_test


def tasks_from_array(X, family: str) -> list[TaskSpec]:
    """Rows of ``X`` as task specs: ``[density, speed_mph]`` for merge,
    the target velocity for point."""
    X = check_array(X, dtype=np.float64)
    if family == "merge":
        if X.shape[1] != 2:
            raise ValueError(f"merge tasks need 2 columns (density, speed_mph), got {X.shape[1]}")
        return [TaskSpec("merge", density=float(d), speed_mph=float(s)) for d, s in X]
    if family == "point":
        return [TaskSpec("point", target_velocity=tuple(float(v) for v in row)) for row in X]
    raise ValueError(f"unknown family {family!r}")


class PearlPlus(BaseEstimator):
    """Meta-trained agent with a safety-regularized prior policy.

    Constructor arguments mirror :class:`MetaTrainConfig`; ``alpha=0`` with
    ``prior_critic=False`` gives plain PEARL.
    """

    def __init__(
        self,
        family: str = "point",
        n_iterations: int = 10,
        collect_passes: int = 2,
        train_steps: int = 200,
        context_batch: int = 64,
        rl_batch: int = 256,
        alpha: float = 0.1,
        beta: float = 0.1,
        latent_dim: int = 5,
        hidden: tuple = (64, 64, 64),
        prior_critic: bool = True,
        learning_rate: float = 3e-4,
        n_test_tasks: int = 5,
        random_state: int = 0,
    ):
        self.family = family
        self.n_iterations = n_iterations
        self.collect_passes = collect_passes
        self.train_steps = train_steps
        self.context_batch = context_batch
        self.rl_batch = rl_batch
        self.alpha = alpha
        self.beta = beta
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.prior_critic = prior_critic
        self.learning_rate = learning_rate
        self.n_test_tasks = n_test_tasks
        self.random_state = random_state

    def _config(self, n_tasks: int) -> MetaTrainConfig:
        lr = self.learning_rate
        return MetaTrainConfig(
            family=self.family, n_train_tasks=n_tasks, n_test_tasks=self.n_test_tasks,
            n_iterations=self.n_iterations, collect_passes=self.collect_passes,
            train_steps=self.train_steps, context_batch=self.context_batch, rl_batch=self.rl_batch,
            lr_encoder=lr, lr_actor=lr, lr_critic=lr, alpha=self.alpha, beta=self.beta,
            latent_dim=self.latent_dim, hidden=tuple(self.hidden), prior_critic=self.prior_critic,
            seed=self.random_state,
        )

    def fit(self, X, y=None):
        tasks = tasks_from_array(X, self.family)
        self.learner_ = MetaLearner(self._config(len(tasks)), train_tasks=tasks)
        self.learner_.train()
        env = self.learner_.envs[0]
        self.n_features_in_ = env.obs_dim
        self.latent_dim_ = self.latent_dim
        self.training_curve_ = list(self.learner_.curve)
        return self

    def _obs(self, X) -> np.ndarray:
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} observation features, got {X.shape[1]}")
        return X

    def transform(self, X):
        """Per-transition latent factors ``[mean, variance]`` of context rows
        ``[s, a, r, s']`` (discrete actions one-hot)."""
        check_is_fitted(self, "learner_")
        X = check_array(X, dtype=np.float64)
        f = encode_factors(self.learner_.nets.encoder, X, track=False)
        return np.hstack([f.mean.data, f.variance.data])

    def posterior(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Mean and variance of q(z | context) for context rows ``X``."""
        check_is_fitted(self, "learner_")
        X = check_array(X, dtype=np.float64)
        post = encode_grouped(self.learner_.nets.encoder, X, 1, track=False)
        return post.mean.data[0], post.variance.data[0]

    def predict(self, X, z=None):
        """Deterministic actions for normalized observations ``X`` under
        latent ``z`` (the prior mean when omitted)."""
        check_is_fitted(self, "learner_")
        X = self._obs(X)
        z = np.zeros(self.latent_dim_) if z is None else np.asarray(z, dtype=np.float64)
        if z.shape != (self.latent_dim_,):
            raise ValueError(f"z must have shape ({self.latent_dim_},)")
        return np.array([self.learner_.agent.act(x, z, None, deterministic=True) for x in X])

    def evaluate(self, budgets=(0, 1, 3, 5), n_eval_rollouts: int = 10):
        """Meta-test on the held-out tasks drawn at fit time."""
        check_is_fitted(self, "learner_")
        envs = [self.learner_.make_env(t) for t in self.learner_.test_tasks]
        return meta_test(self.learner_.agent, envs, budgets, n_eval_rollouts, root_seed=self.random_state,
                         family=self.family)
