"""Planar point robot that must track a task-specific target velocity.

A double integrator with bounded acceleration. Leaving the health box
(position or speed too large) ends the episode, playing the role of the
unhealthy-pose termination of legged locomotion tasks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import EnvError, StepResult, TaskEnv, TaskSpec


@dataclass(frozen=True)
class PointConfig:
    dt: float = 0.1
    horizon: int = 100
    accel_scale: float = 2.0
    max_position: float = 50.0
    max_speed: float = 10.0
    unhealthy_penalty: float = -50.0
    init_noise: float = 0.1
    target_low: float = -3.0
    target_high: float = 3.0
    dim: int = 2


class PointVelocityEnv(TaskEnv):
    discrete = False

    def __init__(self, task: TaskSpec, config: PointConfig = PointConfig()):
        if task.family != "point":
            raise ValueError("PointVelocityEnv needs a point task")
        if len(task.target_velocity) != config.dim:
            raise ValueError("target velocity dimension mismatch")
        self.task = task
        self.cfg = config
        self.target = np.asarray(task.target_velocity, dtype=np.float64)
        self.obs_dim = 2 * config.dim
        self.n_actions = config.dim
        self.horizon = config.horizon
        self.obs_scale = np.concatenate(
            [np.full(config.dim, config.max_position), np.full(config.dim, config.max_speed)]
        )
        self.pos = np.zeros(config.dim)
        self.vel = np.zeros(config.dim)
        self.t = 0
        self.done = True

    def _obs(self) -> np.ndarray:
        return np.concatenate([self.pos, self.vel])

    def reset(self, seed: int | None = None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        n = self.cfg.init_noise
        self.pos = rng.uniform(-n, n, self.cfg.dim)
        self.vel = rng.uniform(-n, n, self.cfg.dim)
        self.t = 0
        self.done = False
        return self._obs()

    def healthy(self) -> bool:
        return bool(
            np.linalg.norm(self.pos) <= self.cfg.max_position
            and np.linalg.norm(self.vel) <= self.cfg.max_speed
        )

    def step(self, action) -> StepResult:
        if self.done:
            raise EnvError("step() called on a terminated episode; call reset()")
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.shape != (self.cfg.dim,) or not np.isfinite(a).all():
            raise ValueError(f"action must be a finite vector of length {self.cfg.dim}")
        a = np.clip(a, -1.0, 1.0) * self.cfg.accel_scale
        self.vel = self.vel + a * self.cfg.dt
        self.pos = self.pos + self.vel * self.cfg.dt
        self.t += 1
        reward = -float(np.linalg.norm(self.vel - self.target))
        unhealthy = not self.healthy()
        timeout = self.t >= self.cfg.horizon
        if unhealthy:
            reward += self.cfg.unhealthy_penalty
        self.done = unhealthy or timeout
        info = {
            "unhealthy": unhealthy,
            "crashed": False,
            "merged": False,
            "timeout": timeout and not unhealthy,
            "failure": unhealthy,
            "min_braking": None,
        }
        return StepResult(self._obs(), reward, self.done, info)

    def ego_state(self):
        # traces have planar columns; a 1-D robot reports y = vy = 0
        pos = np.zeros(2)
        vel = np.zeros(2)
        n = min(self.cfg.dim, 2)
        pos[:n] = self.pos[:n]
        vel[:n] = self.vel[:n]
        return (float(pos[0]), float(pos[1]), float(vel[0]), float(vel[1]))
