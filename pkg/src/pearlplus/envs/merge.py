"""Single-lane highway with an on-ramp.

The ego vehicle starts on the ramp and must change into the main lane
inside the merging area. Main-lane vehicles follow IDM; the main-lane
vehicle right behind the ego switches to Hidas courtesy yielding while the
ego is still on the ramp.

Positions are front-bumper longitudinal coordinates in metres.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .base import EnvError, StepResult, TaskEnv, TaskSpec
from .traffic import (
    HidasDecision,
    HidasParams,
    IdmParams,
    braking_between,
    hidas_decision,
    idm_accel,
    idm_accel_array,
)

ACCEL, DECEL, CRUISE, LEFT, RIGHT = range(5)
ACTION_NAMES = ("accelerate", "decelerate", "cruise", "left_lc", "right_lc")
N_NEIGHBORS = 4
OBS_DIM = 4 + 5 * N_NEIGHBORS


@dataclass(frozen=True)
class RewardConfig:
    """Weights of the merge reward.

    The speed and spacing weights are penalties (negative); ``gamma_r``
    multiplies the rear vehicle's deceleration (a non-positive number) at
    the merge step.
    """

    alpha_r: float = -0.1
    beta_r: float = -0.01
    gamma_r: float = 0.1
    r_collision: float = -200.0
    r_action: float = -0.05
    ramp_end_penalty: float | None = None  # defaults to r_collision / 2

    def __post_init__(self):
        if not self.r_collision < 0:
            raise ValueError("r_collision must be negative")

    @property
    def ramp_penalty(self) -> float:
        return self.r_collision / 2.0 if self.ramp_end_penalty is None else self.ramp_end_penalty

    def action_cost(self, action: int) -> float:
        return 0.0 if action == CRUISE else self.r_action


@dataclass(frozen=True)
class MergeConfig:
    dt: float = 0.1
    horizon: int = 200
    lane_width: float = 3.5
    vehicle_length: float = 4.5
    merge_start: float = 80.0
    ramp_end: float = 280.0
    sensing_range: float = 100.0
    spawn_upstream: float = -200.0
    spawn_downstream: float = 600.0
    spacing_jitter: float = 0.2
    speed_jitter: float = 0.05
    ego_speed_ratio: float = 0.8
    ego_accel: float = 1.5
    idm: IdmParams = IdmParams()
    hidas: HidasParams = HidasParams()
    reward: RewardConfig = RewardConfig()


def merge_reward(
    v_x: float,
    v_target: float,
    dx_front: float | None,
    density: float,
    action: int,
    crashed: bool,
    ramp_failed: bool,
    a_rear_merge: float | None,
    cfg: RewardConfig = RewardConfig(),
) -> float:
    """Per-step merge reward.

    ``dx_front`` is the distance to the nearest vehicle ahead (None if
    there is none); ``a_rear_merge`` is the rear vehicle's acceleration on
    the step the ego enters the main lane, None on every other step.
    """
    r = cfg.alpha_r * abs(v_x - v_target)
    if dx_front is not None:
        r += cfg.beta_r * abs(dx_front - 1000.0 / density)
    if a_rear_merge is not None:
        r += cfg.gamma_r * min(a_rear_merge, 0.0)
    if crashed:
        r += cfg.r_collision
    if ramp_failed:
        r += cfg.ramp_penalty
    return r + cfg.action_cost(action)


class HighwayMergeEnv(TaskEnv):
    discrete = True
    n_actions = 5
    obs_dim = OBS_DIM

    def __init__(self, task: TaskSpec, config: MergeConfig = MergeConfig()):
        if task.family != "merge":
            raise ValueError("HighwayMergeEnv needs a merge task")
        self.task = task
        self.cfg = replace(config, idm=replace(config.idm, v0=task.speed))
        self.horizon = self.cfg.horizon
        self.v_target = task.speed
        lw = self.cfg.lane_width
        self.obs_scale = np.array(
            [self.cfg.ramp_end, lw, 30.0, lw / self.cfg.dt]
            + [1.0, self.cfg.sensing_range, lw, 10.0, lw / self.cfg.dt] * N_NEIGHBORS
        )
        self.xs = np.zeros(0)
        self.vs = np.zeros(0)
        self.done = True

    # -- state --------------------------------------------------------------

    def reset(self, seed: int | None = None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        c = self.cfg
        spacing = 1000.0 / self.task.density
        xs = []
        x = c.spawn_downstream - rng.uniform(0.0, spacing)
        min_gap = c.vehicle_length + c.idm.s0
        while x > c.spawn_upstream:
            xs.append(x)
            x -= max(min_gap, spacing * rng.uniform(1.0 - c.spacing_jitter, 1.0 + c.spacing_jitter))
        self.xs = np.array(xs)
        self.vs = self.task.speed * rng.uniform(1.0 - c.speed_jitter, 1.0, len(xs))
        self.ego_x = 0.0
        self.ego_v = c.ego_speed_ratio * self.task.speed
        self.ego_y = -c.lane_width
        self.ego_vy = 0.0
        self.on_ramp = True
        self.merged = False
        self.t = 0
        self.done = False
        return self.observation()

    def ego_state(self):
        return (self.ego_x, self.ego_y, self.ego_v, self.ego_vy)

    @property
    def follower_model(self) -> str:
        return "hidas" if self.on_ramp else "idm"

    def observation(self) -> np.ndarray:
        c = self.cfg
        d_eol = max(c.ramp_end - self.ego_x, 0.0) if self.on_ramp else c.ramp_end
        obs = np.zeros(OBS_DIM)
        obs[:4] = (d_eol, self.ego_y, self.ego_v, self.ego_vy)
        dx = self.xs - self.ego_x
        near = np.flatnonzero(np.abs(dx) <= c.sensing_range)
        near = near[np.argsort(np.abs(dx[near]), kind="stable")][:N_NEIGHBORS]
        near = near[np.argsort(dx[near], kind="stable")]
        for slot, i in enumerate(near):
            base = 4 + 5 * slot
            obs[base : base + 5] = (1.0, dx[i], 0.0 - self.ego_y, self.vs[i] - self.ego_v, -self.ego_vy)
        return obs

    def _front_rear(self):
        ahead = np.flatnonzero(self.xs > self.ego_x)
        behind = np.flatnonzero(self.xs <= self.ego_x)
        front = ahead[np.argmin(self.xs[ahead])] if ahead.size else None
        rear = behind[np.argmax(self.xs[behind])] if behind.size else None
        return front, rear

    # -- dynamics -----------------------------------------------------------

    def _main_lane_accels(self) -> tuple[np.ndarray, str | None]:
        """IDM accelerations for main-lane traffic plus the follower's Hidas override."""
        c = self.cfg
        L = c.vehicle_length
        order = np.argsort(-self.xs, kind="stable")
        xs, vs = self.xs[order], self.vs[order]
        lead_x = np.concatenate([[np.inf], xs[:-1]])
        lead_v = np.concatenate([[0.0], vs[:-1]])
        if not self.on_ramp:
            # the ego is a leader for whoever is right behind it
            k = int(np.searchsorted(-xs, -self.ego_x, side="right"))
            if k < len(xs):
                lead_x[k], lead_v[k] = self.ego_x, self.ego_v
        gap = np.where(np.isinf(lead_x), np.inf, np.maximum(lead_x - L - xs, 1e-3))
        acc = idm_accel_array(vs, lead_v, gap, c.idm)
        decision = None
        if self.on_ramp:
            behind = np.flatnonzero(xs < self.ego_x)
            if behind.size:
                f = behind[0]
                g_f = self.ego_x - L - xs[f]
                if g_f >= 0:
                    dec = hidas_decision(g_f, vs[f], self.ego_v, c.hidas)
                    decision = dec.value
                    if dec is HidasDecision.YIELD:
                        a_courtesy = idm_accel(vs[f], self.ego_v, max(g_f, 1e-3), c.idm)
                        acc[f] = max(-c.hidas.b_f, min(acc[f], a_courtesy))
                else:
                    decision = HidasDecision.IGNORE.value
        out = np.empty_like(acc)
        out[order] = acc
        return out, decision

    def _ego_accel(self, action: int) -> float:
        c = self.cfg
        if action == ACCEL:
            return c.ego_accel
        if action == DECEL:
            return -c.ego_accel
        if action == CRUISE:
            if self.on_ramp:
                return idm_accel(self.ego_v, 0.0, np.inf, c.idm)
            front, _ = self._front_rear()
            if front is None:
                return idm_accel(self.ego_v, 0.0, np.inf, c.idm)
            gap = max(self.xs[front] - c.vehicle_length - self.ego_x, 1e-3)
            return idm_accel(self.ego_v, self.vs[front], gap, c.idm)
        return 0.0

    def step(self, action) -> StepResult:
        if self.done:
            raise EnvError("step() called on a terminated episode; call reset()")
        action = int(action)
        if not 0 <= action < 5:
            raise ValueError(f"action {action} outside 0..4")
        c = self.cfg
        L = c.vehicle_length

        lane_changed = False
        if action == LEFT and self.on_ramp and self.ego_x >= c.merge_start:
            self.on_ramp = False
            self.ego_y = 0.0
            self.ego_vy = c.lane_width / c.dt
            lane_changed = True
        else:
            self.ego_vy = 0.0

        a_main, decision = self._main_lane_accels()
        a_ego = self._ego_accel(action)

        self.vs = np.maximum(self.vs + a_main * c.dt, 0.0)
        self.xs = self.xs + self.vs * c.dt
        self.ego_v = max(self.ego_v + a_ego * c.dt, 0.0)
        self.ego_x = self.ego_x + self.ego_v * c.dt
        self.t += 1

        crashed = bool(not self.on_ramp and np.any(np.abs(self.xs - self.ego_x) < L))
        ramp_failed = bool(self.on_ramp and self.ego_x >= c.ramp_end)

        front, rear = self._front_rear()
        a_rear = None
        b_min = None
        if lane_changed and not crashed:
            self.merged = True
            if rear is not None:
                gap = max(self.ego_x - L - self.xs[rear], 1e-3)
                a_rear = idm_accel(self.vs[rear], self.ego_v, gap, c.idm)
            b_min = self._merge_braking(front, rear)

        dx_front = None if front is None else float(self.xs[front] - self.ego_x)
        reward = merge_reward(
            self.ego_v, self.v_target, dx_front, self.task.density, action,
            crashed, ramp_failed, a_rear, c.reward,
        )
        timeout = self.t >= c.horizon
        self.done = crashed or ramp_failed or timeout
        failure = crashed or ramp_failed or (timeout and not self.merged)
        info = {
            "crashed": crashed,
            "merged": self.merged,
            "ramp_end": ramp_failed,
            "timeout": timeout and not (crashed or ramp_failed),
            "unhealthy": False,
            "failure": failure,
            "min_braking": b_min,
            "a_rear_merge": a_rear,
            "follower_model": self.follower_model,
            "hidas_decision": decision,
            "lane_changed": lane_changed,
        }
        return StepResult(self.observation(), reward, self.done, info)

    def _merge_braking(self, front, rear) -> float | None:
        # missing neighbours contribute no braking requirement
        terms = []
        if front is not None and self.xs[front] > self.ego_x:
            terms.append(braking_between(self.xs[front], self.vs[front], self.ego_x, self.ego_v))
        if rear is not None and self.xs[rear] < self.ego_x:
            terms.append(braking_between(self.ego_x, self.ego_v, self.xs[rear], self.vs[rear]))
        return max(terms) if terms else None
