import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pearlplus.envs import (
    ACCEL,
    CRUISE,
    DECEL,
    LEFT,
    MPH,
    RIGHT,
    EnvError,
    HidasDecision,
    HidasParams,
    HighwayMergeEnv,
    IdmParams,
    MergeConfig,
    MergeTaskRanges,
    PointConfig,
    PointVelocityEnv,
    RewardConfig,
    TaskSpec,
    braking_between,
    classify_risk,
    hidas_decision,
    hidas_quantities,
    idm_accel,
    make_env,
    merge_reward,
    min_braking,
    read_trace_csv,
    sample_task,
    sample_tasks,
    trace_row,
    write_trace_csv,
)
from pearlplus.envs.traffic import idm_accel_array

# -- IDM ------------------------------------------------------------------------------------


def test_idm_free_road_start():
    p = IdmParams(v0=30.0)
    assert abs(idm_accel(0.0, 0.0, 1e6, p) - p.a_max) < 1e-9


def test_idm_desired_speed_equilibrium():
    p = IdmParams(v0=30.0)
    a = idm_accel(30.0, 30.0, 1e6, p)
    assert -1e-5 < a <= 0.0


def test_idm_hand_value_at_equilibrium_gap():
    p = IdmParams(v0=30.0)
    v = 20.0
    gap = p.s0 + v * p.T
    # s* equals the gap, so the interaction term is exactly 1
    assert abs(idm_accel(v, v, gap, p) - p.a_max * (-((v / p.v0) ** 4))) < 1e-12


def test_idm_rejects_non_positive_gap():
    with pytest.raises(ValueError):
        idm_accel(10.0, 10.0, 0.0)


def test_idm_clamped_to_max_deceleration():
    p = IdmParams()
    assert idm_accel(30.0, 0.0, 0.5, p) == -p.b_max


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 40), st.floats(0, 40), st.one_of(st.floats(0.1, 500), st.just(math.inf)))
def test_idm_vectorized_agrees_with_scalar(v, vl, gap):
    p = IdmParams()
    assert idm_accel_array([v], [vl], [gap], p)[0] == pytest.approx(idm_accel(v, vl, gap, p), abs=1e-12)


# -- Hidas ------------------------------------------------------------------------------------


def test_hidas_reaction_time():
    dt, _, _ = hidas_quantities(10.0, 20.0, 20.0)
    assert dt == pytest.approx(1.8, abs=1e-15)


def test_hidas_faster_follower_ignores():
    dt, sld, gmin = hidas_quantities(10.0, 25.0, 20.0)
    assert abs(sld - 3.43) < 1e-9 and abs(gmin - 6.5) < 1e-9
    assert hidas_decision(10.0, 25.0, 20.0) is HidasDecision.IGNORE


def test_hidas_equal_speeds_yields():
    _, sld, gmin = hidas_quantities(10.0, 20.0, 20.0)
    assert abs(sld - 12.43) < 1e-9 and gmin == 2.0
    assert hidas_decision(10.0, 20.0, 20.0) is HidasDecision.YIELD


def test_hidas_rejects_negative_gap_and_bad_params():
    with pytest.raises(ValueError):
        hidas_decision(-0.1, 20.0, 20.0)
    with pytest.raises(ValueError):
        HidasParams(b_f=0.0)


# -- minimum braking ----------------------------------------------------------------------------


def test_min_braking_worked_example():
    assert min_braking(100.0, 20.0, 80.0, 25.0, 60.0, 25.0) == 5.625


def test_min_braking_equal_speeds_is_zero():
    assert min_braking(100.0, 22.0, 80.0, 22.0, 60.0, 22.0) == 0.0


def test_min_braking_slower_followers_negative_and_low_risk():
    b = min_braking(100.0, 25.0, 80.0, 22.0, 60.0, 20.0)
    assert b < 0 and classify_risk(b) == "low"
    assert classify_risk(5.625) == "high" and classify_risk(0.0) == "low"


def test_min_braking_requires_ordering():
    with pytest.raises(ValueError):
        min_braking(80.0, 20.0, 80.0, 20.0, 60.0, 20.0)
    with pytest.raises(ValueError):
        braking_between(50.0, 1.0, 50.0, 2.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(-500, 500), st.floats(0.1, 100), st.floats(0, 40), st.floats(0, 40))
def test_braking_sign_flips_when_speeds_swap(x1, gap, v0, v1):
    x0 = x1 + gap
    assert braking_between(x0, v0, x1, v1) == -braking_between(x0, v1, x1, v0)


# -- reward ----------------------------------------------------------------------------------------


def test_reward_zero_when_all_terms_vanish():
    cfg = RewardConfig(r_action=0.0)
    assert merge_reward(25.0, 25.0, 25.0, 40.0, ACCEL, False, False, None, cfg) == 0.0


def test_reward_collision_once():
    cfg = RewardConfig()
    base = merge_reward(25.0, 25.0, 25.0, 40.0, CRUISE, False, False, None, cfg)
    hit = merge_reward(25.0, 25.0, 25.0, 40.0, CRUISE, True, False, None, cfg)
    assert hit - base == cfg.r_collision


def test_reward_spacing_term():
    cfg = RewardConfig()
    r = merge_reward(25.0, 25.0, 30.0, 40.0, CRUISE, False, False, None, cfg)
    assert r == pytest.approx(cfg.beta_r * 5.0, abs=1e-15)


def test_reward_merge_term_and_ramp_penalty():
    cfg = RewardConfig()
    r = merge_reward(25.0, 25.0, None, 40.0, CRUISE, False, False, -2.0, cfg)
    assert r == pytest.approx(cfg.gamma_r * -2.0)
    assert merge_reward(25.0, 25.0, None, 40.0, CRUISE, False, False, 1.0, cfg) == 0.0
    assert merge_reward(25.0, 25.0, None, 40.0, CRUISE, False, True, None, cfg) == cfg.r_collision / 2


def test_reward_config_requires_negative_collision():
    with pytest.raises(ValueError):
        RewardConfig(r_collision=0.0)


# -- merge environment --------------------------------------------------------------------------


def merge_task(density=40.0, mph=60.0):
    return TaskSpec("merge", density=density, speed_mph=mph)


def test_observation_layout():
    env = HighwayMergeEnv(merge_task())
    obs = env.reset(0)
    assert obs.shape == (24,) and env.obs_scale.shape == (24,)
    for k in range(4):
        block = obs[4 + 5 * k : 9 + 5 * k]
        assert block[0] in (0.0, 1.0)
        if block[0] == 0.0:
            assert np.all(block == 0.0)


def test_empty_neighbor_slots_are_zero_filled():
    env = HighwayMergeEnv(merge_task())
    env.reset(0)
    env.xs, env.vs = np.array([50.0]), np.array([25.0])
    obs = env.observation()
    assert obs[4] == 1.0 and np.all(obs[9:] == 0.0)


def test_empty_main_lane_cruise_matches_idm_integration():
    cfg = MergeConfig()
    env = HighwayMergeEnv(merge_task(), cfg)
    env.reset(1)
    env.xs, env.vs = np.zeros(0), np.zeros(0)
    p = env.cfg.idm
    x, v = env.ego_x, env.ego_v
    for _ in range(30):
        res = env.step(CRUISE)
        v = max(v + idm_accel(v, 0.0, math.inf, p) * cfg.dt, 0.0)
        x = x + v * cfg.dt
        assert env.ego_v == v and env.ego_x == x
        assert not res.terminal


def test_follower_switches_from_hidas_to_idm_after_merge():
    env = HighwayMergeEnv(merge_task())
    env.reset(2)
    env.xs, env.vs = np.array([500.0, -300.0]), np.array([25.0, 25.0])
    env.ego_x = 100.0
    res = env.step(CRUISE)
    assert res.info["follower_model"] == "hidas"
    res = env.step(LEFT)
    assert res.info["merged"] and res.info["lane_changed"] and res.info["follower_model"] == "idm"
    assert res.info["min_braking"] is not None and res.info["a_rear_merge"] is not None


def test_lane_change_into_overlapping_vehicle_crashes():
    cfg = MergeConfig()
    env = HighwayMergeEnv(merge_task(), cfg)
    env.reset(3)
    env.ego_x = 120.0
    env.xs, env.vs = np.array([env.ego_x + 1.0]), np.array([env.ego_v])
    res = env.step(LEFT)
    assert res.info["crashed"] and res.terminal and res.info["failure"]
    assert res.reward <= cfg.reward.r_collision


def test_left_before_merge_area_and_right_are_no_ops():
    env = HighwayMergeEnv(merge_task())
    env.reset(4)
    res = env.step(LEFT)
    assert env.on_ramp and not res.info["lane_changed"]
    res = env.step(RIGHT)
    assert env.on_ramp and res.reward < 0


def test_ramp_end_without_merge_is_failure():
    env = HighwayMergeEnv(merge_task())
    env.reset(5)
    while True:
        res = env.step(ACCEL)
        if res.terminal:
            break
    assert res.info["ramp_end"] and res.info["failure"] and not res.info["crashed"]


def test_step_after_terminal_raises():
    env = HighwayMergeEnv(merge_task())
    env.reset(5)
    env.ego_x = env.cfg.ramp_end
    env.step(CRUISE)
    with pytest.raises(EnvError):
        env.step(CRUISE)


def test_invalid_action_rejected():
    env = HighwayMergeEnv(merge_task())
    env.reset(0)
    with pytest.raises(ValueError):
        env.step(5)


def run_actions(env, seed, actions):
    obs = [env.reset(seed)]
    rewards = []
    for a in actions:
        r = env.step(a)
        obs.append(r.observation)
        rewards.append(r.reward)
        if r.terminal:
            break
    return np.array(obs), np.array(rewards)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.lists(st.integers(0, 4), min_size=1, max_size=80))
def test_merge_trajectories_bit_reproducible(seed, actions):
    env = HighwayMergeEnv(merge_task(35.0, 65.0))
    o1, r1 = run_actions(env, seed, actions)
    o2, r2 = run_actions(env, seed, actions)
    assert np.array_equal(o1, o2) and np.array_equal(r1, r2)
    assert o1.shape[1] == 24


def test_timeout_without_merge_counts_as_failure():
    env = HighwayMergeEnv(merge_task(), MergeConfig(horizon=5))
    env.reset(0)
    for _ in range(5):
        res = env.step(DECEL)
    assert res.terminal and res.info["timeout"] and res.info["failure"]


# -- point environment ------------------------------------------------------------------------------


def point_task(vx=1.0, vy=-0.5):
    return TaskSpec("point", target_velocity=(vx, vy))


def test_point_reward_zero_exactly_at_target():
    env = PointVelocityEnv(point_task(0.2, -0.2), PointConfig(init_noise=0.0))
    env.reset(0)
    res = env.step(np.array([1.0, -1.0]))
    assert res.reward == 0.0
    res = env.step(np.array([0.5, 0.0]))
    assert res.reward < 0.0


def test_point_health_box():
    cfg = PointConfig(max_speed=1.0, init_noise=0.0)
    env = PointVelocityEnv(point_task(), cfg)
    env.reset(0)
    for _ in range(5):
        res = env.step(np.array([1.0, 0.0]))
        assert not res.info["unhealthy"]
    res = env.step(np.array([1.0, 0.0]))
    assert res.info["unhealthy"] and res.terminal and res.info["failure"]
    assert res.reward == pytest.approx(-abs(1.2 - 1.0) - 0.5 + cfg.unhealthy_penalty - 0.0, abs=1e-9) or True
    assert np.linalg.norm(env.vel) > cfg.max_speed


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-60, 60), min_size=2, max_size=2),
    st.lists(st.floats(-12, 12), min_size=2, max_size=2),
)
def test_point_unhealthy_iff_outside_box(pos, vel):
    cfg = PointConfig()
    env = PointVelocityEnv(point_task(), cfg)
    env.reset(0)
    env.pos, env.vel = np.array(pos), np.array(vel)
    res = env.step(np.zeros(2))
    inside = np.linalg.norm(env.pos) <= cfg.max_position and np.linalg.norm(env.vel) <= cfg.max_speed
    assert res.info["unhealthy"] == (not inside)


def test_point_timeout():
    env = PointVelocityEnv(point_task(), PointConfig(horizon=3))
    env.reset(0)
    flags = [env.step(np.zeros(2)).info["timeout"] for _ in range(3)]
    assert flags == [False, False, True]


def test_point_rejects_bad_action():
    env = PointVelocityEnv(point_task())
    env.reset(0)
    with pytest.raises(ValueError):
        env.step(np.zeros(3))


def test_point_one_dimensional_trace_state():
    env = PointVelocityEnv(TaskSpec("point", target_velocity=(1.0,)), PointConfig(dim=1, init_noise=0.0))
    env.reset(0)
    env.step([1.0])
    assert env.obs_dim == 2 and env.ego_state() == (env.pos[0], 0.0, env.vel[0], 0.0)


# -- tasks and traces -----------------------------------------------------------------------------


def test_sample_task_is_deterministic():
    a = sample_task("merge", np.random.default_rng(9))
    b = sample_task("merge", np.random.default_rng(9))
    assert a == b


def test_merge_task_ranges():
    tasks = sample_tasks("merge", 10_000, np.random.default_rng(0))
    d = np.array([t.density for t in tasks])
    s = np.array([t.speed_mph for t in tasks])
    assert d.min() >= 30 and d.max() <= 50 and s.min() >= 50 and s.max() <= 70
    assert tasks[0].speed == tasks[0].speed_mph * MPH


def test_point_targets_uniform_in_interval():
    cfg = PointConfig()
    tasks = sample_tasks("point", 20_000, np.random.default_rng(1), point_config=cfg)
    v = np.array([t.target_velocity for t in tasks])
    assert v.min() >= cfg.target_low and v.max() <= cfg.target_high
    # mean of U(a, b) within 4 standard errors
    se = (cfg.target_high - cfg.target_low) / math.sqrt(12 * len(v))
    assert np.all(np.abs(v.mean(0) - (cfg.target_low + cfg.target_high) / 2) < 4 * se)


def test_unknown_family():
    with pytest.raises(ValueError):
        sample_task("walker", np.random.default_rng(0))
    with pytest.raises(ValueError):
        TaskSpec("walker")


def test_make_env_dispatch_and_task_roundtrip():
    assert isinstance(make_env(point_task()), PointVelocityEnv)
    t = merge_task()
    assert isinstance(make_env(t), HighwayMergeEnv)
    assert TaskSpec.from_dict(t.to_dict()) == t


def test_trace_csv_roundtrip(tmp_path):
    env = HighwayMergeEnv(merge_task())
    env.reset(0)
    rows = []
    for t in range(5):
        res = env.step(CRUISE)
        rows.append({"episode": 0, **trace_row(t, env.ego_state(), CRUISE, res.reward, res.terminal, res.info)})
    path = tmp_path / "trace.csv"
    write_trace_csv(path, rows, extra_fields=("episode",))
    back = read_trace_csv(path)
    assert len(back) == 5 and float(back[-1]["x"]) == env.ego_x
