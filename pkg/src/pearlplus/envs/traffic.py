"""Longitudinal traffic models: IDM car following, Hidas courtesy yielding,
and the minimum-braking risk measure used at the merge instant."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


@dataclass(frozen=True)
class IdmParams:
    """Intelligent Driver Model parameters (SI units).

    ``v0`` is the desired speed; the merge environment overrides it with
    the task's traffic speed.
    """

    a_max: float = 1.5
    b: float = 2.0
    v0: float = 29.0
    T: float = 1.5
    s0: float = 2.0
    delta: float = 4.0
    b_max: float = 9.0


@dataclass(frozen=True)
class HidasParams:
    Dv: float = 2.7  # maximum speed decrease, m/s
    g_min: float = 2.0  # minimum safe constant gap, m
    c: float = 0.9  # acceptable gap parameter, s
    b_f: float = 1.5  # acceptable deceleration, m/s^2

    def __post_init__(self):
        for k in ("Dv", "g_min", "c", "b_f"):
            if not getattr(self, k) > 0:
                raise ValueError(f"HidasParams.{k} must be positive")


class HidasDecision(str, Enum):
    YIELD = "yield"
    IGNORE = "ignore"


def idm_accel(v: float, v_lead: float, gap: float, params: IdmParams = IdmParams()) -> float:
    """IDM acceleration for a vehicle at speed ``v`` behind a leader.

    ``gap`` is bumper-to-bumper distance; ``math.inf`` means free road.
    The result is clamped to ``[-b_max, a_max]``.
    """
    if not gap > 0:
        raise ValueError(f"IDM gap must be positive, got {gap}")
    free = (v / params.v0) ** params.delta
    if math.isinf(gap):
        interaction = 0.0
    else:
        dv = v - v_lead
        s_star = params.s0 + max(0.0, v * params.T + v * dv / (2.0 * math.sqrt(params.a_max * params.b)))
        interaction = (s_star / gap) ** 2
    a = params.a_max * (1.0 - free - interaction)
    return min(max(a, -params.b_max), params.a_max)


def idm_accel_array(v, v_lead, gap, params: IdmParams) -> np.ndarray:
    """Vectorized :func:`idm_accel`; ``gap`` entries may be ``inf``."""
    v = np.asarray(v, dtype=np.float64)
    v_lead = np.asarray(v_lead, dtype=np.float64)
    gap = np.asarray(gap, dtype=np.float64)
    if (gap <= 0).any():
        raise ValueError("IDM gap must be positive")
    free = (v / params.v0) ** params.delta
    s_star = params.s0 + np.maximum(
        0.0, v * params.T + v * (v - v_lead) / (2.0 * math.sqrt(params.a_max * params.b))
    )
    with np.errstate(divide="ignore"):
        interaction = np.where(np.isinf(gap), 0.0, (s_star / np.where(np.isinf(gap), 1.0, gap)) ** 2)
    a = params.a_max * (1.0 - free - interaction)
    return np.clip(a, -params.b_max, params.a_max)


def hidas_quantities(g_f: float, v_f: float, v_s: float, p: HidasParams = HidasParams()):
    """Return ``(Dt, g_f_sld, g_f_min)`` for follower gap ``g_f``.

    ``v_f`` is the main-lane follower's speed, ``v_s`` the merging
    (subject) vehicle's speed.
    """
    if g_f < 0:
        raise ValueError(f"follow gap must be non-negative, got {g_f}")
    dt = p.Dv / p.b_f
    g_sld = g_f - (v_f * dt - p.b_f * dt * dt / 2.0) + v_s * dt
    g_min = p.g_min + (p.c * (v_f - v_s) if v_f > v_s else 0.0)
    return dt, g_sld, g_min


def hidas_decision(g_f: float, v_f: float, v_s: float, p: HidasParams = HidasParams()) -> HidasDecision:
    """Whether the follower slows down to let the merging vehicle in."""
    _, g_sld, g_min = hidas_quantities(g_f, v_f, v_s, p)
    return HidasDecision.YIELD if g_sld > g_min else HidasDecision.IGNORE


def braking_between(x0: float, v0: float, x1: float, v1: float) -> float:
    """Constant deceleration vehicle 1 needs to match vehicle 0's speed
    before closing the gap; negative when vehicle 1 is the slower one."""
    if x0 == x1:
        raise ValueError("coincident positions: braking requirement undefined")
    return (v1 * v1 - v0 * v0) / (2.0 * (x0 - x1))


def min_braking(x_front, v_front, x_ego, v_ego, x_rear, v_rear) -> float:
    """Minimum braking required to avoid a collision at the merge instant."""
    if not x_front > x_ego > x_rear:
        raise ValueError("min_braking needs x_front > x_ego > x_rear")
    return max(
        braking_between(x_front, v_front, x_ego, v_ego),
        braking_between(x_ego, v_ego, x_rear, v_rear),
    )


def classify_risk(b_min: float) -> str:
    """``'high'`` if someone must brake, ``'low'`` otherwise."""
    return "high" if b_min > 0 else "low"
