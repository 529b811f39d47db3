from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .base import TaskEnv, TaskSpec
from .merge import HighwayMergeEnv, MergeConfig
from .point import PointConfig, PointVelocityEnv


@dataclass(frozen=True)
class MergeTaskRanges:
    density: tuple[float, float] = (30.0, 50.0)  # veh/km
    speed_mph: tuple[float, float] = (50.0, 70.0)


def sample_task(
    family: str,
    rng: np.random.Generator,
    merge_ranges: MergeTaskRanges = MergeTaskRanges(),
    point_config: PointConfig = PointConfig(),
) -> TaskSpec:
    """Draw one task uniformly from the family's parameter box."""
    if family == "merge":
        d = rng.uniform(*merge_ranges.density)
        s = rng.uniform(*merge_ranges.speed_mph)
        return TaskSpec("merge", density=float(d), speed_mph=float(s))
    if family == "point":
        v = rng.uniform(point_config.target_low, point_config.target_high, point_config.dim)
        return TaskSpec("point", target_velocity=tuple(float(x) for x in v))
    raise ValueError(f"unknown task family {family!r}")


def sample_tasks(family: str, n: int, rng: np.random.Generator, **kw) -> list[TaskSpec]:
    return [sample_task(family, rng, **kw) for _ in range(n)]


def make_env(
    spec: TaskSpec,
    merge_config: MergeConfig = MergeConfig(),
    point_config: PointConfig = PointConfig(),
) -> TaskEnv:
    if spec.family == "merge":
        return HighwayMergeEnv(spec, merge_config)
    if spec.family == "point":
        return PointVelocityEnv(spec, point_config)
    raise ValueError(f"unknown task family {spec.family!r}")


TRACE_FIELDS = (
    "t", "x", "y", "vx", "vy", "action", "reward",
    "terminal", "crashed", "merged", "unhealthy", "failure", "min_braking",
)


def trace_row(t: int, ego: Sequence[float], action, reward: float, terminal: bool, info: dict) -> dict:
    if np.ndim(action) == 0:
        act = str(int(action))
    else:
        act = " ".join(repr(float(a)) for a in np.ravel(action))
    b = info.get("min_braking")
    return {
        "t": t,
        "x": repr(float(ego[0])),
        "y": repr(float(ego[1])),
        "vx": repr(float(ego[2])),
        "vy": repr(float(ego[3])),
        "action": act,
        "reward": repr(float(reward)),
        "terminal": int(terminal),
        "crashed": int(bool(info.get("crashed"))),
        "merged": int(bool(info.get("merged"))),
        "unhealthy": int(bool(info.get("unhealthy"))),
        "failure": int(bool(info.get("failure"))),
        "min_braking": "" if b is None else repr(float(b)),
    }


def write_trace_csv(path, rows: Iterable[dict], extra_fields: Sequence[str] = ()) -> None:
    """One row per environment step; floats written with full precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(extra_fields) + list(TRACE_FIELDS), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def read_trace_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
