from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

MPH = 0.44704  # m/s per mile per hour

FAMILIES = ("merge", "point")


class EnvError(RuntimeError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    """Parameters identifying one MDP of a family.

    merge: ``density`` in veh/km and ``speed_mph``; point: ``target_velocity``.
    """

    family: str
    density: float | None = None
    speed_mph: float | None = None
    target_velocity: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown task family {self.family!r}")
        if self.family == "merge" and (self.density is None or self.speed_mph is None):
            raise ValueError("merge tasks need density and speed_mph")
        if self.family == "point" and self.target_velocity is None:
            raise ValueError("point tasks need target_velocity")

    @property
    def speed(self) -> float:
        """Traffic speed in m/s."""
        return self.speed_mph * MPH

    def to_dict(self) -> dict:
        d = {"family": self.family}
        if self.family == "merge":
            d.update(density=self.density, speed_mph=self.speed_mph)
        else:
            d["target_velocity"] = list(self.target_velocity)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TaskSpec:
        tv = d.get("target_velocity")
        return cls(
            family=d["family"],
            density=d.get("density"),
            speed_mph=d.get("speed_mph"),
            target_velocity=None if tv is None else tuple(float(v) for v in tv),
        )


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    terminal: bool
    info: dict[str, Any] = field(default_factory=dict)


class TaskEnv:
    """Common surface of the task families.

    ``obs_scale`` divides raw observations into roughly unit range before
    they reach a network.
    """

    obs_dim: int
    discrete: bool
    n_actions: int  # discrete: number of actions; continuous: action dimension
    obs_scale: np.ndarray
    horizon: int

    def reset(self, seed: int | None = None) -> np.ndarray:
        raise NotImplementedError

    def step(self, action) -> StepResult:
        raise NotImplementedError

    def ego_state(self) -> tuple[float, float, float, float]:
        raise NotImplementedError

    @staticmethod
    def is_failure(info: dict) -> bool:
        return bool(info.get("failure", False))
