"""Experiment configuration files.

YAML documents are validated against a fixed schema before anything is
built: unknown keys, missing required keys and wrongly typed values are
reported with the line they occur on.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from .envs import HidasParams, IdmParams, MergeConfig, MergeTaskRanges, PointConfig, RewardConfig
from .meta import EnvSettings, MetaTrainConfig

SCHEMA_VERSION = 1

# keys that change how long a run lasts or where it writes, not what it computes
_HASH_EXCLUDED = {"output_dir", "checkpoint_every", "eval"}
_HASH_EXCLUDED_TRAIN = {"n_iterations"}


class ConfigError(ValueError):
    pass


@dataclass
class EvalSettings:
    budgets: tuple[int, ...] = (0, 1, 3, 5)
    rollouts: int = 10
    workers: int = 1


@dataclass
class ExperimentConfig:
    family: str
    seed: int
    train: MetaTrainConfig
    env: EnvSettings = field(default_factory=EnvSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    output_dir: str = "runs"
    checkpoint_every: int = 1
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        env = self.env
        merge = {k: v for k, v in asdict(env.merge).items() if k not in ("idm", "hidas", "reward")}
        return {
            "schema_version": self.schema_version,
            "family": self.family,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "checkpoint_every": self.checkpoint_every,
            "train": {
                k: (list(v) if isinstance(v, tuple) else v)
                for k, v in asdict(self.train).items()
                if k not in ("family", "seed")
            },
            "eval": {"budgets": list(self.eval.budgets), "rollouts": self.eval.rollouts, "workers": self.eval.workers},
            "env": {
                "point": asdict(env.point),
                "merge": merge,
                "merge_ranges": {k: list(v) for k, v in asdict(env.merge_ranges).items()},
                "idm": asdict(env.merge.idm),
                "hidas": asdict(env.merge.hidas),
                "reward": asdict(env.merge.reward),
            },
        }

    def config_hash(self) -> str:
        """Digest of everything that affects the computation."""
        d = self.to_dict()
        for k in _HASH_EXCLUDED:
            d.pop(k, None)
        for k in _HASH_EXCLUDED_TRAIN:
            d["train"].pop(k, None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_seed(self, seed: int) -> ExperimentConfig:
        return replace(self, seed=int(seed), train=replace(self.train, seed=int(seed)))


# -- schema ------------------------------------------------------------------------------

_INT, _FLOAT, _STR, _BOOL = "int", "float", "str", "bool"


def _scalar_schema(cls, skip=()) -> dict:
    out = {}
    for f in fields(cls):
        if f.name in skip:
            continue
        t = str(f.type)
        if t.startswith("tuple"):
            out[f.name] = ("list", _FLOAT if "float" in t else _INT)
        elif "float" in t:
            out[f.name] = _FLOAT
        elif "int" in t:
            out[f.name] = _INT
        elif "bool" in t:
            out[f.name] = _BOOL
        elif "str" in t:
            out[f.name] = _STR
    return out


SCHEMA: dict[str, Any] = {
    "schema_version": _INT,
    "family": _STR,
    "seed": _INT,
    "output_dir": _STR,
    "checkpoint_every": _INT,
    "train": _scalar_schema(MetaTrainConfig, skip=("family", "seed")),
    "eval": {"budgets": ("list", _INT), "rollouts": _INT, "workers": _INT},
    "env": {
        "point": _scalar_schema(PointConfig),
        "merge": _scalar_schema(MergeConfig, skip=("idm", "hidas", "reward")),
        "merge_ranges": {"density": ("list", _FLOAT), "speed_mph": ("list", _FLOAT)},
        "idm": _scalar_schema(IdmParams),
        "hidas": _scalar_schema(HidasParams),
        "reward": _scalar_schema(RewardConfig),
    },
}
REQUIRED = ("schema_version", "family", "seed", "train")


def _where(source: str, node) -> str:
    return f"{source}:{node.start_mark.line + 1}"


def _check_scalar(kind: str, node, path: str, source: str) -> Any:
    if not isinstance(node, yaml.ScalarNode):
        raise ConfigError(f"{_where(source, node)}: {path} must be of type {kind}")
    value = yaml.safe_load(node.value) if node.style is None else node.value
    if kind == _STR:
        if node.style is None and not isinstance(value, str):
            value = node.value
        return str(value)
    if kind == _BOOL and isinstance(value, bool):
        return value
    if kind == _INT and isinstance(value, int) and not isinstance(value, bool):
        return value
    if kind == _FLOAT and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if kind == _FLOAT and value is None:
        return None
    if kind == _FLOAT and node.style is None and isinstance(value, str):
        try:
            return float(value)  # YAML 1.1 reads "1e-3" as a string
        except ValueError:
            pass
    raise ConfigError(f"{_where(source, node)}: {path} must be of type {kind}, got {node.value!r}")


def _walk(schema, node, path: str, source: str):
    if isinstance(schema, dict):
        if not isinstance(node, yaml.MappingNode):
            raise ConfigError(f"{_where(source, node)}: {path or 'document'} must be a mapping")
        out = {}
        for k_node, v_node in node.value:
            key = k_node.value
            sub = f"{path}.{key}" if path else key
            if key not in schema:
                raise ConfigError(f"{_where(source, k_node)}: unknown key {sub!r}")
            if key in out:
                raise ConfigError(f"{_where(source, k_node)}: duplicate key {sub!r}")
            out[key] = _walk(schema[key], v_node, sub, source)
        return out
    if isinstance(schema, tuple):
        _, kind = schema
        if not isinstance(node, yaml.SequenceNode):
            raise ConfigError(f"{_where(source, node)}: {path} must be a list")
        return [_check_scalar(kind, n, f"{path}[{i}]", source) for i, n in enumerate(node.value)]
    return _check_scalar(schema, node, path, source)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = f":{mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{source}{line}: malformed YAML: {getattr(e, 'problem', e)}") from None
    if root is None:
        raise ConfigError(f"{source}:1: empty configuration")
    raw = _walk(SCHEMA, root, "", source)
    for k in REQUIRED:
        if k not in raw:
            raise ConfigError(f"{_where(source, root)}: missing required key {k!r}")
    if raw["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(
            f"{source}: schema_version {raw['schema_version']} is not supported (expected {SCHEMA_VERSION})"
        )
    try:
        return _build(raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{source}: {e}") from None


def _build(raw: dict) -> ExperimentConfig:
    env_raw = raw.get("env", {})
    merge_kw = dict(env_raw.get("merge", {}))
    merge = MergeConfig(
        **merge_kw,
        idm=IdmParams(**env_raw.get("idm", {})),
        hidas=HidasParams(**env_raw.get("hidas", {})),
        reward=RewardConfig(**env_raw.get("reward", {})),
    )
    ranges_kw = {}
    for k, v in env_raw.get("merge_ranges", {}).items():
        if len(v) != 2 or not v[0] <= v[1]:
            raise ValueError(f"env.merge_ranges.{k} must be [low, high]")
        ranges_kw[k] = tuple(v)
    env = EnvSettings(PointConfig(**env_raw.get("point", {})), merge, MergeTaskRanges(**ranges_kw))
    ev = raw.get("eval", {})
    evs = EvalSettings(
        budgets=tuple(ev.get("budgets", EvalSettings.budgets)),
        rollouts=ev.get("rollouts", EvalSettings.rollouts),
        workers=ev.get("workers", EvalSettings.workers),
    )
    if evs.rollouts <= 0:
        raise ValueError("eval.rollouts must be positive")
    if not evs.budgets or min(evs.budgets) < 0:
        raise ValueError("eval.budgets must be non-empty and non-negative")
    train = MetaTrainConfig(family=raw["family"], seed=raw["seed"], **raw["train"])
    every = raw.get("checkpoint_every", 1)
    if every <= 0:
        raise ValueError("checkpoint_every must be positive")
    return ExperimentConfig(
        family=raw["family"],
        seed=raw["seed"],
        train=train,
        env=env,
        eval=evs,
        output_dir=raw.get("output_dir", "runs"),
        checkpoint_every=every,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"{path}: cannot read: {e.strerror}") from None
    return parse_config(text, str(path))


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def config_from_dict(d: dict) -> ExperimentConfig:
    return parse_config(yaml.safe_dump(d, sort_keys=False), "<embedded>")
