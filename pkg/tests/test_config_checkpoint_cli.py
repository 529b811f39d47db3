import csv
import json

import numpy as np
import pytest

from pearlplus.checkpoint import CheckpointError, describe_checkpoint, load_checkpoint, read_checkpoint, save_checkpoint
from pearlplus.cli import main
from pearlplus.config import ConfigError, dump_config, load_config, parse_config

TINY_YAML = """\
schema_version: 1
family: point
seed: 0
train:
  n_train_tasks: 2
  n_test_tasks: 2
  n_iterations: 2
  train_steps: 3
  rl_batch: 8
  context_batch: 8
  hidden: [8, 8]
  latent_dim: 2
env:
  point:
    horizon: 15
eval:
  budgets: [0, 1]
  rollouts: 2
"""


@pytest.fixture
def config_file(tmp_path):
    p = tmp_path / "tiny.yaml"
    p.write_text(TINY_YAML)
    return p


# -- config ----------------------------------------------------------------------------------


def test_parse_and_roundtrip():
    cfg = parse_config(TINY_YAML)
    assert cfg.train.rl_batch == 8 and cfg.train.hidden == (8, 8) and tuple(cfg.eval.budgets) == (0, 1)
    again = parse_config(dump_config(cfg))
    assert again.to_dict() == cfg.to_dict() and again.config_hash() == cfg.config_hash()


def test_unknown_key_reports_line():
    text = TINY_YAML.replace("rl_batch: 8", "rl_bach: 8")
    with pytest.raises(ConfigError, match=r"c.yaml:9: unknown key 'train.rl_bach'"):
        parse_config(text, "c.yaml")


def test_wrong_type_rejected():
    with pytest.raises(ConfigError, match="must be of type"):
        parse_config(TINY_YAML.replace("rl_batch: 8", "rl_batch: eight"))


def test_missing_required_and_bad_version():
    with pytest.raises(ConfigError):
        parse_config(TINY_YAML.replace("seed: 0\n", ""))
    with pytest.raises(ConfigError):
        parse_config(TINY_YAML.replace("schema_version: 1", "schema_version: 2"))


def test_invalid_values_rejected():
    with pytest.raises(ConfigError):
        parse_config(TINY_YAML.replace("rl_batch: 8", "rl_batch: 0"))
    with pytest.raises(ConfigError):
        parse_config(TINY_YAML.replace("n_iterations: 2", "n_iterations: 2\n  alpha: -0.5"))


def test_scientific_notation_float():
    cfg = parse_config(TINY_YAML.replace("n_iterations: 2", "n_iterations: 2\n  lr_actor: 1e-3"))
    assert cfg.train.lr_actor == 1e-3


def test_hash_ignores_run_length_and_output():
    cfg = parse_config(TINY_YAML)
    longer = parse_config(TINY_YAML.replace("n_iterations: 2", "n_iterations: 9") + "output_dir: elsewhere\n")
    assert cfg.config_hash() == longer.config_hash()
    assert cfg.config_hash() != cfg.with_seed(1).config_hash()


# -- CLI + checkpoints ------------------------------------------------------------------------------


def read_bytes(path):
    return path.read_bytes()


def test_train_is_byte_reproducible(config_file, tmp_path):
    for name in ("a", "b"):
        assert main(["train", str(config_file), "--output-dir", str(tmp_path / name)]) == 0
    for f in ("training_curve.csv", "checkpoint_0001.ckpt", "checkpoint_0002.ckpt"):
        assert read_bytes(tmp_path / "a" / f) == read_bytes(tmp_path / "b" / f)


def test_resume_equals_uninterrupted(config_file, tmp_path):
    assert main(["train", str(config_file), "--output-dir", str(tmp_path / "full")]) == 0
    assert main(["train", str(config_file), "--iterations", "1", "--output-dir", str(tmp_path / "part")]) == 0
    ck = tmp_path / "part" / "checkpoint_0001.ckpt"
    assert main(["train", str(config_file), "--resume", str(ck), "--output-dir", str(tmp_path / "part")]) == 0
    for f in ("training_curve.csv", "checkpoint_0002.ckpt"):
        assert read_bytes(tmp_path / "full" / f) == read_bytes(tmp_path / "part" / f)


def test_resume_refuses_other_config(config_file, tmp_path, capsys):
    assert main(["train", str(config_file), "--iterations", "1", "--output-dir", str(tmp_path)]) == 0
    other = tmp_path / "other.yaml"
    other.write_text(TINY_YAML.replace("rl_batch: 8", "rl_batch: 16"))
    rc = main(["train", str(other), "--resume", str(tmp_path / "checkpoint_0001.ckpt"), "--output-dir", str(tmp_path)])
    assert rc == 2 and "hash" in capsys.readouterr().err


def test_eval_outputs_and_recount(config_file, tmp_path):
    assert main(["train", str(config_file), "--output-dir", str(tmp_path)]) == 0
    ck = tmp_path / "checkpoint_0002.ckpt"
    assert main(["eval", str(ck), "--rollouts", "3", "--output-dir", str(tmp_path / "e1")]) == 0
    assert main(["eval", str(ck), "--rollouts", "3", "--workers", "2", "--output-dir", str(tmp_path / "e2")]) == 0
    for f in ("report.csv", "report.json", "traces.csv"):
        assert read_bytes(tmp_path / "e1" / f) == read_bytes(tmp_path / "e2" / f)
    with open(tmp_path / "e1" / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    with open(tmp_path / "e1" / "traces.csv") as fh:
        traces = list(csv.DictReader(fh))
    for row in rows:
        ends = [t for t in traces if t["task"] == row["task"] and t["budget"] == row["budget"] and t["terminal"] in ("1", "True")]
        assert len(ends) == int(row["n_rollouts"]) == 3
        assert sum(int(t["failure"] in ("1", "True")) for t in ends) == int(row["failures"])
    summary = json.loads((tmp_path / "e1" / "report.json").read_text())
    assert set(summary["budgets"]) == {"0", "1"}


def test_eval_rejects_zero_rollouts(config_file, tmp_path, capsys):
    assert main(["train", str(config_file), "--iterations", "1", "--output-dir", str(tmp_path)]) == 0
    assert main(["eval", str(tmp_path / "checkpoint_0001.ckpt"), "--rollouts", "0"]) == 2
    assert "rollouts" in capsys.readouterr().err


def test_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(TINY_YAML.replace("rl_batch", "rl_bach"))
    assert main(["train", str(p), "--output-dir", str(tmp_path)]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_inspect_and_corrupt_checkpoint(config_file, tmp_path, capsys):
    assert main(["train", str(config_file), "--iterations", "1", "--output-dir", str(tmp_path)]) == 0
    ck = tmp_path / "checkpoint_0001.ckpt"
    capsys.readouterr()
    assert main(["inspect-checkpoint", str(ck)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["iteration"] == 1
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOTACKPT" + ck.read_bytes()[8:])
    with pytest.raises(CheckpointError):
        read_checkpoint(bad)
    bad.write_bytes(ck.read_bytes()[:40])
    with pytest.raises(CheckpointError):
        read_checkpoint(bad)


def test_checkpoint_restores_learner_exactly(config_file, tmp_path):
    from pearlplus.meta import MetaLearner

    cfg = load_config(config_file)
    assert main(["train", str(config_file), "--iterations", "1", "--output-dir", str(tmp_path)]) == 0
    learner, cfg2 = load_checkpoint(tmp_path / "checkpoint_0001.ckpt", expect_hash=cfg.config_hash())
    assert isinstance(learner, MetaLearner) and learner.iteration == 1
    save_checkpoint(tmp_path / "again.ckpt", learner, cfg2)
    assert read_bytes(tmp_path / "again.ckpt") == read_bytes(tmp_path / "checkpoint_0001.ckpt")
    assert describe_checkpoint(tmp_path / "again.ckpt")["config_hash"] == cfg.config_hash()


def test_sweep_alpha_outputs(config_file, tmp_path):
    out = tmp_path / "sweep"
    rc = main(["sweep-alpha", str(config_file), "--alphas", "0,0.1", "--seeds", "0", "--rollouts", "2", "--output-dir", str(out)])
    assert rc == 0
    with open(out / "sweep_table.csv") as fh:
        table = list(csv.DictReader(fh))
    assert [float(r["alpha"]) for r in table] == [0.0, 0.1]
    assert (out / "sweep_runs.csv").exists() and (out / "sweep.json").exists()
    for r in table:
        assert 0.0 <= float(r["before_failure"]) <= 1.0


def test_shipped_configs_match_acceptance_settings():
    from dataclasses import replace
    from pathlib import Path

    import test_acceptance as acc

    root = Path(__file__).resolve().parents[1] / "configs"
    for name, cfg, env in (("point_desk.yaml", acc.POINT, acc.POINT_ENV), ("merge_desk.yaml", acc.MERGE, acc.MERGE_ENV)):
        loaded = load_config(root / name)
        assert loaded.train == replace(cfg, alpha=0.1, prior_critic=True, seed=0)
        assert loaded.env.point == env.point and loaded.env.merge == env.merge
