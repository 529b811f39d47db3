"""Command line entry point: ``pearlplus train|eval|sweep-alpha|inspect-checkpoint``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .checkpoint import CheckpointError, describe_checkpoint, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, load_config
from .envs import write_trace_csv
from .meta import AdaptationReport, MetaLearner, SweepRun, alpha_sweep, meta_test

log = logging.getLogger("pearlplus")

CURVE_FIELDS = (
    "iteration", "env_steps", "mean_train_return",
    "loss_critic", "loss_kl", "loss_actor", "loss_actor_posterior", "loss_value",
    "loss_actor_prior", "loss_prior_critic", "loss_prior_value",
)
REPORT_FIELDS = ("task", "budget", "n_rollouts", "mean_return", "failure_rate", "failures")
SWEEP_RUN_FIELDS = ("alpha", "seed", "before_failure", "after_failure", "before_return", "after_return")
SWEEP_TABLE_FIELDS = ("alpha", "n_seeds", "before_failure", "after_failure", "before_return", "after_return")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, bool):
        return int(v)
    return "" if v is None else v


def write_csv(path, rows: Sequence[dict], fieldnames: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fieldnames), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k)) for k in fieldnames})


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _attach_log(out_dir: Path) -> logging.Handler:
    # timestamps go here and nowhere else, so the data files stay byte-stable
    handler = logging.FileHandler(out_dir / "run.log")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("pearlplus")
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    return handler


def _detach_log(handler: logging.Handler) -> None:
    logging.getLogger("pearlplus").removeHandler(handler)
    handler.close()


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def checkpoint_name(iteration: int) -> str:
    return f"checkpoint_{iteration:04d}.ckpt"


# -- reports ---------------------------------------------------------------------------


def write_report(out_dir: Path, report: AdaptationReport, extra: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / "report.csv", report.rows(), REPORT_FIELDS)
    summary = report.summary()
    summary["per_task"] = report.rows()
    if extra:
        summary.update(extra)
    write_json(out_dir / "report.json", summary)
    write_trace_csv(out_dir / "traces.csv", report.traces, extra_fields=("task", "budget", "rollout"))


# -- commands ----------------------------------------------------------------------------


def _train(cfg: ExperimentConfig, out_dir: Path, learner: MetaLearner) -> MetaLearner:
    def after_iteration(lrn: MetaLearner, row: dict) -> None:
        write_csv(out_dir / "training_curve.csv", lrn.curve, CURVE_FIELDS)
        if lrn.iteration % cfg.checkpoint_every == 0 or lrn.iteration == cfg.train.n_iterations:
            save_checkpoint(out_dir / checkpoint_name(lrn.iteration), lrn, cfg)

    remaining = cfg.train.n_iterations - learner.iteration
    if remaining < 0:
        raise ValueError(
            f"checkpoint is at iteration {learner.iteration}, beyond n_iterations={cfg.train.n_iterations}"
        )
    learner.train(remaining, callback=after_iteration)
    write_csv(out_dir / "training_curve.csv", learner.curve, CURVE_FIELDS)
    return learner


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.iterations is not None:
        cfg = replace(cfg, train=replace(cfg.train, n_iterations=args.iterations))
    out_dir = Path(args.output_dir or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    handler = _attach_log(out_dir)
    try:
        if args.resume:
            learner, _ = load_checkpoint(args.resume, expect_hash=cfg.config_hash())
            log.info("resumed from %s at iteration %d", args.resume, learner.iteration)
        else:
            learner = MetaLearner(cfg.train, cfg.env)
        log.info("config hash %s", cfg.config_hash())
        _train(cfg, out_dir, learner)
    finally:
        _detach_log(handler)
    print(f"trained {learner.iteration} iterations, {learner.env_steps} env steps -> {out_dir}")
    return 0


def cmd_eval(args) -> int:
    if args.rollouts is not None and args.rollouts <= 0:
        raise ValueError("--rollouts must be positive")
    learner, cfg = load_checkpoint(args.checkpoint)
    budgets = args.budgets if args.budgets is not None else list(cfg.eval.budgets)
    rollouts = args.rollouts if args.rollouts is not None else cfg.eval.rollouts
    workers = args.workers if args.workers is not None else cfg.eval.workers
    seed = cfg.seed if args.seed is None else args.seed
    out_dir = Path(args.output_dir or Path(args.checkpoint).parent / "eval")
    out_dir.mkdir(parents=True, exist_ok=True)
    handler = _attach_log(out_dir)
    try:
        envs = [learner.make_env(t) for t in learner.test_tasks]
        report = meta_test(learner.agent, envs, budgets, rollouts, root_seed=seed, workers=workers, family=cfg.family)
        write_report(out_dir, report, {"seed": seed, "iteration": learner.iteration, "rollouts": rollouts})
        log.info("evaluated %s on %d tasks", args.checkpoint, len(envs))
    finally:
        _detach_log(handler)
    for b in report.budgets:
        print(f"budget {b}: mean return {report.mean_return(b):.3f}, failure rate {report.failure_rate(b):.3f}")
    return 0


def cmd_sweep_alpha(args) -> int:
    cfg = load_config(args.config)
    if any(a < 0 for a in args.alphas):
        raise ValueError("alpha must be non-negative")
    if not args.alphas or not args.seeds:
        raise ValueError("need at least one alpha and one seed")
    out_dir = Path(args.output_dir or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    handler = _attach_log(out_dir)
    rollouts = args.rollouts if args.rollouts is not None else cfg.eval.rollouts

    def on_run(run: SweepRun, learner: MetaLearner) -> None:
        run_dir = out_dir / f"alpha_{run.alpha!r}_seed_{run.seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        write_csv(run_dir / "training_curve.csv", run.curve, CURVE_FIELDS)
        write_report(run_dir, run.report, {"alpha": run.alpha, "seed": run.seed})
        log.info("finished alpha=%r seed=%d", run.alpha, run.seed)

    try:
        runs, table = alpha_sweep(
            cfg.train, args.alphas, args.seeds, cfg.env, cfg.eval.budgets, rollouts,
            workers=cfg.eval.workers, on_run=on_run,
        )
    finally:
        _detach_log(handler)
    run_rows = [{k: getattr(r, k) for k in SWEEP_RUN_FIELDS} for r in runs]
    write_csv(out_dir / "sweep_runs.csv", run_rows, SWEEP_RUN_FIELDS)
    write_csv(out_dir / "sweep_table.csv", table, SWEEP_TABLE_FIELDS)
    write_json(out_dir / "sweep.json", {"runs": run_rows, "table": table, "budgets": sorted(set(cfg.eval.budgets))})
    for row in table:
        print(
            f"alpha {row['alpha']:g}: before {row['before_failure']:.3f} after {row['after_failure']:.3f} "
            f"return {row['before_return']:.2f} -> {row['after_return']:.2f}"
        )
    return 0


def cmd_inspect(args) -> int:
    print(json.dumps(describe_checkpoint(args.checkpoint), indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pearlplus", description="Meta-RL with a safe prior policy.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="meta-train from a config file")
    t.add_argument("config")
    t.add_argument("--seed", type=int)
    t.add_argument("--resume", metavar="CHECKPOINT")
    t.add_argument("--iterations", type=int, help="override train.n_iterations")
    t.add_argument("--output-dir")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="meta-test a checkpoint on its held-out tasks")
    e.add_argument("checkpoint")
    e.add_argument("--budgets", type=_int_list)
    e.add_argument("--rollouts", type=int)
    e.add_argument("--workers", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--output-dir")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep-alpha", help="train and meta-test over a grid of alpha and seeds")
    s.add_argument("config")
    s.add_argument("--alphas", type=_float_list, required=True)
    s.add_argument("--seeds", type=_int_list, required=True)
    s.add_argument("--rollouts", type=int)
    s.add_argument("--output-dir")
    s.set_defaults(func=cmd_sweep_alpha)

    i = sub.add_parser("inspect-checkpoint", help="print a checkpoint's header")
    i.add_argument("checkpoint")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
