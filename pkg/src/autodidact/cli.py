"""Command-line entry point: ``autodidact train|evaluate|analyze ...``."""
from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from pathlib import Path

from . import analysis
from .checkpoint import load_checkpoint
from .envs import make_env
from .runlog import read_runlog
from .trainer import TrainConfig, TrainingAborted, evaluate, train

log = logging.getLogger("autodidact")


@contextlib.contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="") as f:
            yield f


def cmd_train(args) -> int:
    config = TrainConfig.from_json(args.config)
    seeds = args.seed if args.seed else config.seeds
    out = Path(args.out)
    for seed in seeds:
        run_dir = out / f"seed_{seed}"
        runlog = train(config, run_dir, seed=seed)
        evals = runlog.evaluations()
        last = evals[-1]["payload"]["mean_return"] if evals else float("nan")
        end = runlog.of_type("run_end")[-1]["payload"]["global_step"]
        print(f"seed {seed}: {end} steps, final mean return {last:.4g}, log {run_dir / 'runlog.jsonl'}")
    return 0


def cmd_evaluate(args) -> int:
    net, params, header = load_checkpoint(args.checkpoint)
    score = evaluate(net, params, args.env, args.episodes, args.step_cap, args.seed)
    with _output(args.out) as f:
        analysis.write_csv([{"checkpoint": Path(args.checkpoint).name, "env": args.env,
                             "episodes": args.episodes, "mean_return": score}], f)
    return 0


def cmd_scores(args) -> int:
    table = analysis.load_score_table(args.table)
    result = analysis.normalized_scores(table)
    rows = [{"method": "A3C", "mean": 1.0, "median": 1.0}]
    rows += [{"method": m, "mean": mean, "median": med} for m, (mean, med) in result.items()]
    with _output(args.out) as f:
        analysis.write_csv(rows, f)
    return 0


def cmd_improvement(args) -> int:
    rows = analysis.percent_improvement(analysis.load_score_table(args.table))
    with _output(args.out) as f:
        analysis.write_csv(rows, f)
    return 0


def cmd_weight_diff(args) -> int:
    rows = analysis.weight_diff_trace(read_runlog(args.car_log), read_runlog(args.lr_log),
                                      args.lam, args.episode)
    with _output(args.out) as f:
        analysis.write_csv(rows, f)
    return 0


def cmd_conf_bins(args) -> int:
    grid = analysis.confidence_value_change_bins(read_runlog(args.log), args.x_bins, args.y_bins,
                                                 args.x_width, args.y_width)
    header = ["x_bin", "y_bin", "pct_change_lo", "pct_change_hi", "step_lo", "step_hi",
              "count", "mean_confidence", "mean_abs_change"]
    with _output(args.out) as f:
        analysis.write_csv(grid.rows(), f, header)
    return 0


def cmd_value_error(args) -> int:
    net, params, _ = load_checkpoint(args.checkpoint)
    env = make_env(args.env)
    rows = analysis.value_error_curve(
        env, lambda x: net.forward(params, x).value, lambda x: net.forward(params, x).policy,
        args.gamma, args.episodes, args.seed, args.step_cap, args.dp_truth)
    with _output(args.out) as f:
        analysis.write_csv(rows, f, ["t", "mse", "episodes"])
    return 0


def cmd_conf_trace(args) -> int:
    rows = analysis.confidence_trace(read_runlog(args.log), args.episode)
    with _output(args.out) as f:
        analysis.write_csv(rows, f, ["step", "confidence", "value", "reward"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="autodidact", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a JSON config")
    t.add_argument("config", help="JSON run configuration")
    t.add_argument("--out", default="runs", help="output directory (one seed_<n>/ per seed)")
    t.add_argument("--seed", type=int, action="append",
                   help="train only this seed (repeatable); default: the config's seeds")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="mean return of a checkpoint's policy")
    e.add_argument("checkpoint")
    e.add_argument("--env", required=True, help='environment, e.g. "DelayedCorridor(30)"')
    e.add_argument("--episodes", type=int, default=20)
    e.add_argument("--step-cap", type=int, default=500)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", help="CSV output path (default stdout)")
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("analyze", help="analyses over score tables, run logs and checkpoints")
    asub = a.add_subparsers(dest="analysis", required=True)

    def add(name, func, help_text):
        sp = asub.add_parser(name, help=help_text)
        sp.add_argument("--out", help="CSV output path (default stdout)")
        sp.set_defaults(func=func)
        return sp

    s = add("scores", cmd_scores, "mean/median of A3C-normalized scores")
    s.add_argument("--table", help="task,CARA3C,LRA3C,A3C CSV (default: shipped Atari table)")
    s = add("improvement", cmd_improvement, "percent improvement over A3C per task")
    s.add_argument("--table", help="task,CARA3C,LRA3C,A3C CSV (default: shipped Atari table)")

    s = add("weight-diff", cmd_weight_diff, "CAR minus lambda weights along an evaluation episode")
    s.add_argument("car_log")
    s.add_argument("lr_log")
    s.add_argument("--lambda", dest="lam", type=float, required=True)
    s.add_argument("--episode", type=int, help="evaluation episode index (default: last)")

    s = add("conf-bins", cmd_conf_bins, "mean confidence by value change and training progress")
    s.add_argument("log")
    s.add_argument("--x-bins", type=int, default=100)
    s.add_argument("--y-bins", type=int, default=100)
    s.add_argument("--x-width", type=float, default=1.0, help="percent-change bin width")
    s.add_argument("--y-width", type=float, help="step bin width (default total_steps/100)")

    s = add("value-error", cmd_value_error, "per-timestep squared value error of a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("--env", required=True)
    s.add_argument("--episodes", type=int, default=10)
    s.add_argument("--gamma", type=float, default=0.99)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--step-cap", type=int, default=20_000)
    s.add_argument("--dp-truth", action="store_true",
                   help="compare against exact values of the acting policy")

    s = add("conf-trace", cmd_conf_trace, "confidence over one logged evaluation episode")
    s.add_argument("log")
    s.add_argument("--episode", type=int, required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ValueError, TypeError, OSError, TrainingAborted) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
