"""Command line interface: run experiments from a JSON config, summarize
saved results, and run the built-in demo presets."""

from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
from pathlib import Path

from .bench import (
    MethodOutcome,
    TrialResult,
    run_experiment,
    summarize,
    summary_table,
    write_outputs,
)
from .benchconfig import ExperimentConfig

DEMO_PRESETS: dict[str, dict] = {
    "t1": {
        "task": "t1",
        "system": {"type": "random", "n_x": 10, "n_u": 1, "n_y": 1},
        "horizon": {"L": 40, "L0": 10},
        "data": {"N": 100, "construction": "hankel"},
        "offline_noise": {"family": "student_t", "xi": 10.0,
                          "sigma_w2": 0.0, "sigma_v2": 1e-4},
        "online_noise": {"family": "student_t", "xi": 10.0,
                         "sigma_w2": 0.0, "sigma_v2": 1e-2},
        "methods": ["nonlinear", "sqp", "one_iteration"],
        "trials": 100,
        "base_seed": 0,
    },
    "t2": {
        "task": "t2",
        "system": {"type": "random", "n_x": 10, "n_u": 1, "n_y": 1},
        "horizon": {"L": 40, "L0": 10},
        "data": {"N": 100, "construction": "hankel"},
        "offline_noise": {"family": "gaussian", "sigma_w2": 1e-4, "sigma_v2": 1e-4},
        "online_noise": {"family": "gaussian", "sigma_w2": 1e-2, "sigma_v2": 1e-2},
        "methods": ["nonlinear", "one_iteration", "predictor16"],
        "trials": 100,
        "base_seed": 0,
    },
    "t3": {
        "task": "t3",
        "system": {"type": "diffusion", "alpha": 0.4, "beta": 0.3},
        "horizon": {"L": 40, "L0": 10},
        "data": {"N": 100, "construction": "hankel"},
        "offline_noise": {"family": "gaussian", "sigma_w2": 0.0, "sigma_v2": 1e-2,
                          "rho": 0.9, "decay_horizon": 200},
        "online_noise": {"family": "gaussian", "sigma_w2": 0.0, "sigma_v2": 1e-2,
                         "rho": 0.9, "decay_horizon": 200},
        "control": {"q": 5.0, "r": 0.5,
                    "y_ref": [[1.0, 10], [-1.0, 10], [1.0, 10]],
                    "u_ref": "dc_gain"},
        "methods": ["nonlinear", "sqp", "one_iteration", "deepc-unreg"],
        "deepc_soft_yp": True,
        "trials": 100,
        "base_seed": 0,
    },
}


def demo_config(name: str) -> ExperimentConfig:
    return ExperimentConfig(raw=copy.deepcopy(DEMO_PRESETS[name]))


def _apply_overrides(raw: dict, args: argparse.Namespace) -> dict:
    raw = copy.deepcopy(raw)
    if args.trials is not None:
        raw["trials"] = args.trials
    if args.seed is not None:
        raw["base_seed"] = args.seed
    return raw


def _run_and_report(config: ExperimentConfig, args: argparse.Namespace) -> int:
    results = run_experiment(config, workers=args.workers)
    out = write_outputs(config, results, args.out, boxplot=args.boxplot)
    print(summary_table(summarize(results)))
    print(f"results written to {out}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    config = ExperimentConfig(raw=_apply_overrides(raw, args))
    return _run_and_report(config, args)


def _cmd_demo(args: argparse.Namespace) -> int:
    config = ExperimentConfig(raw=_apply_overrides(DEMO_PRESETS[args.preset], args))
    return _run_and_report(config, args)


def _cmd_summarize(args: argparse.Namespace) -> int:
    path = Path(args.indir) / "trials.csv"
    with path.open(encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    by_trial: dict[int, TrialResult] = {}
    for row in rows:
        trial = int(row["trial"])
        res = by_trial.setdefault(trial, TrialResult(trial=trial, seed=row["seed"]))
        metric = float(row["metric"]) if row["metric"] else float("nan")
        res.outcomes[row["method"]] = MethodOutcome(
            metric=metric, wall_ms=0.0,
            converged=row["converged"] == "True",
            error="" if row["metric"] else "recorded failure",
        )
    results = [by_trial[k] for k in sorted(by_trial)]
    print(summary_table(summarize(results)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddk",
        description="Data-driven smoothing, prediction, and control benchmarks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_args(p):
        p.add_argument("--trials", type=int, default=None, help="override trial count")
        p.add_argument("--seed", type=int, default=None, help="override base seed")
        p.add_argument("--workers", type=int, default=1, help="worker processes")
        p.add_argument("--out", default="ddk-results", help="output directory")
        p.add_argument("--boxplot", action="store_true", help="also write boxplot.svg")

    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("--config", required=True, help="path to the config JSON")
    add_run_args(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_demo = sub.add_parser("demo", help="run a built-in benchmark preset")
    p_demo.add_argument("preset", choices=sorted(DEMO_PRESETS))
    add_run_args(p_demo)
    p_demo.set_defaults(func=_cmd_demo)

    p_sum = sub.add_parser("summarize", help="summarize a saved trials.csv")
    p_sum.add_argument("--in", dest="indir", required=True, help="results directory")
    p_sum.set_defaults(func=_cmd_summarize)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
