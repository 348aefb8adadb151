"""Command-line front end.

Subcommands: ``simulate`` (write a dataset), ``run`` (replicated online
EM estimation), ``benchmark`` (runtime-scaling harness), ``summarize``
(tail statistics of trace files).  Exit codes: 0 success, 2 validation
failure, 3 numerical degeneracy.  Relative output paths are resolved
under the directory named by the PARISEM_OUTPUT_ROOT environment
variable when it is set.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, DegeneracyError, ParameterError
from .experiment import (
    ExperimentConfig,
    config_from_dict,
    load_config,
    resolve_output_dir,
    run_benchmark,
    run_experiment,
    summarize_trace,
    write_data_csv,
)
from .models import get_model, simulate

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DEGENERACY = 3


def _theta_arg(text: str) -> tuple:
    return tuple(float(v) for v in text.split(","))


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parisem",
        description="Particle-based online EM for state-space models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate a dataset to CSV")
    sim.add_argument("--model", required=True, choices=("lg", "sv"))
    sim.add_argument("--theta", required=True, type=_theta_arg, help="comma-separated values")
    sim.add_argument("--n-obs", required=True, type=int)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True, help="output CSV path")

    run = sub.add_parser("run", help="run a replicated estimation experiment")
    run.add_argument("--config", help="JSON config file; flags override its values")
    run.add_argument("--model", choices=("lg", "sv"))
    run.add_argument("--theta0", type=_theta_arg)
    run.add_argument("--theta-true", type=_theta_arg)
    run.add_argument("--n-obs", type=int)
    run.add_argument("--n-particles", type=int)
    run.add_argument("--k-draws", type=int)
    run.add_argument("--alpha", type=float)
    run.add_argument("--burn-in", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--algorithm", choices=("paris", "ffbsm"))
    run.add_argument("--lambda-variant", choices=("mle", "paper"))
    run.add_argument("--replicates", type=int)
    run.add_argument("--data", help='"simulate" or a CSV path')
    run.add_argument("--output-dir")
    run.add_argument("--workers", type=int)

    bench = sub.add_parser("benchmark", help="runtime scaling over a particle grid")
    bench.add_argument("--model", required=True, choices=("lg", "sv"))
    bench.add_argument("--theta", required=True, type=_theta_arg)
    bench.add_argument("--n-grid", required=True, type=_int_list, help="e.g. 250,500,1000,2000")
    bench.add_argument("--t-per-point", type=int, default=30)
    bench.add_argument("--k-draws", type=int, default=2)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--repetitions", type=int, default=5)
    bench.add_argument("--out", required=True, help="output directory for the report")

    summ = sub.add_parser("summarize", help="tail mean/dispersion of trace files")
    summ.add_argument("traces", nargs="+", help="trace CSV paths")
    summ.add_argument("--tail", type=int, required=True)
    summ.add_argument("--json", dest="json_out", help="optionally write the summary as JSON")

    return parser


def _cmd_simulate(args) -> int:
    out = resolve_output_dir(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model = get_model(args.model)
    _, ys = simulate(args.model, args.theta, args.n_obs, np.random.default_rng(args.seed))
    write_data_csv(out, ys, theta_true=args.theta, seed=args.seed, param_names=model.param_names)
    print(f"wrote {args.n_obs} observations to {out}")
    return EXIT_OK


def _cmd_run(args) -> int:
    raw = {}
    if args.config:
        raw = json.loads(Path(args.config).read_text())
    overrides = {
        name.name: getattr(args, name.name)
        for name in dataclass_fields(ExperimentConfig)
        if getattr(args, name.name, None) is not None
    }
    raw.update(overrides)
    config = config_from_dict(raw)
    result = run_experiment(config)
    for outcome in result.replicates:
        if outcome["status"] == "ok":
            theta = ", ".join(f"{v:.6g}" for v in outcome["final_theta"])
            print(f"replicate {outcome['replicate']}: theta_final = ({theta})")
        else:
            print(f"replicate {outcome['replicate']}: DEGENERATE ({outcome['error']})")
    print(f"artifacts in {result.output_dir}")
    return EXIT_OK if result.ok else EXIT_DEGENERACY


def _cmd_benchmark(args) -> int:
    report = run_benchmark(
        args.model,
        args.theta,
        args.n_grid,
        args.t_per_point,
        args.k_draws,
        args.seed,
        repetitions=args.repetitions,
    )
    out = resolve_output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "benchmark.json").write_text(json.dumps(report.to_dict(), indent=2))
    with (out / "benchmark.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["algorithm", "n", "median_step_seconds"])
        for algo, times in report.median_step_seconds.items():
            for n, t in zip(report.n_grid, times):
                writer.writerow([algo, n, f"{t:.17g}"])
    for algo, slope in report.slopes.items():
        print(f"{algo}: log-log slope {slope:.3f}")
    print(f"report in {out}")
    return EXIT_OK


def _cmd_summarize(args) -> int:
    summary = summarize_trace(args.traces, args.tail)
    for name, mean, std in zip(summary.param_names, summary.mean, summary.std):
        print(f"{name}: mean {mean:.6g}  std {std:.6g}")
    if args.json_out:
        payload = {
            "tail": args.tail,
            "n_records": summary.n_records,
            "mean": {n: float(v) for n, v in zip(summary.param_names, summary.mean)},
            "std": {n: float(v) for n, v in zip(summary.param_names, summary.std)},
        }
        Path(args.json_out).write_text(json.dumps(payload, indent=2))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "simulate": _cmd_simulate,
        "run": _cmd_run,
        "benchmark": _cmd_benchmark,
        "summarize": _cmd_summarize,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, ParameterError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except DegeneracyError as err:
        print(f"degeneracy: {err}", file=sys.stderr)
        return EXIT_DEGENERACY


if __name__ == "__main__":
    sys.exit(main())
