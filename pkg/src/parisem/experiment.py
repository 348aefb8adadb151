"""Experiment orchestration: configs, replicate runs, traces, benchmarks.

A run simulates (or ingests) one observation sequence, estimates on it
with ``replicates`` independently seeded drivers, and persists per-step
traces, a final-parameter summary, and a manifest that echoes everything
needed to reproduce the outputs byte for byte.  The benchmark harness
times both drivers over a particle-count grid and fits log-log slopes,
and can solve for the quadratic algorithm's particle count that matches
a linear-algorithm time budget.
"""

from __future__ import annotations

import csv
import json
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DegeneracyError
from .models import MODELS, get_model, simulate
from .online_em import StepSizeSchedule, run_online_em
from .smoother import BackwardSampleConfig

OUTPUT_ROOT_ENV = "PARISEM_OUTPUT_ROOT"

ALGORITHMS = ("paris", "ffbsm")
LAMBDA_VARIANTS = ("mle", "paper")


def _fmt(x: float) -> str:
    """17 significant digits: lossless float round-trip in text form."""
    return format(float(x), ".17g")


# ----------------------------------------------------------------------
# Configuration
# ----------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    model: str
    theta0: tuple
    n_obs: int
    theta_true: tuple | None = None
    n_particles: int = 500
    k_draws: int = 2
    alpha: float = 0.6
    burn_in: int = 60
    seed: int = 0
    algorithm: str = "paris"
    lambda_variant: str = "mle"
    replicates: int = 1
    data: str = "simulate"
    output_dir: str = "experiment"
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        bad: list[str] = []
        if self.model not in MODELS:
            bad.append("model")
        if self.n_particles < 1:
            bad.append("n_particles")
        if self.k_draws < 1:
            bad.append("k_draws")
        if not 0.5 < self.alpha <= 1.0:
            bad.append("alpha")
        if self.n_obs < 1:
            bad.append("n_obs")
        if self.burn_in < 0:
            bad.append("burn_in")
        if self.replicates < 1:
            bad.append("replicates")
        if self.algorithm not in ALGORITHMS:
            bad.append("algorithm")
        if self.lambda_variant not in LAMBDA_VARIANTS:
            bad.append("lambda_variant")
        if self.workers < 1:
            bad.append("workers")
        if self.model in MODELS:
            dim = len(MODELS[self.model]().param_names)
            if len(self.theta0) != dim:
                bad.append("theta0")
            if self.data == "simulate" and (
                self.theta_true is None or len(self.theta_true) != dim
            ):
                bad.append("theta_true")
        if bad:
            raise ConfigError(f"invalid configuration fields: {', '.join(bad)}", bad)

    def backward_config(self) -> BackwardSampleConfig:
        return BackwardSampleConfig(k_draws=self.k_draws, allow_single_draw=True)

    def schedule(self) -> StepSizeSchedule:
        return StepSizeSchedule(self.alpha)


def _theta_from_obj(obj, param_names, field_name):
    """Accept a parameter vector as a list or as named JSON fields."""
    if isinstance(obj, dict):
        missing = [p for p in param_names if p not in obj]
        extra = [k for k in obj if k not in param_names]
        if missing or extra:
            raise ConfigError(
                f"{field_name} must carry exactly the fields {param_names}; "
                f"missing {missing}, unknown {extra}",
                [field_name],
            )
        return tuple(float(obj[p]) for p in param_names)
    return tuple(float(v) for v in obj)


def load_config(path) -> ExperimentConfig:
    """Read and validate a JSON experiment configuration."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown configuration fields: {', '.join(unknown)}", unknown)
    missing = [k for k in ("model", "theta0", "n_obs") if k not in raw]
    if missing:
        raise ConfigError(f"missing configuration fields: {', '.join(missing)}", missing)
    raw = dict(raw)
    model_id = raw.get("model")
    if model_id in MODELS:
        names = MODELS[model_id]().param_names
        raw["theta0"] = _theta_from_obj(raw["theta0"], names, "theta0")
        if raw.get("theta_true") is not None:
            raw["theta_true"] = _theta_from_obj(raw["theta_true"], names, "theta_true")
    return ExperimentConfig(**raw)


def resolve_output_dir(output_dir) -> Path:
    """Relative output paths live under the output-root environment variable."""
    out = Path(output_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


# ----------------------------------------------------------------------
# Data files
# ----------------------------------------------------------------------


def write_data_csv(path, observations, theta_true=None, seed=None, param_names=None):
    """Two-column (t, y) CSV plus a JSON sidecar with provenance."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "y"])
        for t, y in enumerate(observations):
            writer.writerow([t, _fmt(y)])
    sidecar = {"seed": seed}
    if theta_true is not None:
        if param_names:
            sidecar["theta_true"] = {
                name: float(v) for name, v in zip(param_names, theta_true)
            }
        else:
            sidecar["theta_true"] = [float(v) for v in theta_true]
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))


def read_data_csv(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1]


# ----------------------------------------------------------------------
# Replicate runner
# ----------------------------------------------------------------------

TRACE_FIXED_COLUMNS = ("ess", "ar_trials_mean", "step_ns")


def trace_header(param_names) -> list[str]:
    return ["t", *param_names, *TRACE_FIXED_COLUMNS]


class _TraceWriter:
    """Streams trace records to CSV; keeps only counters in memory."""

    def __init__(self, path, param_names):
        self.path = Path(path)
        self._fh = self.path.open("w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(trace_header(param_names))
        self.rows = 0
        self.held_steps = 0

    def __call__(self, record):
        self._writer.writerow(
            [
                record.t,
                *(_fmt(v) for v in record.theta),
                _fmt(record.ess),
                _fmt(record.ar_trials_mean),
                record.step_ns,
            ]
        )
        self.rows += 1
        self.held_steps += bool(record.mstep_held)

    def close(self):
        self._fh.close()


def _run_replicate(config: ExperimentConfig, observations, replicate: int, trace_path):
    """One seeded estimation run; returns a manifest fragment."""
    model = get_model(config.model)
    seed = config.seed + replicate
    rng = np.random.default_rng(seed)
    writer = _TraceWriter(trace_path, model.param_names)
    started = time.perf_counter()
    outcome = {
        "replicate": replicate,
        "seed": seed,
        "trace": Path(trace_path).name,
        "status": "ok",
    }
    try:
        theta, _ = run_online_em(
            model,
            config.theta0,
            observations,
            config.n_particles,
            config.backward_config(),
            config.schedule(),
            config.burn_in,
            rng,
            algorithm=config.algorithm,
            lambda_variant=config.lambda_variant,
            trace_sink=writer,
        )
        outcome["final_theta"] = [float(v) for v in theta]
    except DegeneracyError as err:
        outcome["status"] = "degenerate"
        outcome["error"] = str(err)
        outcome["failed_at_t"] = err.t
    finally:
        writer.close()
    outcome["trace_rows"] = writer.rows
    outcome["mstep_held_steps"] = writer.held_steps
    outcome["wall_seconds"] = time.perf_counter() - started
    return outcome


@dataclass
class ExperimentResult:
    output_dir: Path
    replicates: list[dict]
    summary_path: Path
    manifest_path: Path

    @property
    def ok(self) -> bool:
        return all(r["status"] == "ok" for r in self.replicates)


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Simulate or ingest data once, then run all replicates over it.

    Replicate r (1-based) is seeded with ``seed + r``; the data itself
    uses the master seed alone, so every replicate sees the same
    observations.  Artifacts: ``data.csv`` (+ sidecar) when simulating,
    one ``trace_rNN.csv`` per replicate, ``summary.csv`` with the final
    parameters and their spread, and ``manifest.json``.
    """
    out = resolve_output_dir(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = get_model(config.model)

    if config.data == "simulate":
        _, observations = simulate(
            config.model, config.theta_true, config.n_obs, np.random.default_rng(config.seed)
        )
        write_data_csv(
            out / "data.csv",
            observations,
            theta_true=config.theta_true,
            seed=config.seed,
            param_names=model.param_names,
        )
        data_source = "simulate"
    else:
        observations = read_data_csv(config.data)
        if observations.shape[0] < config.n_obs:
            raise ConfigError(
                f"data file holds {observations.shape[0]} rows, fewer than "
                f"n_obs={config.n_obs}",
                ["n_obs", "data"],
            )
        observations = observations[: config.n_obs]
        data_source = str(config.data)

    tasks = [
        (r, out / f"trace_r{r:02d}.csv") for r in range(1, config.replicates + 1)
    ]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [
                pool.submit(_run_replicate, config, observations, r, path)
                for r, path in tasks
            ]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [_run_replicate(config, observations, r, path) for r, path in tasks]
    outcomes.sort(key=lambda o: o["replicate"])

    summary_path = out / "summary.csv"
    _write_summary(summary_path, model.param_names, outcomes)

    manifest_path = out / "manifest.json"
    manifest = {
        "config": asdict(config),
        "seed_derivation": "data: master seed; replicate r (1-based): seed + r",
        "versions": {
            "parisem": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "data_source": data_source,
        "n_observations": int(len(observations)),
        "trace_columns": trace_header(model.param_names),
        "replicates": outcomes,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2))
    return ExperimentResult(out, outcomes, summary_path, manifest_path)


def _write_summary(path, param_names, outcomes):
    finals = [o["final_theta"] for o in outcomes if o["status"] == "ok"]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["replicate", *param_names])
        for o in outcomes:
            if o["status"] == "ok":
                writer.writerow([o["replicate"], *(_fmt(v) for v in o["final_theta"])])
            else:
                writer.writerow([o["replicate"], *(["degenerate"] * len(param_names))])
        if finals:
            arr = np.array(finals)
            writer.writerow(["mean", *(_fmt(v) for v in arr.mean(axis=0))])
            writer.writerow(["std", *(_fmt(v) for v in arr.std(axis=0, ddof=1 if len(finals) > 1 else 0))])
            for label, q in (("min", 0.0), ("q25", 0.25), ("median", 0.5), ("q75", 0.75), ("max", 1.0)):
                writer.writerow([label, *(_fmt(v) for v in np.quantile(arr, q, axis=0))])


# ----------------------------------------------------------------------
# Trace summaries
# ----------------------------------------------------------------------


@dataclass
class TraceSummary:
    param_names: tuple
    mean: np.ndarray
    std: np.ndarray
    n_records: int


def read_trace(path) -> tuple[tuple, np.ndarray]:
    """Return (param_names, array of parameter columns) from a trace CSV."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "t" or header[-3:] != list(TRACE_FIXED_COLUMNS):
            raise ValueError(f"{path} does not look like a trace CSV")
        names = tuple(header[1:-3])
        rows = [[float(v) for v in row[1 : 1 + len(names)]] for row in reader]
    return names, np.array(rows)


def summarize_trace(paths, tail: int) -> TraceSummary:
    """Tail-mean and dispersion of parameter columns pooled across traces."""
    if not paths:
        raise ValueError("no trace files given")
    if tail < 1:
        raise ValueError("tail must be >= 1")
    pooled = []
    names = None
    for path in paths:
        trace_names, values = read_trace(path)
        if names is None:
            names = trace_names
        elif names != trace_names:
            raise ValueError("traces carry different parameter columns")
        if values.shape[0] < tail:
            raise ValueError(
                f"{path} holds {values.shape[0]} records, fewer than tail={tail}"
            )
        pooled.append(values[-tail:])
    stacked = np.concatenate(pooled, axis=0)
    ddof = 1 if stacked.shape[0] > 1 else 0
    return TraceSummary(
        param_names=names,
        mean=stacked.mean(axis=0),
        std=stacked.std(axis=0, ddof=ddof),
        n_records=stacked.shape[0],
    )


# ----------------------------------------------------------------------
# Benchmark harness
# ----------------------------------------------------------------------


@dataclass
class BenchmarkReport:
    n_grid: list[int]
    t_per_point: int
    median_step_seconds: dict  # algorithm -> list aligned with n_grid
    slopes: dict  # algorithm -> fitted log-log slope
    raw: list = field(default_factory=list)  # (algorithm, n, repetition, step_seconds)

    def to_dict(self) -> dict:
        return {
            "n_grid": self.n_grid,
            "t_per_point": self.t_per_point,
            "median_step_seconds": self.median_step_seconds,
            "slopes": self.slopes,
            "raw": self.raw,
        }


def _timed_step_seconds(model, theta, observations, n_particles, k_draws, algorithm, seed):
    """Median per-step wall time of one driver run (parameters frozen)."""
    records = []
    n_steps = len(observations) - 1
    run_online_em(
        model,
        theta,
        observations,
        n_particles,
        BackwardSampleConfig(k_draws=k_draws, allow_single_draw=True),
        StepSizeSchedule(0.6),
        burn_in=n_steps,  # freeze the parameter: timing targets the recursions
        rng=np.random.default_rng(seed),
        algorithm=algorithm,
        trace_sink=records.append,
    )
    return float(np.median([r.step_ns for r in records[1:]])) * 1e-9


def run_benchmark(
    model_id: str,
    theta,
    n_grid,
    t_per_point: int,
    k_draws: int,
    seed: int,
    repetitions: int = 5,
    algorithms=ALGORITHMS,
) -> BenchmarkReport:
    """Time both drivers across a particle-count grid and fit scaling slopes.

    Each (algorithm, N) cell runs one discarded warmup plus ``repetitions``
    timed runs; the cell value is the median of the runs' median per-step
    times.  Timing is strictly sequential to avoid contention skew.
    """
    n_grid = sorted(int(n) for n in n_grid)
    if len(n_grid) < 4:
        raise ConfigError("benchmark grid needs at least 4 particle counts", ["n_grid"])
    if n_grid[-1] < 8 * n_grid[0]:
        raise ConfigError("benchmark grid must span at least a factor of 8", ["n_grid"])
    if t_per_point < 2:
        raise ConfigError("t_per_point must be >= 2", ["t_per_point"])
    if repetitions < 5:
        raise ConfigError("need at least 5 repetitions per grid point", ["repetitions"])

    model = get_model(model_id)
    _, observations = simulate(model_id, theta, t_per_point + 1, np.random.default_rng(seed))

    medians = {algo: [] for algo in algorithms}
    raw = []
    for n in n_grid:
        for algo in algorithms:
            times = []
            for rep in range(repetitions + 1):  # rep 0 is warmup
                step_s = _timed_step_seconds(
                    model, theta, observations, n, k_draws, algo, seed + 1 + rep
                )
                if rep == 0:
                    continue
                times.append(step_s)
                raw.append({"algorithm": algo, "n": n, "repetition": rep, "step_seconds": step_s})
            medians[algo].append(float(np.median(times)))

    log_n = np.log(np.asarray(n_grid, dtype=float))
    slopes = {
        algo: float(np.polyfit(log_n, np.log(np.asarray(medians[algo])), 1)[0])
        for algo in algorithms
    }
    return BenchmarkReport(
        n_grid=list(n_grid),
        t_per_point=t_per_point,
        median_step_seconds=medians,
        slopes=slopes,
        raw=raw,
    )


def match_budget(
    model_id: str,
    theta,
    n_linear: int,
    k_draws: int,
    t_probe: int,
    seed: int,
    tolerance: float = 0.2,
    repetitions: int = 3,
    n_min: int = 8,
) -> tuple[int, dict]:
    """Particle count for the quadratic driver matching the linear driver's time.

    Measures the Monte Carlo driver's per-step time at ``n_linear``, then
    bisects the quadratic driver's particle count until its per-step time
    lands within ``tolerance`` of that target (per-step cost is monotone
    in N, so bisection applies).  Returns the matched count and a report
    of every probe taken.
    """
    model = get_model(model_id)
    _, observations = simulate(model_id, theta, t_probe + 1, np.random.default_rng(seed))

    def measure(algorithm, n):
        times = [
            _timed_step_seconds(
                model, theta, observations, n, k_draws, algorithm, seed + 1 + rep
            )
            for rep in range(repetitions + 1)
        ]
        return float(np.median(times[1:]))  # first run warms caches

    target = measure("paris", n_linear)
    probes = []

    def probe(n):
        t = measure("ffbsm", n)
        probes.append({"n": n, "step_seconds": t})
        return t

    lo, hi = n_min, max(2 * n_min, n_linear)
    t_hi = probe(hi)
    while t_hi < target and hi < 8 * n_linear:
        lo, hi = hi, hi * 2
        t_hi = probe(hi)

    best_n, best_err = hi, abs(t_hi - target) / target
    while hi - lo > 1:
        mid = (lo + hi) // 2
        t_mid = probe(mid)
        err = abs(t_mid - target) / target
        if err < best_err:
            best_n, best_err = mid, err
        if err <= tolerance:
            break
        if t_mid < target:
            lo = mid
        else:
            hi = mid

    report = {
        "target_step_seconds": target,
        "n_linear": n_linear,
        "matched_n": best_n,
        "relative_error": best_err,
        "tolerance": tolerance,
        "probes": probes,
    }
    return best_n, report
