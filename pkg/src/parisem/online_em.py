"""Online EM driver: one parameter refresh per observation.

Each step runs the bootstrap filter under the current parameter, folds
the new observation into the step-size weighted smoothed statistic, and
(once past burn-in) maps that statistic through the model's closed-form
M-step.  Memory use is independent of the stream length: only the
current particle cloud, auxiliary rows, and parameter are retained, and
trace records are streamed to an optional sink.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateStatisticError, ScheduleError
from .particle import WeightedParticleSet, effective_sample_size, init_filter, pf_step
from .smoother import (
    AuxStatMatrix,
    BackwardSampleConfig,
    online_stat_update,
    smoothed_estimate,
    zero_aux,
)
from .ssm import StateSpaceModel

CHECKPOINT_VERSION = 1

ALGORITHMS = ("paris", "ffbsm")


@dataclass(frozen=True)
class StepSizeSchedule:
    """gamma_t = t^-alpha with 0.5 < alpha <= 1.

    The exponent range makes the step sizes sum to infinity while their
    squares stay summable, the usual stochastic-approximation conditions.
    """

    alpha: float

    def __post_init__(self):
        if not 0.5 < self.alpha <= 1.0:
            raise ScheduleError(f"alpha must lie in (0.5, 1], got {self.alpha}")

    def gamma(self, t: int) -> float:
        if t < 1:
            raise ScheduleError(f"step sizes are defined for t >= 1, got t={t}")
        return float(t) ** -self.alpha


@dataclass
class OnlineEMState:
    """Everything the recursion carries between observations."""

    theta: np.ndarray
    pset: object
    aux: AuxStatMatrix
    t: int
    schedule: StepSizeSchedule
    burn_in: int
    algorithm: str = "paris"

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.aux.t != self.t or self.pset.t != self.t:
            raise ValueError(
                f"state at t={self.t} holds particles at t={self.pset.t} "
                f"and statistics at t={self.aux.t}"
            )
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")


@dataclass
class TraceRecord:
    """One per processed observation."""

    t: int
    theta: tuple
    ess: float
    ar_trials_mean: float
    step_ns: int
    mstep_held: bool = False


def init_online_em(
    model: StateSpaceModel,
    theta0,
    y0,
    n_particles: int,
    schedule: StepSizeSchedule,
    burn_in: int,
    rng,
    algorithm: str = "paris",
) -> tuple[OnlineEMState, TraceRecord]:
    """Build the t=0 state: initial filter cloud and zeroed statistics."""
    start = time.perf_counter_ns()
    theta0 = model.validate_params(theta0)
    pset = init_filter(model, theta0, y0, n_particles, rng)
    state = OnlineEMState(
        theta=theta0,
        pset=pset,
        aux=zero_aux(n_particles, model.stat_dim),
        t=0,
        schedule=schedule,
        burn_in=burn_in,
        algorithm=algorithm,
    )
    record = TraceRecord(
        t=0,
        theta=tuple(theta0),
        ess=effective_sample_size(pset),
        ar_trials_mean=0.0,
        step_ns=time.perf_counter_ns() - start,
    )
    return state, record


def online_em_step(
    model: StateSpaceModel,
    state: OnlineEMState,
    y_next,
    cfg: BackwardSampleConfig,
    rng,
    lambda_variant: str = "mle",
    ar_projection: float | None = None,
) -> tuple[OnlineEMState, TraceRecord]:
    """Advance the recursion by one observation.

    The particle step, the backward weights, and the statistic update all
    use the pre-step parameter; the refreshed parameter only takes effect
    from the next observation on.  During burn-in (t <= burn_in) the
    parameter is left untouched.  A degenerate M-step input holds the
    previous parameter and flags the record instead of aborting.
    """
    start = time.perf_counter_ns()
    t = state.t + 1
    gamma = state.schedule.gamma(t)
    new_set, _ = pf_step(model, state.theta, state.pset, y_next, rng)

    def increments(x_prev, x_new):
        return model.stat_increment_terms(x_prev, x_new, y_next)

    aux, diag = online_stat_update(
        model,
        state.theta,
        state.pset,
        state.aux,
        new_set,
        increments,
        gamma,
        cfg,
        rng,
        method=state.algorithm,
    )

    theta = state.theta
    held = False
    if t > state.burn_in:
        try:
            theta = model.m_step(smoothed_estimate(new_set, aux), variant=lambda_variant)
            if ar_projection is not None:
                theta[0] = np.clip(theta[0], -ar_projection, ar_projection)
        except DegenerateStatisticError:
            held = True

    new_state = OnlineEMState(
        theta=theta,
        pset=new_set,
        aux=aux,
        t=t,
        schedule=state.schedule,
        burn_in=state.burn_in,
        algorithm=state.algorithm,
    )
    record = TraceRecord(
        t=t,
        theta=tuple(theta),
        ess=effective_sample_size(new_set),
        ar_trials_mean=diag.mean_trials,
        step_ns=time.perf_counter_ns() - start,
        mstep_held=held,
    )
    return new_state, record


def run_online_em(
    model: StateSpaceModel,
    theta0,
    observations,
    n_particles: int,
    cfg: BackwardSampleConfig,
    schedule: StepSizeSchedule,
    burn_in: int,
    rng,
    algorithm: str = "paris",
    lambda_variant: str = "mle",
    ar_projection: float | None = None,
    trace_sink=None,
    checkpoint_every: int | None = None,
    checkpoint_path=None,
):
    """Fold the online EM step over an observation stream.

    ``observations`` may be any iterable (length >= 1); only the current
    state is kept, so arbitrarily long streams run in constant memory.
    With ``trace_sink`` set, each :class:`TraceRecord` is passed to it and
    nothing is accumulated; otherwise the full trace list is returned.

    Returns ``(theta_final, trace)`` where ``trace`` is ``None`` when a
    sink was supplied.
    """
    stream = iter(observations)
    try:
        y0 = next(stream)
    except StopIteration:
        raise ValueError("observation stream is empty") from None

    records = None if trace_sink is not None else []

    def emit(record):
        if trace_sink is not None:
            trace_sink(record)
        else:
            records.append(record)

    state, record = init_online_em(
        model, theta0, y0, n_particles, schedule, burn_in, rng, algorithm
    )
    emit(record)
    for y in stream:
        state, record = online_em_step(
            model, state, y, cfg, rng, lambda_variant, ar_projection
        )
        emit(record)
        if checkpoint_every and state.t % checkpoint_every == 0:
            save_checkpoint(state, checkpoint_path)
    return state.theta, records


def run_ffbsm_online_em(
    model, theta0, observations, n_particles, cfg, schedule, burn_in, rng, **kwargs
):
    """Same driver with the exact quadratic statistic update."""
    return run_online_em(
        model,
        theta0,
        observations,
        n_particles,
        cfg,
        schedule,
        burn_in,
        rng,
        algorithm="ffbsm",
        **kwargs,
    )


# ----------------------------------------------------------------------
# Checkpointing
# ----------------------------------------------------------------------


def save_checkpoint(state: OnlineEMState, path) -> None:
    """Exact JSON dump of the recursion state (floats round-trip losslessly)."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "t": state.t,
        "theta": state.theta.tolist(),
        "particles": state.pset.particles.tolist(),
        "weights": state.pset.weights.tolist(),
        "weight_sum": state.pset.weight_sum,
        "aux_rows": state.aux.rows.tolist(),
        "schedule_alpha": state.schedule.alpha,
        "burn_in": state.burn_in,
        "algorithm": state.algorithm,
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path) -> OnlineEMState:
    """Rebuild an :class:`OnlineEMState` saved by :func:`save_checkpoint`."""
    payload = json.loads(Path(path).read_text())
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pset = WeightedParticleSet(
        np.array(payload["particles"]),
        np.array(payload["weights"]),
        payload["weight_sum"],
        payload["t"],
    )
    return OnlineEMState(
        theta=np.array(payload["theta"]),
        pset=pset,
        aux=AuxStatMatrix(np.array(payload["aux_rows"]), t=payload["t"]),
        t=payload["t"],
        schedule=StepSizeSchedule(payload["schedule_alpha"]),
        burn_in=payload["burn_in"],
        algorithm=payload["algorithm"],
    )
