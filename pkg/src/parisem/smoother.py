"""Online smoothing of additive functionals over the particle cloud.

Two recursions estimate smoothed additive statistics without storing
particle paths:

* the exact forward-only backward-smoothing recursion (quadratic in the
  particle count: one full backward-weight row per new particle), and
* its Monte Carlo replacement, which propagates each per-particle
  auxiliary statistic through a small number ``K`` of sampled backward
  indices, giving linear expected cost when the indices are drawn by
  accept-reject against the transition-density bound.

Both come in an additive flavour (plain running sums) and a step-size
weighted flavour used by online EM, where the new increment enters with
weight ``gamma`` and history with ``1 - gamma``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import (
    BackwardDegeneracyError,
    BoundViolationError,
    InstanceTooLargeError,
    ScheduleError,
)
from .particle import ResamplingTable, WeightedParticleSet
from .ssm import StateSpaceModel

# Elements per increment block in the quadratic update; bounds peak memory.
_BLOCK_BUDGET = 1 << 19

_BOUND_TOL = 1e-12


@dataclass
class AuxStatMatrix:
    """Per-particle auxiliary statistics: one length-ell row per particle."""

    rows: np.ndarray
    t: int

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float)
        if self.rows.ndim != 2:
            raise ValueError(f"rows must be (N, ell), got shape {self.rows.shape}")
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("auxiliary statistics must be finite")

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def stat_dim(self) -> int:
        return self.rows.shape[1]


def zero_aux(n: int, stat_dim: int) -> AuxStatMatrix:
    """The t=0 state: every auxiliary row is the zero vector."""
    return AuxStatMatrix(np.zeros((n, stat_dim)), t=0)


@dataclass(frozen=True)
class BackwardSampleConfig:
    """How backward indices are drawn in the Monte Carlo recursion.

    ``k_draws`` below 2 destabilizes long runs, so it is rejected unless
    ``allow_single_draw`` is set (handy in tests, where K=1 collapses the
    update to a single term).
    """

    k_draws: int = 2
    mode: str = "accept-reject"
    trial_cap: int = 100
    allow_single_draw: bool = False

    def __post_init__(self):
        if self.k_draws < 1:
            raise ValueError("k_draws must be >= 1")
        if self.k_draws < 2 and not self.allow_single_draw:
            raise ValueError("k_draws must be >= 2 for stable operation")
        if self.mode not in ("accept-reject", "direct"):
            raise ValueError(f"unknown backward sampling mode {self.mode!r}")
        if self.trial_cap < 1:
            raise ValueError("trial_cap must be >= 1")


@dataclass
class BackwardSampleDiagnostics:
    """Sampling effort counters for one update step."""

    draws: int = 0
    proposals: int = 0
    fallbacks: int = 0

    @property
    def mean_trials(self) -> float:
        return self.proposals / self.draws if self.draws else 0.0

    def merge(self, other: "BackwardSampleDiagnostics") -> None:
        self.draws += other.draws
        self.proposals += other.proposals
        self.fallbacks += other.fallbacks


def _log_weights(pset: WeightedParticleSet) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(pset.weights)


def _normalized_backward_block(
    model: StateSpaceModel, theta, prev: WeightedParticleSet, x_block: np.ndarray
) -> np.ndarray:
    """Rows of backward weights w_j * q(xi_j, x) normalized per target x.

    ``theta`` must already be validated.
    """
    logb = _log_weights(prev)[None, :] + model._log_transition(
        theta, prev.particles[None, :], x_block[:, None]
    )
    m = logb.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise BackwardDegeneracyError(
            "all backward weights vanished for some target particle", t=prev.t
        )
    b = np.exp(logb - m)
    return b / b.sum(axis=1, keepdims=True)


# ----------------------------------------------------------------------
# Backward index sampling
# ----------------------------------------------------------------------


def backward_indices_direct(
    model: StateSpaceModel,
    theta,
    prev: WeightedParticleSet,
    x_new: float,
    k: int,
    rng,
) -> np.ndarray:
    """``k`` iid indices with P(j) proportional to w_j q(xi_j, x_new); O(N) each."""
    theta = model.validate_params(theta)
    probs = _normalized_backward_block(model, theta, prev, np.atleast_1d(float(x_new)))[0]
    return ResamplingTable(probs).draw(rng, size=k)


def backward_indices_ar(
    model: StateSpaceModel,
    theta,
    prev: WeightedParticleSet,
    x_new: float,
    k: int,
    rng,
    bound: float | None = None,
    trial_cap: int = 100,
) -> tuple[np.ndarray, int]:
    """Accept-reject version of :func:`backward_indices_direct`.

    Proposals come from the particle-weight law and are accepted with
    probability q(xi_J, x_new) / bound, so the output law is identical to
    the direct sampler's at O(1) expected cost per draw.  Returns the
    indices and the total number of proposals consumed.
    """
    cfg = BackwardSampleConfig(
        k_draws=k, mode="accept-reject", trial_cap=trial_cap, allow_single_draw=True
    )
    indices, diag = draw_backward_indices(
        model, theta, prev, np.atleast_1d(float(x_new)), cfg, rng, bound=bound
    )
    return indices[0], diag.proposals


def draw_backward_indices(
    model: StateSpaceModel,
    theta,
    prev: WeightedParticleSet,
    new_particles: np.ndarray,
    cfg: BackwardSampleConfig,
    rng,
    bound: float | None = None,
) -> tuple[np.ndarray, BackwardSampleDiagnostics]:
    """Draw a (M, k_draws) index matrix, one backward law per new particle.

    This is the single sampling path shared by the Monte Carlo updates,
    so recorded index matrices can be replayed through either recursion.
    """
    theta = model.validate_params(theta)
    return _draw_indices_validated(model, theta, prev, new_particles, cfg, rng, bound)


def _draw_indices_validated(model, theta, prev, new_particles, cfg, rng, bound=None):
    new_particles = np.asarray(new_particles, dtype=float)
    m_targets = new_particles.shape[0]
    k = cfg.k_draws
    diag = BackwardSampleDiagnostics(draws=m_targets * k)

    if cfg.mode == "direct":
        indices = np.empty((m_targets, k), dtype=np.intp)
        block = max(1, _BLOCK_BUDGET // max(prev.n, 1))
        for lo in range(0, m_targets, block):
            rows = _normalized_backward_block(
                model, theta, prev, new_particles[lo : lo + block]
            )
            cdf = np.cumsum(rows, axis=1)
            u = rng.random((rows.shape[0], k))
            # per-row inverse CDF: count how many cdf entries each u passes
            idx = (u[:, :, None] > cdf[:, None, :]).sum(axis=2)
            indices[lo : lo + block] = np.minimum(idx, prev.n - 1)
        diag.proposals = diag.draws
        return indices, diag

    if bound is None:
        bound = model.transition_bound(theta)
    if not (np.isfinite(bound) and bound > 0.0):
        raise BoundViolationError(f"transition bound must be finite and positive, got {bound}")
    log_bound = float(np.log(bound))

    table = ResamplingTable(prev.weights)
    flat = np.empty(m_targets * k, dtype=np.intp)
    target_of = np.repeat(np.arange(m_targets), k)
    pending = np.arange(m_targets * k)
    # Proposals are batched per pending slot with geometrically growing
    # batch sizes and only the first acceptance in a batch is used, which
    # leaves the sampling law (and the per-slot trial cap) unchanged while
    # keeping the number of vectorized rounds logarithmic in the cap.
    consumed = 0
    batch = 1
    while pending.size and consumed < cfg.trial_cap:
        batch = min(batch, cfg.trial_cap - consumed)
        props = table.draw(rng, size=(pending.size, batch))
        logq = model._log_transition(
            theta, prev.particles[props], new_particles[target_of[pending], None]
        )
        worst = float(np.max(logq))
        if worst > log_bound + _BOUND_TOL:
            raise BoundViolationError(
                f"observed transition density exp({worst}) exceeds the "
                f"supplied bound exp({log_bound})"
            )
        accepted = rng.random((pending.size, batch)) < np.exp(
            np.minimum(logq - log_bound, 0.0)
        )
        hit = accepted.any(axis=1)
        first = accepted.argmax(axis=1)
        flat[pending[hit]] = props[hit, first[hit]]
        # trials actually consumed: up to the first acceptance, or the
        # whole batch for slots that stay pending
        diag.proposals += int(first[hit].sum()) + int(hit.sum())
        diag.proposals += int((~hit).sum()) * batch
        pending = pending[~hit]
        consumed += batch
        batch *= 2

    if pending.size:
        # trial cap hit: fall back to one exact O(N) draw per leftover slot,
        # which samples the same conditional law and so leaves it unchanged
        diag.fallbacks += pending.size
        targets = np.unique(target_of[pending])
        rows = _normalized_backward_block(model, theta, prev, new_particles[targets])
        cdfs = np.cumsum(rows, axis=1)
        for row, tgt in enumerate(targets):
            slots = pending[target_of[pending] == tgt]
            idx = np.searchsorted(cdfs[row], rng.random(slots.size), side="right")
            flat[slots] = np.minimum(idx, prev.n - 1)

    return flat.reshape(m_targets, k), diag


# ----------------------------------------------------------------------
# Auxiliary-statistic updates
# ----------------------------------------------------------------------


def _check_alignment(prev, prev_aux, new_set):
    if prev_aux.t != new_set.t - 1 or prev.t != new_set.t - 1:
        raise ValueError(
            f"auxiliary statistics at t={prev_aux.t} and particles at t={prev.t} "
            f"cannot produce t={new_set.t}"
        )
    if prev_aux.n != prev.n:
        raise ValueError("auxiliary rows and previous particles disagree in count")


def _ffbsm_combine(model, theta, prev, prev_aux, new_set, increments, gamma):
    theta = model.validate_params(theta)
    _check_alignment(prev, prev_aux, new_set)
    out = np.empty((new_set.n, prev_aux.stat_dim))
    block = max(1, _BLOCK_BUDGET // max(prev.n, 1))
    for lo in range(0, new_set.n, block):
        x_block = new_set.particles[lo : lo + block]
        weights = _normalized_backward_block(model, theta, prev, x_block)
        terms = increments(prev.particles[None, :], x_block[:, None])
        # sum_j W_ij (tau_j + s_ij) splits into W @ tau plus per-component
        # weighted sums, keeping every array 2-d
        history = weights @ prev_aux.rows
        fresh = np.stack([(weights * term).sum(axis=1) for term in terms], axis=1)
        if gamma is None:
            out[lo : lo + block] = history + fresh
        else:
            out[lo : lo + block] = (1.0 - gamma) * history + gamma * fresh
    return AuxStatMatrix(out, t=new_set.t)


def ffbsm_update(
    model: StateSpaceModel,
    theta,
    prev: WeightedParticleSet,
    prev_aux: AuxStatMatrix,
    new_set: WeightedParticleSet,
    increments,
) -> AuxStatMatrix:
    """Exact additive update: each new row is the backward-weighted average
    of (previous row + increment) over all previous particles.

    ``increments(x_prev, x_new)`` must return the increment's components
    as a sequence of arrays broadcasting against its two state arguments
    (see ``StateSpaceModel.stat_increment_terms``).  Cost is quadratic in
    the particle count.
    """
    return _ffbsm_combine(model, theta, prev, prev_aux, new_set, increments, gamma=None)


def paris_update(
    model: StateSpaceModel,
    theta,
    prev: WeightedParticleSet,
    prev_aux: AuxStatMatrix,
    new_set: WeightedParticleSet,
    increments,
    cfg: BackwardSampleConfig,
    rng,
    indices: np.ndarray | None = None,
) -> tuple[AuxStatMatrix, BackwardSampleDiagnostics]:
    """Monte Carlo additive update averaging over ``k_draws`` sampled indices.

    Conditionally on the filter history this is unbiased for the exact
    update.  A precomputed ``indices`` matrix (as produced by
    :func:`draw_backward_indices`) bypasses sampling, which lets tests
    replay one recorded index stream through several recursions.
    """
    return _mc_update(
        model, theta, prev, prev_aux, new_set, increments, cfg, rng, indices, gamma=None
    )


def online_stat_update(
    model: StateSpaceModel,
    theta,
    prev: WeightedParticleSet,
    prev_aux: AuxStatMatrix,
    new_set: WeightedParticleSet,
    increments,
    gamma: float,
    cfg: BackwardSampleConfig,
    rng,
    indices: np.ndarray | None = None,
    method: str = "paris",
) -> tuple[AuxStatMatrix, BackwardSampleDiagnostics]:
    """Step-size weighted update used by online EM.

    New rows average ``(1 - gamma) * old row + gamma * increment`` over
    the backward law, either by ``k_draws`` Monte Carlo samples
    (``method="paris"``) or by the exact quadratic expectation
    (``method="ffbsm"``).  ``gamma=0`` (pure backward mixing) is allowed
    for testing; schedules themselves never produce it.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ScheduleError(f"step size {gamma} outside [0, 1]")
    if method == "ffbsm":
        aux = _ffbsm_combine(model, theta, prev, prev_aux, new_set, increments, gamma)
        return aux, BackwardSampleDiagnostics()
    if method != "paris":
        raise ValueError(f"unknown online update method {method!r}")
    return _mc_update(
        model, theta, prev, prev_aux, new_set, increments, cfg, rng, indices, gamma=gamma
    )


def _mc_update(model, theta, prev, prev_aux, new_set, increments, cfg, rng, indices, gamma):
    theta = model.validate_params(theta)
    _check_alignment(prev, prev_aux, new_set)
    if indices is None:
        indices, diag = _draw_indices_validated(
            model, theta, prev, new_set.particles, cfg, rng
        )
    else:
        indices = np.asarray(indices)
        diag = BackwardSampleDiagnostics(draws=indices.size)
    if indices.shape[0] != new_set.n:
        raise ValueError("need one row of backward indices per new particle")
    terms = increments(prev.particles[indices], new_set.particles[:, None])
    out = np.empty((new_set.n, prev_aux.stat_dim))
    for c, term in enumerate(terms):
        history = prev_aux.rows[:, c][indices]
        term = np.broadcast_to(term, indices.shape)
        if gamma is None:
            out[:, c] = (history + term).mean(axis=1)
        else:
            out[:, c] = ((1.0 - gamma) * history + gamma * term).mean(axis=1)
    return AuxStatMatrix(out, t=new_set.t), diag


def smoothed_estimate(pset: WeightedParticleSet, aux: AuxStatMatrix) -> np.ndarray:
    """Self-normalized weighted average of the auxiliary rows."""
    if aux.n != pset.n:
        raise ValueError("particle set and auxiliary statistics disagree in count")
    return pset.normalized_weights() @ aux.rows


# ----------------------------------------------------------------------
# Brute-force reference (test oracle, tiny instances only)
# ----------------------------------------------------------------------


def exact_path_space_oracle(
    model: StateSpaceModel,
    theta,
    particle_sets: list[WeightedParticleSet],
    increments_per_step: list,
    max_paths: int = 10**6,
) -> np.ndarray:
    """Smoothed additive statistic by enumerating every index path.

    Every path (i_0, ..., i_T) through the stored particle clouds is
    weighted by the product of its normalized backward weights times the
    final filter weight, and scores the sum of its per-transition
    increments.  Cost is N^(T+1) paths, so instances are refused beyond
    ``max_paths``; this exists purely as ground truth for the forward
    recursions.
    """
    theta = model.validate_params(theta)
    n = particle_sets[0].n
    steps = len(particle_sets) - 1
    if len(increments_per_step) != steps:
        raise ValueError("need one increment evaluator per transition")
    if n**steps > max_paths:
        raise InstanceTooLargeError(
            f"{n}^{steps} index paths exceed the cap of {max_paths}"
        )

    trans = []  # per step: numerator matrix [j, i] and its column sums
    scores = []
    for t in range(steps):
        prev, nxt = particle_sets[t], particle_sets[t + 1]
        numer = prev.weights[:, None] * model.transition_density(
            theta, prev.particles[:, None], nxt.particles[None, :]
        )
        denom = numer.sum(axis=0)
        if np.any(denom <= 0.0):
            raise BackwardDegeneracyError(
                "zero backward normalizer in oracle instance", t=t
            )
        trans.append((numer, denom))
        terms = increments_per_step[t](prev.particles[:, None], nxt.particles[None, :])
        scores.append(np.stack(np.broadcast_arrays(*terms), axis=-1))

    last = particle_sets[-1]
    final_weights = last.normalized_weights()
    stat_dim = scores[0].shape[-1]
    total = np.zeros(stat_dim)
    for path in itertools.product(range(n), repeat=steps + 1):
        weight = final_weights[path[-1]]
        value = np.zeros(stat_dim)
        for t in range(steps):
            numer, denom = trans[t]
            weight *= numer[path[t], path[t + 1]] / denom[path[t + 1]]
            value += scores[t][path[t], path[t + 1]]
        total += weight * value
    return total
