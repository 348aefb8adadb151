"""Bootstrap particle filter with multinomial resampling.

Each step resamples ancestors multinomially from the current weights,
propagates them through the latent dynamics, and reweights with the
emission density of the new observation.  Weights are kept in the linear
domain; when the largest log-weight is outside the comfortably
exponentiable range the whole vector is shifted by it first, which leaves
every self-normalized quantity unchanged while avoiding under/overflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError
from .ssm import StateSpaceModel

# |max log-weight| beyond which weights are exponent-shifted before exp().
_LOG_SHIFT_LIMIT = 700.0

_WEIGHT_SUM_RTOL = 1e-12


@dataclass
class WeightedParticleSet:
    """N particles with unnormalized weights at one time step."""

    particles: np.ndarray
    weights: np.ndarray
    weight_sum: float
    t: int

    def __post_init__(self):
        self.particles = np.asarray(self.particles, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.particles.shape != self.weights.shape or self.particles.ndim != 1:
            raise ValueError(
                f"particles {self.particles.shape} and weights "
                f"{self.weights.shape} must be matching 1-d arrays"
            )
        if self.n == 0:
            raise ValueError("a particle set needs at least one particle")
        if np.any(self.weights < 0.0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite and nonnegative")
        total = float(self.weights.sum())
        if abs(total - self.weight_sum) > _WEIGHT_SUM_RTOL * max(total, self.weight_sum):
            raise ValueError(
                f"weight_sum {self.weight_sum} does not match sum {total}"
            )

    @classmethod
    def from_weights(cls, particles, weights, t: int) -> "WeightedParticleSet":
        weights = np.asarray(weights, dtype=float)
        return cls(particles, weights, float(weights.sum()), t)

    @property
    def n(self) -> int:
        return self.particles.shape[0]

    @property
    def degenerate(self) -> bool:
        return not np.any(self.weights > 0.0)

    def normalized_weights(self) -> np.ndarray:
        if self.degenerate:
            raise DegeneracyError("all particle weights are zero", t=self.t)
        return self.weights / self.weight_sum


class ResamplingTable:
    """Cumulative normalized weights supporting inverse-CDF index draws."""

    def __init__(self, weights):
        weights = np.asarray(weights, dtype=float)
        total = weights.sum()
        if not total > 0.0:
            raise DegeneracyError("cannot build a resampling table from zero weights")
        cdf = np.cumsum(weights / total)
        if abs(float(cdf[-1]) - 1.0) > 1e-12:
            raise ValueError("cumulative weights must end at 1")
        cdf[-1] = 1.0
        self.cdf = cdf

    @property
    def n(self) -> int:
        return self.cdf.shape[0]

    def draw(self, rng, size=None):
        """Draw index i with probability w_i / sum(w) by inverse-CDF search."""
        u = rng.random(size)
        if np.ndim(u) > 1:
            # searchsorted is much faster on flat query arrays
            idx = np.searchsorted(self.cdf, u.ravel(), side="right").reshape(u.shape)
        else:
            idx = np.searchsorted(self.cdf, u, side="right")
        return np.minimum(idx, self.n - 1)


def multinomial_draw(table: ResamplingTable, rng) -> int:
    """One index from the discrete law encoded by ``table``."""
    return int(table.draw(rng))


def weights_from_log(log_weights: np.ndarray) -> np.ndarray:
    """Exponentiate log-weights, shifting by the max when it is extreme.

    In the benign range the result equals ``exp(log_weights)`` exactly;
    otherwise every entry is scaled by ``exp(-max)``, which is invisible
    to self-normalized estimators.
    """
    m = float(np.max(log_weights))
    if not np.isfinite(m):
        return np.zeros_like(log_weights)
    if abs(m) < _LOG_SHIFT_LIMIT:
        return np.exp(log_weights)
    return np.exp(log_weights - m)


def init_filter(
    model: StateSpaceModel, theta, y0, n: int, rng
) -> WeightedParticleSet:
    """Initial particle cloud: draw from the initial law, weight by g(., y0)."""
    if n < 1:
        raise ValueError("need at least one particle")
    theta = model.validate_params(theta)
    particles = model.sample_initial(theta, n, rng)
    weights = weights_from_log(model._log_emission(theta, particles, y0))
    pset = WeightedParticleSet.from_weights(particles, weights, t=0)
    if pset.degenerate:
        raise DegeneracyError("all initial weights are zero", t=0, theta=theta)
    return pset


def pf_step(
    model: StateSpaceModel, theta, pset: WeightedParticleSet, y_next, rng
) -> tuple[WeightedParticleSet, np.ndarray]:
    """One bootstrap update: resample, propagate, reweight.

    Returns the new particle set (time index incremented) and the ancestor
    indices; ancestors are not retained anywhere else, so genealogical
    trees never accumulate.
    """
    theta = model.validate_params(theta)
    if pset.degenerate:
        raise DegeneracyError("cannot step a degenerate particle set", t=pset.t, theta=theta)
    ancestors = ResamplingTable(pset.weights).draw(rng, size=pset.n)
    particles = model.sample_transition(theta, pset.particles[ancestors], rng)
    weights = weights_from_log(model._log_emission(theta, particles, y_next))
    new_set = WeightedParticleSet.from_weights(particles, weights, t=pset.t + 1)
    if new_set.degenerate:
        raise DegeneracyError(
            f"all weights vanished at t={new_set.t}", t=new_set.t, theta=theta
        )
    return new_set, ancestors


def self_normalized_estimate(pset: WeightedParticleSet, f) -> np.ndarray:
    """sum_i (w_i / Omega) f(xi_i) for a vectorized f of the particle array."""
    w = pset.normalized_weights()
    values = np.asarray(f(pset.particles), dtype=float)
    if values.shape[0] != pset.n:
        raise ValueError("f must return one row per particle")
    return np.tensordot(w, values, axes=(0, 0))


def effective_sample_size(pset: WeightedParticleSet) -> float:
    """(sum w)^2 / sum w^2, between 1 and N."""
    w = pset.weights
    if pset.degenerate:
        raise DegeneracyError("ESS of a degenerate set is undefined", t=pset.t)
    return float(pset.weight_sum**2 / np.dot(w, w))
