"""State-space model contract and the exponential-family EM interface.

A model couples a latent Markov chain (initial law ``chi``, transition
density ``q``) with an emission density ``g``.  For online EM the model
additionally exposes an additive sufficient-statistic increment evaluated
on transitions and a closed-form M-step map from time-averaged statistics
back to a parameter vector.

Parameter vectors are plain 1-d float arrays; the owning model names the
components through ``param_names`` and knows which of them play the role
of a variance (strictly positive for density evaluation, allowed to be
zero in samplers where the law degenerates to a point mass).

All density and sampling hooks are vectorized: state arguments broadcast
against each other under normal numpy rules, so ``transition_density``
can evaluate a full backward-weight row (or an N x N block) in one call.
"""

from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np

from .errors import DegenerateStatisticError, ParameterError

# Floor applied to variance components returned by the M-step; keeps the
# densities evaluable when early online-EM statistics nearly collapse.
VARIANCE_FLOOR = 1e-8

_LOG_2PI = float(np.log(2.0 * np.pi))


def gaussian_logpdf(dx, var):
    """Log N(dx; 0, var), broadcasting over ``dx``. ``var`` must be > 0."""
    dx = np.asarray(dx, dtype=float)
    return -0.5 * (_LOG_2PI + np.log(var) + dx * dx / var)


class StateSpaceModel(ABC):
    """Contract every concrete state-space model implements.

    Subclasses define scalar-state dynamics (``state_dim`` is carried for
    extension but both shipped models are univariate), an emission law,
    the additive sufficient-statistic increment, and the M-step map.
    """

    name: str = ""
    param_names: tuple[str, ...] = ()
    stat_dim: int = 0
    state_dim: int = 1

    # Indexes of parameter components that act as variances.
    variance_components: tuple[int, ...] = ()

    @property
    def param_dim(self) -> int:
        return len(self.param_names)

    def validate_params(self, theta, allow_zero_variance: bool = False) -> np.ndarray:
        """Return ``theta`` as a float array after domain checks.

        Density evaluation requires strictly positive variance components;
        samplers pass ``allow_zero_variance=True`` since a zero variance
        just degenerates the corresponding law to a point mass.
        """
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.param_dim,):
            raise ParameterError(
                f"{self.name}: expected {self.param_dim} parameters "
                f"{self.param_names}, got shape {theta.shape}"
            )
        if not np.all(np.isfinite(theta)):
            raise ParameterError(f"{self.name}: non-finite parameter in {theta}")
        for i in self.variance_components:
            bad = theta[i] < 0.0 if allow_zero_variance else theta[i] <= 0.0
            if bad:
                raise ParameterError(
                    f"{self.name}: {self.param_names[i]}={theta[i]} must be "
                    + (">= 0" if allow_zero_variance else "> 0")
                )
        return theta

    # ------------------------------------------------------------------
    # Latent dynamics
    # ------------------------------------------------------------------
    # Public density methods validate the parameter vector and delegate to
    # the underscore primitives, which subclasses implement assuming a
    # validated theta; hot loops validate once and call the primitives.

    def log_transition_density(self, theta, x, x_new) -> np.ndarray:
        """log q_theta(x, x_new), broadcasting over both state arguments."""
        return self._log_transition(
            self.validate_params(theta),
            np.asarray(x, dtype=float),
            np.asarray(x_new, dtype=float),
        )

    def transition_density(self, theta, x, x_new) -> np.ndarray:
        """q_theta(x, x_new); nonnegative, deterministic in its inputs."""
        return np.exp(self.log_transition_density(theta, x, x_new))

    @abstractmethod
    def _log_transition(self, theta, x, x_new) -> np.ndarray:
        """log q for a pre-validated theta and float-array states."""

    @abstractmethod
    def transition_bound(self, theta) -> float:
        """A finite upper bound on q_theta over all state pairs."""

    @abstractmethod
    def sample_transition(self, theta, x, rng) -> np.ndarray:
        """Draw one successor state per entry of ``x`` from q_theta(x, .)."""

    @abstractmethod
    def sample_initial(self, theta, n: int, rng) -> np.ndarray:
        """Draw ``n`` states from the initial law chi."""

    # ------------------------------------------------------------------
    # Emission
    # ------------------------------------------------------------------

    def log_emission_density(self, theta, x, y) -> np.ndarray:
        """log g_theta(x, y), broadcasting over ``x``."""
        return self._log_emission(
            self.validate_params(theta), np.asarray(x, dtype=float), y
        )

    def emission_density(self, theta, x, y) -> np.ndarray:
        """g_theta(x, y)."""
        return np.exp(self.log_emission_density(theta, x, y))

    @abstractmethod
    def _log_emission(self, theta, x, y) -> np.ndarray:
        """log g for a pre-validated theta and a float-array state."""

    # ------------------------------------------------------------------
    # Exponential-family EM interface
    # ------------------------------------------------------------------

    @abstractmethod
    def stat_increment_terms(self, x, x_new, y_new) -> list:
        """Increment components as ``stat_dim`` separate arrays.

        Each entry broadcasts against ``x`` and ``x_new``; keeping the
        components unstacked lets the smoothing recursions work on flat
        2-d arrays, which is much cheaper than a trailing stat axis.
        """

    def stat_increment(self, x, x_new, y_new) -> np.ndarray:
        """Sufficient-statistic increment on the transition (x, x_new, y_new).

        Parameter-free.  ``x`` and ``x_new`` broadcast; the result has the
        broadcast shape plus a trailing axis of length ``stat_dim``.
        """
        terms = self.stat_increment_terms(
            np.asarray(x, dtype=float), np.asarray(x_new, dtype=float), y_new
        )
        return np.stack(np.broadcast_arrays(*terms), axis=-1)

    @abstractmethod
    def m_step(self, z, variant: str = "mle") -> np.ndarray:
        """Map a time-averaged statistic vector to a new parameter vector."""


def ar1_gaussian_m_step(
    z,
    variant: str = "mle",
    variance_floor: float = VARIANCE_FLOOR,
) -> np.ndarray:
    """Closed-form M-step shared by the two shipped AR(1)-driven models.

    For time-averaged moments ``z = (z1, z2, z3, z4)`` with
    z1 ~ E[x_t^2], z2 ~ E[x_t x_{t+1}], z3 ~ E[x_{t+1}^2] and z4 the
    emission-variance moment, returns

        (z2 / z1, z3 - z2^2 / z1, z4)          variant="mle"
        (z2 / z3, z3 - z2^2 / z1, z4)          variant="paper"

    The "mle" variant is the complete-data maximizer; "paper" keeps the
    alternative first component that divides by z3 instead (under
    stationarity z1 and z3 agree, so both converge to the same point).
    Variance components are floored at ``variance_floor``.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (4,):
        raise DegenerateStatisticError(f"expected a 4-vector of moments, got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise DegenerateStatisticError(f"non-finite moment vector {z}")
    z1, z2, z3, z4 = z
    if z1 <= 0.0 or z3 <= 0.0 or z4 <= 0.0:
        raise DegenerateStatisticError(
            f"moments z1={z1}, z3={z3}, z4={z4} must all be positive"
        )
    if variant == "mle":
        coeff = z2 / z1
    elif variant == "paper":
        coeff = z2 / z3
    else:
        raise ValueError(f"unknown M-step variant {variant!r}")
    state_var = max(z3 - z2 * z2 / z1, variance_floor)
    obs_var = max(z4, variance_floor)
    return np.array([coeff, state_var, obs_var])
