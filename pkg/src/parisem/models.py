"""Concrete models: linear Gaussian and stochastic volatility.

Both share the same scalar AR(1) latent dynamics

    X_{t+1} = c X_t + s V_t,   V_t iid N(0, 1),

with coefficient ``c = theta[0]`` and innovation variance ``s^2 = theta[1]``,
and both use the same four-component additive sufficient statistic

    (x_t^2,  x_t x_{t+1},  x_{t+1}^2,  <emission moment>)

so they differ only in the emission law and the fourth component.
"""

from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np

from .ssm import StateSpaceModel, ar1_gaussian_m_step, gaussian_logpdf


class LGParams(NamedTuple):
    """Linear Gaussian parameters: X_{t+1} = a X_t + sigma_V V, Y = X + sigma_U U."""

    a: float
    sigma_v2: float
    sigma_u2: float


class SVParams(NamedTuple):
    """Stochastic volatility parameters: X_{t+1} = phi X_t + sigma V, Y = beta e^{X/2} U."""

    phi: float
    sigma2: float
    beta2: float


def stationary_ar1_std(coeff: float, var: float) -> float:
    """Std of the stationary AR(1) law, or 1.0 (with a warning) if |coeff| >= 1."""
    if abs(coeff) < 1.0:
        return float(np.sqrt(var / (1.0 - coeff * coeff)))
    warnings.warn(
        f"|AR coefficient| = {abs(coeff)} >= 1 has no stationary law; "
        "initializing from N(0, 1)",
        stacklevel=3,
    )
    return 1.0


class GaussianAR1Model(StateSpaceModel):
    """Shared AR(1)-Gaussian latent dynamics and statistic components 1-3.

    The initial law is the stationary AR(1) Gaussian when |coeff| < 1 and
    a standard normal otherwise (matching the simulators).
    """

    stat_dim = 4
    variance_components = (1, 2)

    def _log_transition(self, theta, x, x_new):
        return gaussian_logpdf(x_new - theta[0] * x, theta[1])

    def transition_bound(self, theta) -> float:
        # Gaussian kernel peaks at its mean regardless of x.
        theta = self.validate_params(theta)
        return float(1.0 / np.sqrt(2.0 * np.pi * theta[1]))

    def sample_transition(self, theta, x, rng):
        theta = self.validate_params(theta, allow_zero_variance=True)
        x = np.asarray(x, dtype=float)
        return theta[0] * x + np.sqrt(theta[1]) * rng.standard_normal(x.shape)

    def sample_initial(self, theta, n, rng):
        theta = self.validate_params(theta, allow_zero_variance=True)
        return stationary_ar1_std(theta[0], theta[1]) * rng.standard_normal(n)

    def _latent_stats(self, x, x_new):
        x = np.asarray(x, dtype=float)
        x_new = np.asarray(x_new, dtype=float)
        return x * x, x * x_new, x_new * x_new

    def m_step(self, z, variant: str = "mle"):
        return ar1_gaussian_m_step(z, variant)


class LinearGaussianModel(GaussianAR1Model):
    """Y_t = X_t + sigma_U U_t with theta = (a, sigma_v2, sigma_u2)."""

    name = "lg"
    param_names = ("a", "sigma_v2", "sigma_u2")

    def _log_emission(self, theta, x, y):
        return gaussian_logpdf(np.asarray(y, dtype=float) - x, theta[2])

    def stat_increment_terms(self, x, x_new, y_new):
        s1, s2, s3 = self._latent_stats(x, x_new)
        resid = np.asarray(y_new, dtype=float) - np.asarray(x_new, dtype=float)
        return [s1, s2, s3, resid * resid]


class StochasticVolatilityModel(GaussianAR1Model):
    """Y_t = beta exp(X_t / 2) U_t with theta = (phi, sigma2, beta2)."""

    name = "sv"
    param_names = ("phi", "sigma2", "beta2")

    def _log_emission(self, theta, x, y):
        # Y | X=x ~ N(0, beta2 * e^x)
        return gaussian_logpdf(np.asarray(y, dtype=float), theta[2] * np.exp(x))

    def stat_increment_terms(self, x, x_new, y_new):
        s1, s2, s3 = self._latent_stats(x, x_new)
        y = np.asarray(y_new, dtype=float)
        return [s1, s2, s3, y * y * np.exp(-np.asarray(x_new, dtype=float))]


MODELS = {
    LinearGaussianModel.name: LinearGaussianModel,
    StochasticVolatilityModel.name: StochasticVolatilityModel,
}


def get_model(model_id: str) -> StateSpaceModel:
    """Instantiate a shipped model by its string id ("lg" or "sv")."""
    try:
        return MODELS[model_id]()
    except KeyError:
        raise ValueError(f"unknown model id {model_id!r}; known: {sorted(MODELS)}") from None


# ----------------------------------------------------------------------
# Data simulators
# ----------------------------------------------------------------------


def _simulate_ar1(coeff, innov_std, n, rng):
    states = np.empty(n)
    states[0] = stationary_ar1_std(coeff, innov_std * innov_std) * rng.standard_normal()
    noise = innov_std * rng.standard_normal(n - 1)
    for t in range(n - 1):
        states[t + 1] = coeff * states[t] + noise[t]
    return states


def lg_simulate(theta, n_obs: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Simulate ``n_obs`` steps of the linear Gaussian model.

    Returns (states, observations), each of length ``n_obs``; the initial
    state is drawn from the stationary law (standard normal if |a| >= 1).
    """
    if n_obs < 1:
        raise ValueError("n_obs must be >= 1")
    a, sigma_v2, sigma_u2 = LinearGaussianModel().validate_params(
        theta, allow_zero_variance=True
    )
    states = _simulate_ar1(a, np.sqrt(sigma_v2), n_obs, rng)
    obs = states + np.sqrt(sigma_u2) * rng.standard_normal(n_obs)
    return states, obs


def sv_simulate(theta, n_obs: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Simulate ``n_obs`` steps of the stochastic volatility model."""
    if n_obs < 1:
        raise ValueError("n_obs must be >= 1")
    phi, sigma2, beta2 = StochasticVolatilityModel().validate_params(
        theta, allow_zero_variance=True
    )
    states = _simulate_ar1(phi, np.sqrt(sigma2), n_obs, rng)
    obs = np.sqrt(beta2) * np.exp(states / 2.0) * rng.standard_normal(n_obs)
    return states, obs


def simulate(model_id: str, theta, n_obs: int, rng):
    """Dispatch to the simulator matching ``model_id``."""
    if model_id == "lg":
        return lg_simulate(theta, n_obs, rng)
    if model_id == "sv":
        return sv_simulate(theta, n_obs, rng)
    raise ValueError(f"unknown model id {model_id!r}; known: {sorted(MODELS)}")
