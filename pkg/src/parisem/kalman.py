"""Exact references for the linear Gaussian model.

The scalar model X_{t+1} = a X_t + sigma_V V_t, Y_t = X_t + sigma_U U_t
admits closed-form filtering and smoothing, which makes it the ground
truth for everything the particle machinery estimates: filter means,
smoothed sufficient statistics, the exact likelihood (via the
prediction-error decomposition), and an exact batch EM step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import LinearGaussianModel, stationary_ar1_std
from .ssm import ar1_gaussian_m_step, gaussian_logpdf

_LG = LinearGaussianModel()


@dataclass
class KalmanState:
    """Predicted and filtered moments per time step, plus the exact log-likelihood."""

    predicted_means: np.ndarray
    predicted_vars: np.ndarray
    filtered_means: np.ndarray
    filtered_vars: np.ndarray
    loglik: float


@dataclass
class SmoothedState:
    """Smoothed means/variances and one-step-apart smoothed covariances.

    ``lag_one_covs[t]`` is Cov(X_t, X_{t+1} | all observations), length T-1.
    """

    means: np.ndarray
    variances: np.ndarray
    lag_one_covs: np.ndarray


def kalman_filter(theta, observations) -> KalmanState:
    """Scalar Kalman recursion started from the stationary state law."""
    a, sigma_v2, sigma_u2 = _lg_params(theta)
    ys = np.asarray(observations, dtype=float)
    n = ys.shape[0]
    if n < 1:
        raise ValueError("need at least one observation")

    m_pred = np.empty(n)
    p_pred = np.empty(n)
    m_filt = np.empty(n)
    p_filt = np.empty(n)
    m_pred[0] = 0.0
    p_pred[0] = stationary_ar1_std(a, sigma_v2) ** 2

    loglik = 0.0
    for t in range(n):
        innov_var = p_pred[t] + sigma_u2
        gain = p_pred[t] / innov_var
        m_filt[t] = m_pred[t] + gain * (ys[t] - m_pred[t])
        p_filt[t] = (1.0 - gain) * p_pred[t]
        loglik += float(gaussian_logpdf(ys[t] - m_pred[t], innov_var))
        if t + 1 < n:
            m_pred[t + 1] = a * m_filt[t]
            p_pred[t + 1] = a * a * p_filt[t] + sigma_v2
    return KalmanState(m_pred, p_pred, m_filt, p_filt, loglik)


def rts_smoother(theta, kstate: KalmanState) -> SmoothedState:
    """Backward smoothing pass over Kalman output.

    The lag-one covariance follows from the smoother gain G_t:
    Cov(X_t, X_{t+1} | Y) = G_t Var(X_{t+1} | Y).
    """
    a, _, _ = _lg_params(theta)
    n = kstate.filtered_means.shape[0]
    means = kstate.filtered_means.copy()
    variances = kstate.filtered_vars.copy()
    lag_one = np.zeros(max(n - 1, 0))
    for t in range(n - 2, -1, -1):
        p_pred = kstate.predicted_vars[t + 1]
        gain = a * kstate.filtered_vars[t] / p_pred if p_pred > 0.0 else 0.0
        means[t] += gain * (means[t + 1] - kstate.predicted_means[t + 1])
        variances[t] += gain * gain * (variances[t + 1] - p_pred)
        lag_one[t] = gain * variances[t + 1]
    return SmoothedState(means, variances, lag_one)


def lg_exact_smoothed_stats(theta, observations) -> np.ndarray:
    """Exact conditional expectation of the summed sufficient statistics.

    Second moments decompose into smoothed means plus (co)variances, e.g.
    E[sum_t X_t X_{t+1} | Y] = sum_t (m_t m_{t+1} + C_{t,t+1}).
    """
    ys = np.asarray(observations, dtype=float)
    if ys.shape[0] < 2:
        raise ValueError("need at least two observations for one transition")
    sm = rts_smoother(theta, kalman_filter(theta, ys))
    m, p, c = sm.means, sm.variances, sm.lag_one_covs
    second = m * m + p
    z1 = second[:-1].sum()
    z2 = (m[:-1] * m[1:] + c).sum()
    z3 = second[1:].sum()
    z4 = ((ys[1:] - m[1:]) ** 2 + p[1:]).sum()
    return np.array([z1, z2, z3, z4])


def lg_loglik(theta, observations) -> float:
    """Exact log-likelihood via the prediction-error decomposition."""
    return kalman_filter(theta, observations).loglik


def lg_batch_em_step(theta, observations, variant: str = "mle") -> np.ndarray:
    """One exact EM iteration: exact E-step, closed-form M-step."""
    ys = np.asarray(observations, dtype=float)
    z = lg_exact_smoothed_stats(theta, ys)
    return ar1_gaussian_m_step(z / (ys.shape[0] - 1), variant)


def _lg_params(theta):
    theta = _LG.validate_params(theta, allow_zero_variance=True)
    if theta[2] <= 0.0:
        raise ValueError("observation-noise variance must be positive")
    return float(theta[0]), float(theta[1]), float(theta[2])
