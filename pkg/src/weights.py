#!/usr/bin/env python3
"""
Adaptive residual weighting: the logistic weight function, its loss rho_theta,
and per-iteration estimation of (mu, delta) from the coding residual.

A pixel whose squared residual equals delta gets weight exactly 0.5; mu = zeta / delta
controls how fast the weight drops past that point.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from coding_types import DomainError, WeightState, floor_fraction

# Floor for delta when the tau-quantile of the squared residuals is zero.
DELTA_MIN = 1e-12


@dataclass(frozen=True)
class WeightParams:
    mu: float
    delta: float

    @property
    def zeta(self) -> float:
        return self.mu * self.delta


def _residual_array(residual) -> np.ndarray:
    values = np.asarray(residual, dtype=np.float64).ravel()
    if values.size == 0:
        raise DomainError('residual must have at least one entry')
    if not np.all(np.isfinite(values)):
        raise DomainError('residual has non-finite entries')
    return values


def estimate_delta(residual, tau: float) -> float:
    """
    Demarcation point: the l-th largest squared residual with l = floor(tau * n).

    Args:
        residual: Coding residual e = y - D alpha
        tau: Quantile in (0, 1); 0.8 for clean queries, 0.6 for occluded ones

    Returns:
        delta, floored at DELTA_MIN
    """
    values = _residual_array(residual)
    if not 0.0 < tau < 1.0:
        raise DomainError(f'tau must lie in (0, 1), got {tau}')
    squares = np.sort(values * values)[::-1]
    position = max(floor_fraction(tau, values.size), 1)
    return max(float(squares[position - 1]), DELTA_MIN)


def make_params(residual, tau: float, zeta: float) -> WeightParams:
    delta = estimate_delta(residual, tau)
    return WeightParams(mu=zeta / delta, delta=delta)


def logistic_weight(e, params: WeightParams):
    """
    omega(e) = 1 / (1 + exp(mu * e^2 - mu * delta)).

    Works on scalars and arrays. expit keeps the result finite for any exponent.
    """
    e = np.asarray(e, dtype=np.float64)
    exponent = params.mu * (e * e) - params.mu * params.delta
    weight = expit(-exponent)
    return float(weight) if weight.ndim == 0 else weight


def rho_theta(e, params: WeightParams):
    """
    Loss whose derivative over e is e * logistic_weight(e).

    rho(e) = (ln(1 + exp(mu*delta)) - ln(1 + exp(mu*delta - mu*e^2))) / (2 mu),
    zero at e = 0 and bounded by ln(1 + exp(mu*delta)) / (2 mu).
    """
    e = np.asarray(e, dtype=np.float64)
    mu_delta = params.mu * params.delta
    loss = (np.logaddexp(0.0, mu_delta) - np.logaddexp(0.0, mu_delta - params.mu * (e * e))) / (2.0 * params.mu)
    loss = np.maximum(loss, 0.0)
    return float(loss) if loss.ndim == 0 else loss


def rho_theta_bound(params: WeightParams) -> float:
    return float(np.logaddexp(0.0, params.mu * params.delta) / (2.0 * params.mu))


def compute_weights(residual, tau: float, zeta: float) -> WeightState:
    """
    Step 2 of IR3C: estimate (mu, delta) from the residual and weight every pixel.

    Pixels whose squared residual exceeds delta end up with weight below 0.5.
    """
    values = _residual_array(residual)
    params = make_params(values, tau, zeta)
    weights = logistic_weight(values, params)
    return WeightState(weights=np.atleast_1d(weights), mu=params.mu, delta=params.delta)


def params_of(state: WeightState) -> WeightParams:
    return WeightParams(mu=state.mu, delta=state.delta)
