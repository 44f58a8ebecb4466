#!/usr/bin/env python3
"""
Iteratively reweighted regularized robust coding (IR3C).

Alternates residual-weight estimation and weighted regularized coding:

    1. e = y - D alpha
    2. W = logistic weights of e (mu, delta re-estimated)
    3. alpha* = weighted ridge (beta = 2) or weighted l1 (beta = 1)
    4. alpha = alpha_prev + nu (alpha* - alpha_prev), nu found by halving
    5. reconstruction D alpha
    6. stop when the weights settle, the line search finds no decrease, or at the cap
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import structlog

from coding_types import (CoderConfig, CodingResult, Dictionary, IterationRecord, NumericError,
                          QuerySignal, RobustCodingError, WeightState)
from solver import solve_coding_step
from weights import WeightParams, compute_weights, params_of, rho_theta

logger = structlog.get_logger(__name__)

STOP_CONVERGED = 'weights_converged'
STOP_FIXED_POINT = 'line_search_fixed_point'
STOP_MAX_ITER = 'max_outer_iter'


@dataclass(frozen=True)
class LineSearchResult:
    nu: float
    alpha: np.ndarray
    objective: float
    fixed_point: bool
    ceiling_bound: bool = False


def init_alpha(m: int) -> np.ndarray:
    """Uniform coefficients 1/m, so D alpha is the mean training column."""
    if m < 1:
        raise ValueError(f'need at least one atom, got m={m}')
    return np.full(m, 1.0 / m)


def objective(alpha, D, y, params: WeightParams, config: CoderConfig) -> float:
    """Robust coding objective: sum_i rho_theta(y_i - r_i alpha) + lam * sum_j |alpha_j|^beta."""
    matrix = D.data if isinstance(D, Dictionary) else D
    signal = y.values if isinstance(y, QuerySignal) else y
    alpha = np.asarray(alpha, dtype=np.float64)
    residual = signal - matrix @ alpha
    fidelity = float(np.sum(rho_theta(residual, params)))
    if config.beta == 1:
        penalty = float(np.sum(np.abs(alpha)))
    else:
        penalty = float(alpha @ alpha)
    return fidelity + config.lam * penalty


def line_search(alpha_prev, alpha_star, D, y, params: WeightParams, config: CoderConfig,
                ceiling: Optional[float] = None) -> LineSearchResult:
    """
    Find nu in {1, 1/2, 1/4, ...} that strictly lowers the objective.

    Both sides are evaluated with the same (mu, delta). When ceiling is given the new
    objective must also be below it, and ceiling_bound reports whether that rejected a step
    which beat the current iterate. With no previous iterate, nu = 1 and alpha* is taken.
    """
    alpha_star = np.asarray(alpha_star, dtype=np.float64)
    if alpha_prev is None:
        return LineSearchResult(1.0, alpha_star, objective(alpha_star, D, y, params, config), False)

    alpha_prev = np.asarray(alpha_prev, dtype=np.float64)
    baseline = objective(alpha_prev, D, y, params, config)
    limit = baseline if ceiling is None else min(baseline, ceiling)
    direction = alpha_star - alpha_prev
    if not np.any(direction):
        return LineSearchResult(0.0, alpha_prev, baseline, True)

    nu = 1.0
    bound = False
    for _ in range(config.max_line_search_halvings + 1):
        candidate = alpha_prev + nu * direction
        value = objective(candidate, D, y, params, config)
        if value < limit:
            return LineSearchResult(nu, candidate, value, False, bound)
        bound = bound or value < baseline
        nu *= 0.5
    return LineSearchResult(0.0, alpha_prev, baseline, True, bound)


def check_convergence(w_prev, w_curr, delta_w: float) -> bool:
    """True iff ||w_curr - w_prev|| / ||w_prev|| < delta_w."""
    w_prev = np.asarray(w_prev, dtype=np.float64)
    w_curr = np.asarray(w_curr, dtype=np.float64)
    return weight_change(w_prev, w_curr) < delta_w


def weight_change(w_prev: np.ndarray, w_curr: np.ndarray) -> float:
    scale = np.linalg.norm(w_prev)
    change = np.linalg.norm(w_curr - w_prev)
    if scale == 0.0:
        return 0.0 if change == 0.0 else float('inf')
    return float(change / scale)


def _weigh(residual: np.ndarray, config: CoderConfig, fixed_weights: Optional[np.ndarray]) -> WeightState:
    state = compute_weights(residual, config.tau, config.zeta)
    if fixed_weights is None:
        return state
    return WeightState(weights=fixed_weights, mu=state.mu, delta=state.delta)


def run_ir3c(dictionary: Dictionary, query: QuerySignal, config: CoderConfig, *,
             projection: Optional[np.ndarray] = None,
             fixed_weights: Optional[np.ndarray] = None) -> CodingResult:
    """
    Code one query over a dictionary with adaptive residual weights.

    Args:
        dictionary: Unit-norm atoms with their class partition
        query: Unit-norm query
        config: Coder parameters
        projection: Optional d x n PCA basis; only the coding step moves to that domain
        fixed_weights: Pin W to these weights instead of estimating them

    Returns:
        CodingResult with coefficients, final weights, class residuals and the trace
    """
    # local import: classify imports this module for the PCA variant
    from classify import class_residuals, predict, sci

    D = dictionary.data
    y = query.values
    if D.shape[0] != y.size:
        raise ValueError(f'query has {y.size} entries, dictionary rows are {D.shape[0]}')
    if fixed_weights is not None:
        fixed_weights = np.asarray(fixed_weights, dtype=np.float64)

    alpha = init_alpha(dictionary.m)
    records: List[IterationRecord] = []
    previous: Optional[WeightState] = None
    initial: Optional[WeightState] = None
    stop_reason = STOP_MAX_ITER
    solver_failures = 0

    for t in range(1, config.max_outer_iter + 1):
        residual = y - D @ alpha
        state = _weigh(residual, config, fixed_weights)
        if initial is None:
            initial = state
        change = None
        if previous is not None:
            change = weight_change(previous.weights, state.weights)
            if change < config.delta_w:
                stop_reason = STOP_CONVERGED
                break

        keep = None
        if config.pixel_drop_threshold is not None:
            keep = state.weights >= config.pixel_drop_threshold
            if keep.all():
                keep = None
        try:
            if keep is None:
                step = solve_coding_step(D, state.weights, y, config, projection=projection)
            else:
                sub_projection = None if projection is None else projection[:, keep]
                step = solve_coding_step(D[keep], state.weights[keep], y[keep], config,
                                         projection=sub_projection)
        except RobustCodingError as exc:
            raise NumericError(f'coding step failed at outer iteration {t}: {exc}') from exc
        solver_failures += step.cg_failures + (0 if step.inner_converged else 1)

        params = params_of(state)
        search = line_search(alpha if t > 1 else None, step.alpha, D, y, params, config,
                             ceiling=records[-1].objective if records else None)
        if search.fixed_point:
            stop_reason = STOP_FIXED_POINT
            break
        alpha = search.alpha
        dropped = 0 if keep is None else int(np.count_nonzero(~keep))
        records.append(IterationRecord(
            iteration=t,
            objective=search.objective,
            step=search.nu,
            weight_change=change,
            dropped_pixels=dropped,
            reconstruction_norm=float(np.linalg.norm(D @ alpha)),
            cg_failures=step.cg_failures,
            inner_converged=step.inner_converged,
            ceiling_bound=search.ceiling_bound,
        ))
        logger.debug('ir3c_iteration', iteration=t, objective=search.objective, nu=search.nu,
                     weight_change=change, delta=state.delta, dropped=dropped)
        previous = state
    else:
        state = _weigh(y - D @ alpha, config, fixed_weights)

    reconstruction = D @ alpha
    final = state
    residuals = class_residuals(alpha, dictionary, y, weights=final.weights, projection=projection
                                if config.residual_domain == 'projected' else None)
    return CodingResult(
        alpha=alpha,
        final_weights=final,
        initial_weights=initial,
        residual=y - reconstruction,
        reconstruction=reconstruction,
        per_class_residuals=residuals,
        predicted_class=predict(residuals),
        sci=sci(alpha, dictionary.partition),
        trace=records,
        stop_reason=stop_reason,
        solver_failures=solver_failures,
    )
