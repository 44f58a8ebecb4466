#!/usr/bin/env python3
"""
Inner minimizers for the weighted coding step of IR3C.

- beta = 2: weighted ridge regression, alpha = (D^T W D + lambda I)^-1 D^T W y
- beta = 1: weighted l1 coding by reweighting the coefficients (IRLS)

Both run matrix-free on a conjugate-gradient kernel. The weighted data term is applied
as s * (s * (D x)) with s = sqrt(w), optionally followed by a PCA projection P, so the
pixel-domain and projected paths share one operator.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import structlog

from coding_types import CoderConfig, Dictionary, NumericError, QuerySignal

logger = structlog.get_logger(__name__)

EPSILON_MIN = 1e-10
# factor applied to epsilon each time the inner loop settles at the current epsilon
EPSILON_DECAY = 0.1


@dataclass(frozen=True)
class CgResult:
    x: np.ndarray
    iterations: int
    residual_norm: float
    converged: bool


@dataclass(frozen=True)
class CoefWeightState:
    """Diagonal of V and the smoothing scalar used to build it."""
    v: np.ndarray
    epsilon: float


@dataclass(frozen=True)
class StepResult:
    """
    Coefficients of one coding step plus how the solves behind them went.

    cg_failures counts CG solves that stopped at their cap or broke down.
    inner_converged is False when the IRLS loop ran out of steps (always True for ridge).
    """
    alpha: np.ndarray
    cg_solves: int = 1
    cg_failures: int = 0
    inner_steps: int = 1
    inner_converged: bool = True
    epsilon: Optional[float] = None


def cg_solve(apply_A: Callable[[np.ndarray], np.ndarray], b, tol: float = 1e-8,
             max_iter: Optional[int] = None, x0: Optional[np.ndarray] = None,
             preconditioner: Optional[np.ndarray] = None) -> CgResult:
    """
    Conjugate gradient for a symmetric positive definite operator.

    Args:
        apply_A: Function computing A @ x
        b: Right-hand side
        tol: Stop once ||A x - b|| <= tol * ||b||
        max_iter: Iteration cap (default 2 * len(b))
        x0: Starting point (default zeros)
        preconditioner: Optional positive vector M^-1 of a diagonal (Jacobi) preconditioner

    Returns:
        CgResult with the best iterate seen; converged is False when the cap was hit

    Raises:
        NumericError: If a non-finite value shows up
    """
    b = np.asarray(b, dtype=np.float64)
    size = b.size
    if max_iter is None:
        max_iter = 2 * size
    b_norm = float(np.linalg.norm(b))
    if not np.isfinite(b_norm):
        raise NumericError('conjugate gradient right-hand side is not finite')
    if b_norm == 0.0:
        return CgResult(np.zeros(size), 0, 0.0, True)
    threshold = tol * b_norm

    x = np.zeros(size) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - apply_A(x) if x0 is not None else b.copy()
    z = r if preconditioner is None else preconditioner * r
    p = z.copy()
    rz_old = float(r @ z)
    best_x, best_norm = x.copy(), float(np.linalg.norm(r))
    if best_norm <= threshold:
        return CgResult(best_x, 0, best_norm, True)

    for iteration in range(1, max_iter + 1):
        Ap = apply_A(p)
        curvature = float(p @ Ap)
        if not np.isfinite(curvature) or curvature <= 0.0:
            if not np.isfinite(curvature):
                raise NumericError(f'non-finite curvature at conjugate gradient iteration {iteration}')
            # breakdown: operator not positive definite along p, keep the best iterate
            logger.warning('cg_breakdown', iteration=iteration, curvature=curvature)
            return CgResult(best_x, iteration, best_norm, False)
        step = rz_old / curvature
        x = x + step * p
        r = r - step * Ap
        if preconditioner is None:
            z = r
            rz_new = float(r @ r)
            r_norm = np.sqrt(rz_new)
        else:
            z = preconditioner * r
            rz_new = float(r @ z)
            r_norm = float(np.linalg.norm(r))
        if not np.isfinite(rz_new):
            raise NumericError(f'non-finite residual at conjugate gradient iteration {iteration}')
        if r_norm < best_norm:
            best_x, best_norm = x.copy(), r_norm
        if r_norm <= threshold:
            return CgResult(x, iteration, r_norm, True)
        p = z + (rz_new / rz_old) * p
        rz_old = rz_new

    logger.warning('cg_not_converged', iterations=max_iter, relative_residual=best_norm / b_norm, tol=tol)
    return CgResult(best_x, max_iter, best_norm, False)


class WeightedFidelity:
    """
    The linear map x -> P (s * (D x)) with s = sqrt(w); P is optional.

    Its normal operator plus a diagonal is the system matrix of every coding solve.
    """

    def __init__(self, matrix: np.ndarray, weights, projection: Optional[np.ndarray] = None):
        self.matrix = matrix
        self.sqrt_weights = np.sqrt(np.asarray(weights, dtype=np.float64))
        self.projection = projection
        if self.sqrt_weights.shape != (matrix.shape[0],):
            raise ValueError(f'{self.sqrt_weights.size} weights for {matrix.shape[0]} rows')

    def forward(self, x: np.ndarray) -> np.ndarray:
        z = self.sqrt_weights * (self.matrix @ x)
        return z if self.projection is None else self.projection @ z

    def adjoint(self, z: np.ndarray) -> np.ndarray:
        if self.projection is not None:
            z = self.projection.T @ z
        return self.matrix.T @ (self.sqrt_weights * z)

    def signal(self, y: np.ndarray) -> np.ndarray:
        z = self.sqrt_weights * y
        return z if self.projection is None else self.projection @ z

    def rhs(self, y: np.ndarray) -> np.ndarray:
        return self.adjoint(self.signal(y))

    def gram_diagonal(self) -> np.ndarray:
        """Diagonal of M^T M: squared norm of every weighted (and projected) column."""
        columns = self.sqrt_weights[:, None] * self.matrix
        if self.projection is not None:
            columns = self.projection @ columns
        return np.einsum('ij,ij->j', columns, columns)

    def normal_solve(self, y: np.ndarray, diagonal, tol: float, max_iter: int,
                     preconditioner: Optional[np.ndarray] = None, x0: Optional[np.ndarray] = None) -> CgResult:
        """Solve (M^T M + diag) x = M^T y for M = this map."""
        return cg_solve(lambda x: self.adjoint(self.forward(x)) + diagonal * x, self.rhs(y), tol=tol,
                        max_iter=max_iter, x0=x0, preconditioner=preconditioner)


def _matrix(D) -> np.ndarray:
    return D.data if isinstance(D, Dictionary) else np.asarray(D, dtype=np.float64)


def _signal(y) -> np.ndarray:
    return y.values if isinstance(y, QuerySignal) else np.asarray(y, dtype=np.float64)


def _ridge_step(matrix: np.ndarray, w, y, lam: float, tol: float, max_iter: Optional[int],
                projection: Optional[np.ndarray]) -> StepResult:
    fidelity = WeightedFidelity(matrix, w, projection)
    cap = max_iter if max_iter is not None else 2 * matrix.shape[1]
    result = fidelity.normal_solve(_signal(y), lam, tol, cap)
    return StepResult(alpha=result.x, cg_failures=0 if result.converged else 1)


def solve_weighted_ridge(D, w, y, lam: float, *, tol: float = 1e-8, max_iter: Optional[int] = None,
                         projection: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Minimize ||W^1/2 (y - D alpha)||^2 + lam ||alpha||^2.

    Args:
        D: Dictionary or n x m matrix
        w: Length-n non-negative weights
        y: QuerySignal or length-n vector
        lam: Ridge parameter (0 allowed when D^T W D is nonsingular)
        tol: Relative residual target of the normal equations
        max_iter: CG cap (default 2 * m)
        projection: Optional d x n projection applied after weighting

    Returns:
        Coefficient vector of length m
    """
    return _ridge_step(_matrix(D), w, y, lam, tol, max_iter, projection).alpha


def update_coef_weights(alpha, lam: float, epsilon: float) -> np.ndarray:
    """V_jj = lam / sqrt(alpha_j^2 + epsilon^2)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    return lam / np.sqrt(alpha * alpha + epsilon * epsilon)


def update_epsilon(alpha, epsilon_prev: float, L: Optional[int] = None) -> float:
    """
    epsilon <- min(epsilon_prev, (L-th largest |alpha_j|) / m), floored at EPSILON_MIN.

    L defaults to floor(0.01 m), and is never below 1.
    """
    magnitudes = np.sort(np.abs(np.asarray(alpha, dtype=np.float64)))[::-1]
    m = magnitudes.size
    if L is None:
        L = int(0.01 * m)
    L = min(max(L, 1), m)
    candidate = magnitudes[L - 1] / m
    return max(min(epsilon_prev, candidate), EPSILON_MIN)


def _settled(alpha: np.ndarray, alpha_prev: Optional[np.ndarray], tol: float) -> bool:
    if alpha_prev is None:
        return False
    change = np.linalg.norm(alpha - alpha_prev)
    scale = np.linalg.norm(alpha_prev)
    return (change / scale if scale > 0 else change) < tol


def _l1_step(matrix: np.ndarray, w, y, lam: float, config: CoderConfig,
             projection: Optional[np.ndarray]) -> StepResult:
    signal = _signal(y)
    fidelity = WeightedFidelity(matrix, w, projection)
    m = matrix.shape[1]
    cap = config.cg_iterations(m)
    gram = fidelity.gram_diagonal()

    state = CoefWeightState(v=np.ones(m), epsilon=config.epsilon0)
    alpha_prev = None
    alpha = np.zeros(m)
    failures = 0
    for step in range(1, config.irls_inner_max_iter + 1):
        diagonal = 0.5 * state.v
        result = fidelity.normal_solve(signal, diagonal, config.cg_tol, cap,
                                       preconditioner=1.0 / (gram + diagonal), x0=alpha_prev)
        failures += 0 if result.converged else 1
        alpha = result.x
        settled = _settled(alpha, alpha_prev, config.irls_inner_tol)
        if settled and state.epsilon <= EPSILON_MIN:
            return StepResult(alpha, step, failures, step, True, state.epsilon)
        epsilon = update_epsilon(alpha, state.epsilon)
        if settled:
            # continuation: once the smoothed problem is solved, tighten it toward plain l1
            epsilon = max(min(epsilon, state.epsilon * EPSILON_DECAY), EPSILON_MIN)
        state = CoefWeightState(v=update_coef_weights(alpha, lam, epsilon), epsilon=epsilon)
        alpha_prev = alpha

    logger.warning('irls_inner_cap_reached', steps=config.irls_inner_max_iter, epsilon=state.epsilon)
    steps = config.irls_inner_max_iter
    return StepResult(alpha, steps, failures, steps, False, state.epsilon)


def solve_weighted_l1(D, w, y, lam: float, config: CoderConfig, *,
                      projection: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Approximately minimize ||W^1/2 (y - D alpha)||^2 + lam ||alpha||_1 by IRLS.

    Each inner step solves (D^T W D + V/2) alpha = D^T W y, starting from V = I, then
    refreshes epsilon and V from the new coefficients. Whenever the relative coefficient
    change drops below config.irls_inner_tol, epsilon is cut by EPSILON_DECAY; the loop
    ends once it has settled with epsilon at EPSILON_MIN, or after
    config.irls_inner_max_iter steps.
    """
    return _l1_step(_matrix(D), w, y, lam, config, projection).alpha


def solve_coding_step(D, w, y, config: CoderConfig, *,
                      projection: Optional[np.ndarray] = None) -> StepResult:
    """Dispatch step 3 on beta: ridge for beta = 2, IRLS l1 for beta = 1."""
    matrix = _matrix(D)
    if config.beta == 2:
        return _ridge_step(matrix, w, y, config.lam, config.cg_tol,
                           config.cg_iterations(matrix.shape[1]), projection)
    return _l1_step(matrix, w, y, config.lam, config, projection)
