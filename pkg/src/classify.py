#!/usr/bin/env python3
"""
Classification from a coding result: weighted per-class reconstruction residuals,
sparsity concentration index (SCI) for rejecting impostors, and the PCA (Eigenface)
variant of the coder.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import structlog

from coding_types import (ClassPartition, CoderConfig, CodingResult, Dictionary, DomainError,
                          QuerySignal)
from ir3c import run_ir3c

logger = structlog.get_logger(__name__)


@dataclass(frozen=True)
class PcaModel:
    """Eigenface projection: features = basis @ (x - mean); rows of basis orthonormal."""
    mean: np.ndarray
    basis: np.ndarray
    eigenvalues: Optional[np.ndarray] = None

    @property
    def d(self) -> int:
        return int(self.basis.shape[0])

    @property
    def n(self) -> int:
        return int(self.basis.shape[1])

    def project(self, x) -> np.ndarray:
        return self.basis @ (np.asarray(x, dtype=np.float64) - self.mean)

    def reconstruct(self, features) -> np.ndarray:
        return self.mean + self.basis.T @ np.asarray(features, dtype=np.float64)

    @classmethod
    def identity(cls, n: int) -> 'PcaModel':
        return cls(mean=np.zeros(n), basis=np.eye(n))


@dataclass(frozen=True)
class ValidationScore:
    sci: float
    predicted_class: int
    accept: bool


def class_residuals(result, dictionary: Dictionary, y, partition: Optional[ClassPartition] = None,
                    weights=None, projection: Optional[np.ndarray] = None) -> np.ndarray:
    """
    l_c = || P W^1/2 (y - D_c alpha_c) || for every class c.

    Args:
        result: CodingResult (its final weights are used) or a bare coefficient vector
        dictionary: The dictionary that produced the coefficients
        y: QuerySignal or vector
        partition: Class partition (default: the dictionary's)
        weights: Pixel weights; defaults to the result's final weights, or all ones
        projection: Optional d x n projection for residuals in the feature domain

    Returns:
        Length-k array of non-negative residuals
    """
    if isinstance(result, CodingResult):
        alpha = result.alpha
        if weights is None:
            weights = result.final_weights.weights
    else:
        alpha = np.asarray(result, dtype=np.float64)
    partition = partition or dictionary.partition
    signal = y.values if isinstance(y, QuerySignal) else np.asarray(y, dtype=np.float64)
    D = dictionary.data
    scale = np.ones(D.shape[0]) if weights is None else np.sqrt(np.asarray(weights, dtype=np.float64))
    if not np.any(scale):
        logger.warning('all_weights_zero', classes=partition.k)

    residuals = np.empty(partition.k)
    for c in range(partition.k):
        atoms = partition.indices(c)
        if atoms.size == 0:
            raise DomainError(f'class {c} has no atoms')
        difference = scale * (signal - D[:, atoms] @ alpha[atoms])
        if projection is not None:
            difference = projection @ difference
        residuals[c] = np.linalg.norm(difference)
    return residuals


def predict(residuals) -> int:
    """Index of the smallest residual; ties go to the lowest class id."""
    return int(np.argmin(np.asarray(residuals, dtype=np.float64)))


def sci(alpha, partition: ClassPartition) -> float:
    """
    Sparsity concentration index: (k * max_c ||alpha_c||_1 / ||alpha||_1 - 1) / (k - 1).

    1 when all coefficient mass sits in one class, 0 when it is spread evenly.
    An all-zero alpha scores 0.
    """
    magnitudes = np.abs(np.asarray(alpha, dtype=np.float64))
    total = magnitudes.sum()
    if total == 0.0:
        return 0.0
    k = partition.k
    if k == 1:
        return 1.0
    masses = np.bincount(partition.labels, weights=magnitudes, minlength=k)
    score = (k * masses.max() / total - 1.0) / (k - 1.0)
    return float(min(max(score, 0.0), 1.0))


def validate(result: CodingResult, threshold: float) -> ValidationScore:
    return ValidationScore(sci=result.sci, predicted_class=result.predicted_class,
                           accept=result.sci >= threshold)


def fit_pca(training, d: int) -> PcaModel:
    """
    Principal basis of the training columns (n x m), mean-centered.

    Rows of the returned basis are orthonormal and ordered by descending eigenvalue of
    the scatter matrix X X^T of the centered columns.
    """
    X = np.asarray(training.data if isinstance(training, Dictionary) else training, dtype=np.float64)
    n, m = X.shape
    if not 1 <= d <= min(n, m):
        raise DomainError(f'PCA dimension {d} must lie in [1, {min(n, m)}]')
    mean = X.mean(axis=1)
    U, s, _ = np.linalg.svd(X - mean[:, None], full_matrices=False)
    rank_tol = s[0] * max(n, m) * np.finfo(np.float64).eps if s.size else 0.0
    rank = int(np.count_nonzero(s > rank_tol))
    if d > rank:
        raise DomainError(f'PCA dimension {d} exceeds the rank {rank} of the centered training data')
    return PcaModel(mean=mean, basis=U[:, :d].T.copy(), eigenvalues=s * s)


def run_ir3c_pca(dictionary: Dictionary, query: QuerySignal, pca: PcaModel,
                 config: CoderConfig) -> CodingResult:
    """
    IR3C with the coding step in the PCA domain.

    Residuals and weights stay in the pixel domain; step 3 minimizes
    ||P W^1/2 (y - D alpha)||^2 plus the coefficient penalty. Class residuals are taken
    in the projected domain unless config.residual_domain is 'pixel'.
    """
    if pca.n != dictionary.n:
        raise DomainError(f'PCA model expects {pca.n} pixels, dictionary has {dictionary.n}')
    return run_ir3c(dictionary, query, config, projection=pca.basis)
