#!/usr/bin/env python3
"""
Shared data model for robust coding: dictionaries, query signals, class partitions,
coder configuration and coding results.

Every other module depends only on the types defined here. All types are immutable
after construction (arrays are flagged read-only) so they can be shared across workers.
"""

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
import structlog

logger = structlog.get_logger(__name__)

# Column norms must land within this distance of 1 after ingestion.
UNIT_NORM_TOL = 1e-9


class RobustCodingError(Exception):
    """Base class for every error raised by this package."""


class DomainError(RobustCodingError, ValueError):
    """Invalid numeric input (zero or non-finite vector, out-of-range fraction, ...)."""


class NumericError(RobustCodingError, ArithmeticError):
    """A solver produced a non-finite intermediate."""


class ConfigError(RobustCodingError, ValueError):
    """Invalid configuration value."""


class DatasetError(RobustCodingError):
    """Dataset ingestion failed (missing file, dimension mismatch, empty class)."""


def floor_fraction(fraction: float, count: int) -> int:
    """Return floor(fraction * count), robust to binary rounding such as 0.29 * 100."""
    return int(math.floor(fraction * count + 1e-9))


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def normalize(vector) -> np.ndarray:
    """
    Scale a vector to unit l2 norm.

    Args:
        vector: Sequence or array of reals with at least one nonzero entry

    Returns:
        New float64 array with norm 1, same direction

    Raises:
        DomainError: If the vector is empty, all-zero or has non-finite entries
    """
    values = np.asarray(vector, dtype=np.float64).ravel()
    if values.size == 0:
        raise DomainError('cannot normalize an empty vector')
    if not np.all(np.isfinite(values)):
        raise DomainError('cannot normalize a vector with non-finite entries')
    norm = np.linalg.norm(values)
    if norm == 0.0:
        raise DomainError('cannot normalize the zero vector')
    return values / norm


@dataclass(frozen=True)
class ClassPartition:
    """Class label per dictionary atom; k is derived from the labels."""
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if labels.size == 0:
            raise DomainError('class partition needs at least one label')
        if labels.min() < 0:
            raise DomainError('class ids must be non-negative')
        counts = np.bincount(labels)
        missing = np.flatnonzero(counts == 0)
        if missing.size:
            raise DomainError(f'class ids {missing.tolist()} have no atoms')
        object.__setattr__(self, 'labels', _frozen(labels.copy()))

    @property
    def k(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def m(self) -> int:
        return int(self.labels.size)

    def indices(self, class_id: int) -> np.ndarray:
        """Atom indices belonging to a class, in ascending order."""
        return np.flatnonzero(self.labels == class_id)

    @classmethod
    def single_class(cls, m: int) -> 'ClassPartition':
        return cls(np.zeros(m, dtype=np.int64))


@dataclass(frozen=True)
class Dictionary:
    """
    n x m matrix of unit-norm atoms (one training sample per column) plus its class partition.

    Use Dictionary.from_columns to build one from raw data; the constructor expects
    columns that are already normalized and checks it.
    """
    data: np.ndarray
    partition: Optional[ClassPartition] = None

    def __post_init__(self):
        data = np.asfortranarray(np.asarray(self.data, dtype=np.float64))
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise DomainError(f'dictionary must be a non-empty 2-D matrix, got shape {data.shape}')
        if not np.all(np.isfinite(data)):
            raise DomainError('dictionary has non-finite entries')
        norms = np.linalg.norm(data, axis=0)
        bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_NORM_TOL)
        if bad.size:
            raise DomainError(f'dictionary columns {bad[:5].tolist()} are not unit norm')
        partition = self.partition
        if partition is None:
            partition = ClassPartition.single_class(data.shape[1])
        if partition.m != data.shape[1]:
            raise DomainError(f'partition has {partition.m} labels for {data.shape[1]} atoms')
        object.__setattr__(self, 'data', _frozen(data))
        object.__setattr__(self, 'partition', partition)

    @classmethod
    def from_columns(cls, columns, labels: Optional[Sequence[int]] = None) -> 'Dictionary':
        """Normalize every column of an n x m matrix and wrap it."""
        matrix = np.asarray(columns, dtype=np.float64)
        if matrix.ndim != 2:
            raise DomainError(f'expected a 2-D matrix, got shape {matrix.shape}')
        normalized = np.empty_like(matrix, order='F')
        for j in range(matrix.shape[1]):
            try:
                normalized[:, j] = normalize(matrix[:, j])
            except DomainError as exc:
                raise DomainError(f'column {j}: {exc}') from exc
        partition = ClassPartition(labels) if labels is not None else None
        return cls(normalized, partition)

    @property
    def n(self) -> int:
        return int(self.data.shape[0])

    @property
    def m(self) -> int:
        return int(self.data.shape[1])

    @property
    def k(self) -> int:
        return self.partition.k

    def column_mean(self) -> np.ndarray:
        return self.data.mean(axis=1)


@dataclass(frozen=True)
class QuerySignal:
    """Unit-norm query vector (raw pixels or features)."""
    values: np.ndarray

    def __post_init__(self):
        values = normalize(self.values)
        object.__setattr__(self, 'values', _frozen(values))

    @property
    def n(self) -> int:
        return int(self.values.size)


RESIDUAL_DOMAINS = ('projected', 'pixel')


@dataclass(frozen=True)
class CoderConfig:
    """
    Parameters of the IR3C coder.

    lam is the coefficient regularization (JSON key "lambda"); tau picks the residual
    quantile that sets the weight demarcation point; zeta is the fixed mu*delta product.
    cg_max_iter=None means 2*m for the dictionary being coded.
    """
    beta: int = 2
    lam: float = 1e-3
    tau: float = 0.8
    zeta: float = 8.0
    delta_w: float = 0.01
    max_outer_iter: int = 50
    max_line_search_halvings: int = 10
    cg_tol: float = 1e-8
    cg_max_iter: Optional[int] = None
    irls_inner_max_iter: int = 100
    irls_inner_tol: float = 1e-4
    epsilon0: float = 1.0
    pixel_drop_threshold: Optional[float] = None
    residual_domain: str = 'projected'

    def __post_init__(self):
        if self.beta not in (1, 2):
            raise ConfigError(f'beta must be 1 or 2, got {self.beta}')
        if not self.lam >= 0:
            raise ConfigError(f'lambda must be non-negative, got {self.lam}')
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f'tau must lie in (0, 1), got {self.tau}')
        for name in ('zeta', 'delta_w', 'cg_tol', 'irls_inner_tol', 'epsilon0'):
            if not getattr(self, name) > 0:
                raise ConfigError(f'{name} must be positive, got {getattr(self, name)}')
        for name in ('max_outer_iter', 'max_line_search_halvings', 'irls_inner_max_iter'):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f'{name} must be a positive integer, got {getattr(self, name)}')
        if self.cg_max_iter is not None and int(self.cg_max_iter) < 1:
            raise ConfigError(f'cg_max_iter must be a positive integer, got {self.cg_max_iter}')
        if self.pixel_drop_threshold is not None and not 0.0 <= self.pixel_drop_threshold < 1.0:
            raise ConfigError(f'pixel_drop_threshold must lie in [0, 1), got {self.pixel_drop_threshold}')
        if self.residual_domain not in RESIDUAL_DOMAINS:
            raise ConfigError(f'residual_domain must be one of {RESIDUAL_DOMAINS}')
        if self.zeta < 8:
            logger.warning('zeta_below_recommended', zeta=self.zeta, recommended=8.0)

    def cg_iterations(self, m: int) -> int:
        return int(self.cg_max_iter) if self.cg_max_iter is not None else 2 * m

    def replace(self, **changes) -> 'CoderConfig':
        return replace(self, **changes)

    @classmethod
    def clean(cls, beta: int = 2, **overrides) -> 'CoderConfig':
        """Preset for queries without occlusion (tau = 0.8)."""
        return cls(beta=beta, tau=0.8, **overrides)

    @classmethod
    def occluded(cls, beta: int = 2, **overrides) -> 'CoderConfig':
        """Preset for occluded or corrupted queries (tau = 0.6)."""
        return cls(beta=beta, tau=0.6, **overrides)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['lambda'] = data.pop('lam')
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> 'CoderConfig':
        values = dict(data)
        if 'lambda' in values:
            values['lam'] = values.pop('lambda')
        unknown = set(values) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f'unknown coder settings: {sorted(unknown)}')
        return cls(**values)


@dataclass(frozen=True)
class WeightState:
    """Diagonal residual weights in [0, 1] with the (mu, delta) that produced them."""
    weights: np.ndarray
    mu: float
    delta: float

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if np.any(weights < 0.0) or np.any(weights > 1.0) or not np.all(np.isfinite(weights)):
            raise DomainError('weights must lie in [0, 1]')
        if not (self.mu > 0 and self.delta > 0):
            raise DomainError(f'mu and delta must be positive, got mu={self.mu}, delta={self.delta}')
        object.__setattr__(self, 'weights', _frozen(weights.copy()))


@dataclass(frozen=True)
class IterationRecord:
    """
    One accepted IR3C iteration.

    cg_failures and inner_converged describe the coding step behind it. ceiling_bound is
    True when a longer step beat the current iterate but not the last recorded objective.
    """
    iteration: int
    objective: float
    step: float
    weight_change: Optional[float]
    dropped_pixels: int
    reconstruction_norm: float
    cg_failures: int = 0
    inner_converged: bool = True
    ceiling_bound: bool = False


@dataclass(frozen=True)
class CodingResult:
    """
    Output of one IR3C run for one query.

    solver_failures counts unconverged CG solves and capped IRLS loops over every coding
    step of the run, including a final step rejected by the line search.
    """
    alpha: np.ndarray
    final_weights: WeightState
    initial_weights: WeightState
    residual: np.ndarray
    reconstruction: np.ndarray
    per_class_residuals: np.ndarray
    predicted_class: int
    sci: float
    trace: List[IterationRecord] = field(default_factory=list)
    stop_reason: str = 'max_outer_iter'
    solver_failures: int = 0

    def __post_init__(self):
        for name in ('alpha', 'residual', 'reconstruction', 'per_class_residuals'):
            object.__setattr__(self, name, _frozen(np.array(getattr(self, name), dtype=np.float64)))

    @property
    def objective_trace(self) -> List[float]:
        return [record.objective for record in self.trace]

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def final_objective(self) -> float:
        return self.trace[-1].objective if self.trace else float('nan')

    def to_json_dict(self, include_weights: bool = False) -> Dict:
        """Plain-JSON view used by the `code` CLI subcommand."""
        data = {
            'predicted_class': int(self.predicted_class),
            'sci': float(self.sci),
            'iterations': self.iterations,
            'stop_reason': self.stop_reason,
            'solver_failures': self.solver_failures,
            'per_class_residuals': [float(v) for v in self.per_class_residuals],
            'objective_trace': [float(v) for v in self.objective_trace],
            'steps': [float(r.step) for r in self.trace],
            'alpha': [float(v) for v in self.alpha],
            'mu': float(self.final_weights.mu),
            'delta': float(self.final_weights.delta),
            'outlier_pixels': int(np.count_nonzero(self.final_weights.weights < 0.5)),
        }
        if include_weights:
            data['weights'] = [float(v) for v in self.final_weights.weights]
        return data
