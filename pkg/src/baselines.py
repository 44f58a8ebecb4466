#!/usr/bin/env python3
"""
Baseline classifiers: unweighted collaborative ridge coding and nearest neighbour.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from classify import PcaModel, class_residuals, predict, sci
from coding_types import ClassPartition, CoderConfig, Dictionary, QuerySignal
from solver import solve_weighted_ridge


@dataclass(frozen=True)
class BaselineResult:
    predicted_class: int
    residuals: np.ndarray
    alpha: np.ndarray
    sci: float


def baseline_ridge(dictionary: Dictionary, query: QuerySignal, config: Optional[CoderConfig] = None,
                   partition: Optional[ClassPartition] = None,
                   pca: Optional[PcaModel] = None) -> BaselineResult:
    """
    Ridge coding with identity weights, classified by unweighted class residuals.

    Uses config.lam and the CG settings of config so that it matches an IR3C run whose
    weights are pinned to one.
    """
    config = config or CoderConfig()
    partition = partition or dictionary.partition
    projection = None if pca is None else pca.basis
    ones = np.ones(dictionary.n)
    alpha = solve_weighted_ridge(dictionary, ones, query, config.lam, tol=config.cg_tol,
                                 max_iter=config.cg_iterations(dictionary.m), projection=projection)
    residuals = class_residuals(alpha, dictionary, query, partition=partition, weights=ones,
                                projection=projection)
    return BaselineResult(predict(residuals), residuals, alpha, sci(alpha, partition))


def baseline_nn(dictionary: Dictionary, query: QuerySignal, partition: Optional[ClassPartition] = None,
                pca: Optional[PcaModel] = None) -> int:
    """Class of the nearest training column in Euclidean distance; ties go to the lower index."""
    partition = partition or dictionary.partition
    atoms = dictionary.data
    y = query.values
    if pca is not None:
        atoms = pca.basis @ (atoms - pca.mean[:, None])
        y = pca.project(y)
    distances = np.linalg.norm(atoms - y[:, None], axis=0)
    return int(partition.labels[int(np.argmin(distances))])
