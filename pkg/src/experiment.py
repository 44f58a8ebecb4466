#!/usr/bin/env python3
"""
Experiment runner: perturb held-out queries, code and classify them with every method,
aggregate recognition rates, sweep SCI thresholds for validation, and write CSV reports.

Random streams: every query draws its perturbation from
np.random.default_rng([seed, stream, level_index, query_id]) with stream 1 for pixel
corruption, 2 for block occlusion and 3 for validation, so results do not depend on
query order or worker count.
"""

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import structlog

from baselines import baseline_nn, baseline_ridge
from classify import PcaModel, fit_pca, run_ir3c_pca
from coding_types import CoderConfig, ConfigError, QuerySignal, RobustCodingError
from dataset import Dataset, LabeledImage, SyntheticSpec, generate_synthetic, load_dataset
from image_io import GrayImage, read_image
from ir3c import run_ir3c
from perturb import corrupt_pixels, default_patch, occlude_block

logger = structlog.get_logger(__name__)

METHODS = ('RRC_L1', 'RRC_L2', 'ridge', 'NN')
PERTURBATIONS = ('none', 'corruption', 'occlusion')
STREAMS = {'none': 0, 'corruption': 1, 'occlusion': 2, 'validation': 3}

METRICS_HEADER = ['experiment', 'method', 'perturbation', 'level', 'rate', 'mean_iters', 'mean_ms']
ROC_HEADER = ['threshold', 'tpr', 'fpr']
QUERY_HEADER = ['experiment', 'method', 'perturbation', 'level', 'query_id', 'role', 'true_class',
                'predicted_class', 'correct', 'sci', 'iterations', 'final_objective', 'status']


@dataclass
class ExperimentConfig:
    """
    Everything one benchmark run needs. Loaded from JSON; CLI flags override file values.

    dataset=None uses the synthetic generator with `synthetic` settings and `seed`.
    coder=None picks the clean preset (tau 0.8) for unperturbed runs and the occluded
    preset (tau 0.6) otherwise.
    """
    seed: Optional[int] = None
    experiment: str = 'rrc'
    dataset: Optional[str] = None
    train_per_class: Optional[int] = None
    test_per_class: Optional[int] = None
    image_size: Optional[List[int]] = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    coder: Optional[CoderConfig] = None
    corruption_levels: List[float] = field(default_factory=lambda: [0.0, 0.2, 0.4, 0.6])
    occlusion_levels: List[float] = field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3])
    patch: Optional[str] = None
    pca_dim: Optional[int] = None
    methods: List[str] = field(default_factory=lambda: list(METHODS))
    validation_perturbation: str = 'none'
    validation_level: float = 0.0
    tau_values: List[float] = field(default_factory=lambda: [0.5, 0.6, 0.7, 0.8])
    roc_points: int = 101
    output_dir: str = 'results'
    workers: int = 1
    timing: bool = False

    def __post_init__(self):
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f'unknown methods {unknown}; choose from {list(METHODS)}')
        for level in list(self.corruption_levels) + [self.validation_level]:
            if not 0.0 <= level <= 1.0:
                raise ConfigError(f'corruption fraction out of range: {level}')
        for level in self.occlusion_levels:
            if not 0.0 <= level < 1.0:
                raise ConfigError(f'occlusion fraction out of range: {level}')
        if self.validation_perturbation not in PERTURBATIONS:
            raise ConfigError(f'validation_perturbation must be one of {PERTURBATIONS}')
        if self.workers < 1:
            raise ConfigError(f'workers must be positive, got {self.workers}')
        if self.roc_points < 2:
            raise ConfigError(f'roc_points must be at least 2, got {self.roc_points}')

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError('a seed is required for benchmark runs')
        return int(self.seed)

    def coder_for(self, perturbation: str, level: float, beta: int) -> CoderConfig:
        if self.coder is not None:
            return self.coder.replace(beta=beta)
        if perturbation == 'none' or level == 0.0:
            return CoderConfig.clean(beta)
        return CoderConfig.occluded(beta)

    @classmethod
    def from_dict(cls, data: Dict) -> 'ExperimentConfig':
        values = dict(data)
        unknown = set(values) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f'unknown experiment settings: {sorted(unknown)}')
        if isinstance(values.get('synthetic'), dict):
            values['synthetic'] = SyntheticSpec.from_dict(values['synthetic'])
        if isinstance(values.get('coder'), dict):
            values['coder'] = CoderConfig.from_dict(values['coder'])
        return cls(**values)

    @classmethod
    def load(cls, path) -> 'ExperimentConfig':
        with open(path, 'r', encoding='utf-8') as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True)
class MetricsRow:
    experiment: str
    method: str
    perturbation: str
    level: float
    rate: float
    mean_iters: float
    mean_ms: float
    counted: int = 0
    failures: int = 0


@dataclass(frozen=True)
class QueryRecord:
    experiment: str
    method: str
    perturbation: str
    level: float
    query_id: int
    role: str
    true_class: int
    predicted_class: Optional[int]
    sci: Optional[float]
    iterations: int
    final_objective: Optional[float]
    elapsed_ms: float
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def correct(self) -> bool:
        return self.ok and self.predicted_class == self.true_class


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    tpr: float
    fpr: float


@dataclass
class ExperimentReport:
    rows: List[MetricsRow] = field(default_factory=list)
    records: List[QueryRecord] = field(default_factory=list)
    roc: Dict[str, List[RocPoint]] = field(default_factory=dict)
    auc: Dict[str, float] = field(default_factory=dict)

    def extend(self, other: 'ExperimentReport') -> None:
        self.rows.extend(other.rows)
        self.records.extend(other.records)
        self.roc.update(other.roc)
        self.auc.update(other.auc)

    def rate(self, method: str, level: float, perturbation: Optional[str] = None) -> float:
        for row in self.rows:
            if row.method == method and abs(row.level - level) < 1e-12 and \
                    (perturbation is None or row.perturbation == perturbation):
                return row.rate
        raise KeyError(f'no metrics row for {method} at level {level}')


def query_rng(seed: int, stream: int, level_index: int, query_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, level_index, query_id])


def load_experiment_data(config: ExperimentConfig) -> Dataset:
    if config.dataset:
        size = tuple(config.image_size) if config.image_size else None
        return load_dataset(config.dataset, train_per_class=config.train_per_class,
                            test_per_class=config.test_per_class, size=size)
    return generate_synthetic(config.synthetic, config.require_seed())


def _patch(config: ExperimentConfig) -> GrayImage:
    return read_image(config.patch) if config.patch else default_patch()


def perturb(image: GrayImage, perturbation: str, level: float, rng: np.random.Generator,
            patch: GrayImage) -> GrayImage:
    if perturbation == 'corruption':
        return corrupt_pixels(image, level, rng)[0]
    if perturbation == 'occlusion':
        return occlude_block(image, level, patch, rng)[0]
    return image


class _Runner:
    """Runs every configured method on one dataset with a shared optional PCA model."""

    def __init__(self, config: ExperimentConfig, data: Dataset):
        self.config = config
        self.data = data
        self.seed = config.require_seed()
        self.pca: Optional[PcaModel] = None
        if config.pca_dim:
            self.pca = fit_pca(data.dictionary, config.pca_dim)
            logger.info('pca_fitted', dimension=config.pca_dim, pixels=data.dictionary.n)
        self.patch = _patch(config)

    def _method(self, method: str, query: QuerySignal, perturbation: str, level: float):
        """Returns (predicted class, sci, iterations, final objective)."""
        dictionary = self.data.dictionary
        if method in ('RRC_L1', 'RRC_L2'):
            coder = self.config.coder_for(perturbation, level, beta=1 if method == 'RRC_L1' else 2)
            if self.pca is not None:
                result = run_ir3c_pca(dictionary, query, self.pca, coder)
            else:
                result = run_ir3c(dictionary, query, coder)
            return result.predicted_class, result.sci, result.iterations, result.final_objective
        if method == 'ridge':
            coder = self.config.coder_for(perturbation, level, beta=2)
            result = baseline_ridge(dictionary, query, coder, pca=self.pca)
            return result.predicted_class, result.sci, 1, None
        return baseline_nn(dictionary, query, pca=self.pca), None, 0, None

    def evaluate(self, item: LabeledImage, query_id: int, role: str, perturbation: str,
                 level: float, level_index: int, stream: int, methods: Sequence[str]) -> List[QueryRecord]:
        experiment = self.config.experiment
        records = []
        try:
            rng = query_rng(self.seed, stream, level_index, query_id)
            image = perturb(item.image, perturbation, level, rng, self.patch)
            query = QuerySignal(image.flatten())
        except RobustCodingError as exc:
            logger.warning('query_failed', query_id=query_id, level=level, source=item.source, error=str(exc))
            return [QueryRecord(experiment, method, perturbation, level, query_id, role, item.label,
                                None, None, 0, None, 0.0, str(exc)) for method in methods]

        for method in methods:
            started = time.perf_counter()
            try:
                predicted, score, iterations, final = self._method(method, query, perturbation, level)
                error = None
            except RobustCodingError as exc:
                logger.warning('query_failed', query_id=query_id, method=method, level=level,
                               source=item.source, error=str(exc))
                predicted, score, iterations, final, error = None, None, 0, None, str(exc)
            elapsed = (time.perf_counter() - started) * 1000.0 if self.config.timing else 0.0
            records.append(QueryRecord(experiment, method, perturbation, level, query_id, role, item.label,
                                       predicted, score, iterations, final, elapsed, error))
        return records

    def evaluate_all(self, items: List[LabeledImage], role: str, perturbation: str, level: float,
                     level_index: int, stream: int, methods: Sequence[str],
                     first_id: int = 0) -> List[QueryRecord]:
        tasks = [(item, first_id + index) for index, item in enumerate(items)]

        def work(task):
            item, query_id = task
            return self.evaluate(item, query_id, role, perturbation, level, level_index, stream, methods)

        if self.config.workers > 1:
            with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                batches = list(pool.map(work, tasks))
        else:
            batches = [work(task) for task in tasks]
        records = [record for batch in batches for record in batch]
        order = {method: rank for rank, method in enumerate(methods)}
        return sorted(records, key=lambda r: (r.query_id, order[r.method]))


def aggregate(records: List[QueryRecord], methods: Sequence[str]) -> List[MetricsRow]:
    """One metrics row per (method, perturbation, level); failures are excluded from the rate."""
    rows = []
    keys = []
    for record in records:
        key = (record.experiment, record.perturbation, record.level)
        if key not in keys:
            keys.append(key)
    for experiment, perturbation, level in keys:
        for method in methods:
            subset = [r for r in records if r.method == method and r.perturbation == perturbation
                      and r.level == level and r.experiment == experiment]
            if not subset:
                continue
            counted = [r for r in subset if r.ok]
            failures = len(subset) - len(counted)
            rate = sum(r.correct for r in counted) / len(counted) if counted else 0.0
            mean_iters = float(np.mean([r.iterations for r in counted])) if counted else 0.0
            mean_ms = float(np.mean([r.elapsed_ms for r in counted])) if counted else 0.0
            rows.append(MetricsRow(experiment, method, perturbation, level, rate, mean_iters, mean_ms,
                                   len(counted), failures))
            if failures:
                logger.warning('queries_excluded', method=method, level=level, failures=failures)
    return rows


def run_benchmark(config: ExperimentConfig, perturbation: str, data: Optional[Dataset] = None) -> ExperimentReport:
    """Recognition rate of every method at every level of one perturbation type."""
    if perturbation not in PERTURBATIONS:
        raise ConfigError(f'unknown perturbation {perturbation}')
    data = data or load_experiment_data(config)
    runner = _Runner(config, data)
    if perturbation == 'corruption':
        levels = list(config.corruption_levels)
    elif perturbation == 'occlusion':
        levels = list(config.occlusion_levels)
    else:
        levels = [0.0]

    records: List[QueryRecord] = []
    for level_index, level in enumerate(levels):
        logger.info('benchmark_level', experiment=config.experiment, perturbation=perturbation,
                    level=level, queries=len(data.queries))
        records.extend(runner.evaluate_all(data.queries, 'customer', perturbation, level, level_index,
                                           STREAMS[perturbation], config.methods))
    return ExperimentReport(rows=aggregate(records, config.methods), records=records)


def roc_sweep(customer_scores: Sequence[float], impostor_scores: Sequence[float],
              points: int = 101) -> List[RocPoint]:
    """
    Accept a query when its SCI >= threshold; sweep thresholds evenly over [0, 1].

    TPR counts accepted customers, FPR accepted impostors; both are non-increasing in
    the threshold.
    """
    customers = np.asarray(customer_scores, dtype=np.float64)
    impostors = np.asarray(impostor_scores, dtype=np.float64)
    curve = []
    for threshold in np.linspace(0.0, 1.0, points):
        tpr = float(np.mean(customers >= threshold)) if customers.size else 0.0
        fpr = float(np.mean(impostors >= threshold)) if impostors.size else 0.0
        curve.append(RocPoint(float(threshold), tpr, fpr))
    return curve


def roc_auc(curve: Sequence[RocPoint]) -> float:
    """Trapezoidal area under the (FPR, TPR) points, closed with (0, 0) and (1, 1)."""
    pairs = sorted({(p.fpr, p.tpr) for p in curve} | {(0.0, 0.0), (1.0, 1.0)})
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pairs, pairs[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return float(area)


def run_validation(config: ExperimentConfig, data: Optional[Dataset] = None) -> ExperimentReport:
    """
    SCI-based rejection of impostors: customers are test queries of enrolled classes,
    impostors are queries of classes absent from the dictionary.
    """
    data = data or load_experiment_data(config)
    if not data.impostors:
        raise ConfigError('validation needs impostor queries (synthetic impostor_classes or '
                          'an "impostors" manifest section)')
    methods = [m for m in config.methods if m != 'NN']
    runner = _Runner(config, data)
    perturbation, level = config.validation_perturbation, config.validation_level
    stream = STREAMS['validation']
    records = runner.evaluate_all(data.queries, 'customer', perturbation, level, 0, stream, methods)
    records += runner.evaluate_all(data.impostors, 'impostor', perturbation, level, 0, stream, methods,
                                   first_id=len(data.queries))

    report = ExperimentReport(records=records)
    customers_only = [r for r in records if r.role == 'customer']
    report.rows = aggregate(customers_only, methods)
    for method in methods:
        scores = {role: [r.sci for r in records if r.method == method and r.role == role and r.ok]
                  for role in ('customer', 'impostor')}
        curve = roc_sweep(scores['customer'], scores['impostor'], config.roc_points)
        report.roc[method] = curve
        report.auc[method] = roc_auc(curve)
        logger.info('roc_computed', method=method, auc=report.auc[method])
    return report


def run_tau_sweep(config: ExperimentConfig, data: Optional[Dataset] = None) -> ExperimentReport:
    """Recognition rate of the RRC methods versus tau over the corruption levels."""
    data = data or load_experiment_data(config)
    methods = [m for m in config.methods if m.startswith('RRC')] or ['RRC_L1']
    report = ExperimentReport()
    base = config.coder or CoderConfig.occluded()
    for tau in config.tau_values:
        swept = ExperimentConfig(**{**config.__dict__, 'coder': base.replace(tau=tau),
                                    'methods': methods, 'experiment': f'{config.experiment}-tau{tau:.2f}'})
        report.extend(run_benchmark(swept, 'corruption', data))
    return report


def run_experiment(config: ExperimentConfig, mode: str = 'corruption') -> ExperimentReport:
    """
    Run one experiment mode: 'none' (plain recognition), 'corruption', 'occlusion',
    'validation' or 'tau'.
    """
    config.require_seed()
    if mode == 'validation':
        return run_validation(config)
    if mode == 'tau':
        return run_tau_sweep(config)
    return run_benchmark(config, mode)


def _fmt(value, spec: str) -> str:
    return '' if value is None else format(value, spec)


def write_report(report: ExperimentReport, output_dir) -> List[Path]:
    """Write metrics.csv, queries.csv and one roc_<method>.csv per validated method."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    written = []

    path = output_dir / 'metrics.csv'
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(METRICS_HEADER)
        for row in report.rows:
            writer.writerow([row.experiment, row.method, row.perturbation, f'{row.level:.2f}',
                             f'{row.rate:.4f}', f'{row.mean_iters:.2f}', f'{row.mean_ms:.3f}'])
    written.append(path)

    path = output_dir / 'queries.csv'
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(QUERY_HEADER)
        for r in report.records:
            writer.writerow([r.experiment, r.method, r.perturbation, f'{r.level:.2f}', r.query_id, r.role,
                             r.true_class, '' if r.predicted_class is None else r.predicted_class,
                             int(r.correct), _fmt(r.sci, '.6f'), r.iterations,
                             _fmt(r.final_objective, '.10g'), 'ok' if r.ok else f'error: {r.error}'])
    written.append(path)

    for method, curve in report.roc.items():
        path = output_dir / f'roc_{method}.csv'
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(ROC_HEADER)
            for point in curve:
                writer.writerow([f'{point.threshold:.2f}', f'{point.tpr:.4f}', f'{point.fpr:.4f}'])
        written.append(path)
    return written
