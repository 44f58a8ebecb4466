#!/usr/bin/env python3
"""Tests for the benchmark runner, ROC sweep and CSV reports."""
import csv
import json

import numpy as np
import pytest

from coding_types import ConfigError
from dataset import Dataset, LabeledImage, generate_synthetic, load_dataset, load_manifest, write_synthetic
from experiment import (METRICS_HEADER, ExperimentConfig, RocPoint, aggregate, query_rng, roc_auc, roc_sweep,
                        run_benchmark, run_experiment, run_tau_sweep, run_validation, write_report)
from image_io import GrayImage


def _read_csv(path):
    with open(path, newline='', encoding='utf-8') as f:
        return list(csv.reader(f))


def _config(tiny_spec, **changes):
    values = dict(seed=21, synthetic=tiny_spec, corruption_levels=[0.0, 0.3], occlusion_levels=[0.2])
    values.update(changes)
    return ExperimentConfig(**values)


def test_config_requires_seed_and_valid_values(tiny_spec):
    with pytest.raises(ConfigError):
        ExperimentConfig().require_seed()
    with pytest.raises(ConfigError):
        ExperimentConfig(methods=['SRC'])
    with pytest.raises(ConfigError):
        ExperimentConfig(corruption_levels=[1.2])
    with pytest.raises(ConfigError):
        ExperimentConfig(occlusion_levels=[1.0])
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({'seed': 1, 'colour': True})


def test_config_loads_json_with_nested_sections(tmp_path):
    path = tmp_path / 'experiment.json'
    path.write_text(json.dumps({'seed': 3, 'coder': {'lambda': 0.01, 'tau': 0.7},
                                'synthetic': {'n_classes': 4}, 'methods': ['RRC_L2', 'NN']}))
    config = ExperimentConfig.load(path)
    assert config.coder.lam == 0.01
    assert config.synthetic.n_classes == 4
    assert config.coder_for('corruption', 0.4, beta=1).beta == 1
    assert config.coder_for('corruption', 0.4, beta=1).tau == 0.7


def test_coder_presets_follow_perturbation():
    config = ExperimentConfig(seed=1)
    assert config.coder_for('none', 0.0, beta=2).tau == 0.8
    assert config.coder_for('occlusion', 0.3, beta=1).tau == 0.6


def test_query_streams_are_independent_of_order():
    a = query_rng(5, 1, 0, 3).integers(0, 1000, 5)
    query_rng(5, 1, 0, 2).integers(0, 1000, 5)
    assert np.array_equal(a, query_rng(5, 1, 0, 3).integers(0, 1000, 5))
    assert not np.array_equal(a, query_rng(5, 2, 0, 3).integers(0, 1000, 5))


def test_roc_sweep_is_monotone():
    rng = np.random.default_rng(0)
    curve = roc_sweep(rng.uniform(0.3, 1.0, 40), rng.uniform(0.0, 0.6, 40))
    assert len(curve) == 101
    assert curve[0].threshold == 0.0 and curve[-1].threshold == 1.0
    assert curve[0].tpr == 1.0 and curve[0].fpr == 1.0
    for a, b in zip(curve, curve[1:]):
        assert b.tpr <= a.tpr and b.fpr <= a.fpr


def test_roc_auc():
    assert roc_auc(roc_sweep([0.9, 0.8], [0.1, 0.2])) == 1.0
    assert np.isclose(roc_auc([RocPoint(0.5, 0.5, 0.5)]), 0.5)
    assert roc_auc(roc_sweep([0.1], [0.9])) == 0.0


def test_benchmark_rows_and_rates(tiny_spec):
    config = _config(tiny_spec)
    report = run_benchmark(config, 'corruption')
    assert len(report.rows) == 2 * 4
    for row in report.rows:
        assert 0.0 <= row.rate <= 1.0
        assert row.counted + row.failures == 6
        assert row.mean_ms == 0.0
    assert [r.query_id for r in report.records[:4]] == [0, 0, 0, 0]


def test_zero_perturbation_on_training_images_is_perfect(tmp_path, tiny_spec):
    write_synthetic(tiny_spec, 8, tmp_path)
    manifest = load_manifest(tmp_path)
    data = load_dataset(tmp_path, manifest={'train': manifest['train'], 'test': manifest['train']})
    report = run_benchmark(_config(tiny_spec), 'none', data)
    assert {row.method for row in report.rows} == {'RRC_L1', 'RRC_L2', 'ridge', 'NN'}
    assert all(row.rate == 1.0 for row in report.rows)


def test_failed_queries_are_recorded_and_excluded(tiny_spec):
    data = generate_synthetic(tiny_spec, seed=21)
    black = LabeledImage(GrayImage(np.zeros((tiny_spec.height, tiny_spec.width), dtype=np.uint8)), 0, 'black.pgm')
    data = Dataset(data.dictionary, data.queries + [black], data.impostors, data.class_names)
    report = run_benchmark(_config(tiny_spec, corruption_levels=[0.0], methods=['RRC_L2', 'NN']), 'corruption', data)
    failed = [r for r in report.records if not r.ok]
    assert len(failed) == 2 and all(r.error for r in failed)
    for row in report.rows:
        assert row.failures == 1 and row.counted == 6
    assert all(r.sci is None for r in failed)


def test_same_seed_gives_identical_csvs(tmp_path, tiny_spec):
    outputs = []
    for run, workers in enumerate((1, 1, 3)):
        config = _config(tiny_spec, workers=workers)
        report = run_benchmark(config, 'corruption')
        report.extend(run_benchmark(config, 'occlusion'))
        paths = write_report(report, tmp_path / str(run))
        outputs.append([path.read_bytes() for path in paths])
    assert outputs[0] == outputs[1] == outputs[2]
    assert _read_csv(tmp_path / '0' / 'metrics.csv')[0] == METRICS_HEADER


def test_validation_writes_roc_per_method(tmp_path, tiny_spec):
    report = run_validation(_config(tiny_spec))
    assert set(report.roc) == {'RRC_L1', 'RRC_L2', 'ridge'}
    paths = write_report(report, tmp_path)
    rows = _read_csv(tmp_path / 'roc_RRC_L2.csv')
    assert rows[0] == ['threshold', 'tpr', 'fpr']
    assert len(rows) == 102
    assert tmp_path / 'roc_ridge.csv' in paths
    for auc in report.auc.values():
        assert 0.0 <= auc <= 1.0
    roles = {r.role for r in report.records}
    assert roles == {'customer', 'impostor'}


def test_validation_needs_impostors(tiny_spec):
    spec = tiny_spec.__class__(**{**tiny_spec.__dict__, 'impostor_classes': 0})
    with pytest.raises(ConfigError):
        run_validation(_config(spec))


def test_tau_sweep_labels_experiments(tiny_spec):
    report = run_tau_sweep(_config(tiny_spec, tau_values=[0.5, 0.8], methods=['RRC_L1', 'ridge']))
    assert {row.experiment for row in report.rows} == {'rrc-tau0.50', 'rrc-tau0.80'}
    assert {row.method for row in report.rows} == {'RRC_L1'}


def test_run_experiment_dispatches_modes(tiny_spec):
    assert run_experiment(_config(tiny_spec), 'occlusion').rows[0].perturbation == 'occlusion'
    with pytest.raises(ConfigError):
        run_experiment(_config(tiny_spec, seed=None), 'none')


def test_aggregate_skips_absent_methods(tiny_spec):
    report = run_benchmark(_config(tiny_spec, corruption_levels=[0.0], methods=['NN']), 'corruption')
    assert [row.method for row in aggregate(report.records, ['RRC_L1', 'NN'])] == ['NN']


@pytest.mark.slow
def test_rrc_robust_to_heavy_corruption(synthetic_suite):
    config = ExperimentConfig(seed=7, corruption_levels=[0.0, 0.4, 0.6])
    report = run_benchmark(config, 'corruption', synthetic_suite)
    ridge = report.rate('ridge', 0.6)
    for method in ('RRC_L1', 'RRC_L2'):
        assert report.rate(method, 0.6) >= ridge + 0.20
        assert report.rate(method, 0.0) - report.rate(method, 0.4) < 0.05


@pytest.mark.slow
def test_rrc_robust_to_block_occlusion(synthetic_suite):
    config = ExperimentConfig(seed=7, occlusion_levels=[0.3])
    report = run_benchmark(config, 'occlusion', synthetic_suite)
    for method in ('RRC_L1', 'RRC_L2'):
        rate = report.rate(method, 0.3)
        assert rate >= 0.9
        assert rate > report.rate('ridge', 0.3)
        assert rate > report.rate('NN', 0.3)


@pytest.mark.slow
def test_rrc_roc_area_at_least_ridge(synthetic_suite):
    config = ExperimentConfig(seed=7, validation_perturbation='corruption', validation_level=0.3)
    report = run_validation(config, synthetic_suite)
    assert report.auc['RRC_L2'] >= report.auc['ridge']
    for curve in report.roc.values():
        for a, b in zip(curve, curve[1:]):
            assert b.tpr <= a.tpr and b.fpr <= a.fpr
