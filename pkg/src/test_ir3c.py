#!/usr/bin/env python3
"""Tests for the IR3C outer loop: line search, stopping rules and outlier separation."""
import numpy as np
import pytest
from structlog.testing import capture_logs

from coding_types import CoderConfig, QuerySignal
from conftest import planted_query, random_dictionary
from ir3c import (STOP_CONVERGED, STOP_FIXED_POINT, STOP_MAX_ITER, check_convergence, init_alpha,
                  line_search, objective, run_ir3c)
from perturb import corrupt_pixels
from weights import WeightParams


def _corrupted(suite, index, fraction, seed):
    item = suite.queries[index]
    image, mask = corrupt_pixels(item.image, fraction, np.random.default_rng([seed, index]))
    return QuerySignal(image.flatten()), mask.ravel(), item.label


def _strictly_decreasing(trace):
    return all(b < a for a, b in zip(trace, trace[1:]))


def test_init_alpha_is_uniform():
    assert np.allclose(init_alpha(4), 0.25)
    with pytest.raises(ValueError):
        init_alpha(0)


def test_init_alpha_reconstructs_column_mean(small_dictionary):
    D = small_dictionary.data
    assert np.allclose(D @ init_alpha(small_dictionary.m), small_dictionary.column_mean(), rtol=0, atol=1e-15)


def test_check_convergence_uses_relative_change():
    w = np.ones(100)
    assert check_convergence(w, w * 1.005, 0.01)
    assert not check_convergence(w, w * 1.02, 0.01)


def test_line_search_takes_full_step_without_previous_iterate():
    D = np.eye(2)
    params = WeightParams(mu=8.0, delta=1.0)
    result = line_search(None, np.array([0.3, 0.1]), D, np.array([0.3, 0.1]), params, CoderConfig())
    assert result.nu == 1.0 and not result.fixed_point


def test_line_search_halves_until_objective_drops():
    D = np.eye(2)
    y = np.array([1.0, 0.0])
    params = WeightParams(mu=8.0, delta=1.0)
    config = CoderConfig(lam=0.0)
    # alpha* overshoots past y, so the full step is no better than staying put
    result = line_search(np.zeros(2), np.array([2.0, 0.0]), D, y, params, config)
    assert result.nu == 0.5
    assert result.objective < objective(np.zeros(2), D, y, params, config)


def test_line_search_reports_fixed_point():
    D = np.eye(2)
    y = np.array([1.0, 0.0])
    params = WeightParams(mu=8.0, delta=1.0)
    alpha = np.array([1.0, 0.0])
    assert line_search(alpha, alpha, D, y, params, CoderConfig()).fixed_point
    worse = line_search(alpha, np.array([3.0, 1.0]), D, y, params, CoderConfig(lam=0.0))
    assert worse.fixed_point and worse.nu == 0.0


def test_line_search_respects_ceiling():
    D = np.eye(2)
    y = np.array([1.0, 0.0])
    params = WeightParams(mu=8.0, delta=1.0)
    config = CoderConfig(lam=0.0)
    start = np.zeros(2)
    result = line_search(start, y, D, y, params, config, ceiling=-1.0)
    assert result.fixed_point


def test_planted_query_is_classified(small_dictionary, rng):
    for beta in (1, 2):
        result = run_ir3c(small_dictionary, planted_query(small_dictionary, 3, rng, noise=0.01),
                          CoderConfig.clean(beta))
        assert result.predicted_class == 3
        assert result.per_class_residuals.argmin() == 3
        assert 0.0 <= result.sci <= 1.0
        assert result.stop_reason in (STOP_CONVERGED, STOP_FIXED_POINT, STOP_MAX_ITER)


def test_result_carries_trace_and_weights(small_dictionary, rng):
    query = planted_query(small_dictionary, 0, rng)
    result = run_ir3c(small_dictionary, query, CoderConfig())
    assert result.iterations == len(result.trace) >= 1
    assert result.trace[0].step == 1.0
    assert result.trace[0].weight_change is None
    assert result.final_weights.weights.shape == (small_dictionary.n,)
    assert result.initial_weights.weights.shape == (small_dictionary.n,)
    assert np.allclose(result.residual + result.reconstruction, query.values)
    assert result.final_objective == result.objective_trace[-1]


def test_iteration_cap_recomputes_final_weights(small_dictionary, rng):
    query = planted_query(small_dictionary, 1, rng, noise=0.05)
    result = run_ir3c(small_dictionary, query, CoderConfig(max_outer_iter=1))
    assert result.stop_reason == STOP_MAX_ITER
    assert result.iterations == 1
    assert not np.array_equal(result.final_weights.weights, result.initial_weights.weights)


def test_pinned_weights_converge_after_one_step(small_dictionary, rng):
    query = planted_query(small_dictionary, 2, rng)
    result = run_ir3c(small_dictionary, query, CoderConfig(), fixed_weights=np.ones(small_dictionary.n))
    assert result.iterations == 1
    assert result.stop_reason == STOP_CONVERGED
    assert np.all(result.final_weights.weights == 1.0)


def test_pixel_drop_excludes_low_weight_pixels(synthetic_suite):
    query, mask, label = _corrupted(synthetic_suite, 0, 0.5, seed=3)
    config = CoderConfig.occluded(pixel_drop_threshold=0.05)
    result = run_ir3c(synthetic_suite.dictionary, query, config)
    assert any(record.dropped_pixels > 0 for record in result.trace)
    assert result.predicted_class == label


@pytest.mark.parametrize('fraction', [0.0, 0.4])
def test_objective_trace_strictly_decreases(synthetic_suite, fraction):
    for index in range(0, len(synthetic_suite.queries), 5):
        query, _, _ = _corrupted(synthetic_suite, index, fraction, seed=17)
        for beta in (1, 2):
            config = CoderConfig.clean(beta) if fraction == 0.0 else CoderConfig.occluded(beta)
            result = run_ir3c(synthetic_suite.dictionary, query, config)
            assert result.iterations <= 50
            assert _strictly_decreasing(result.objective_trace)


@pytest.mark.slow
def test_convergence_properties_on_hundred_queries(synthetic_suite):
    for trial in range(100):
        index = trial % len(synthetic_suite.queries)
        fraction = 0.0 if trial % 2 == 0 else 0.4
        query, _, _ = _corrupted(synthetic_suite, index, fraction, seed=trial)
        config = CoderConfig.clean(2) if fraction == 0.0 else CoderConfig.occluded(2)
        result = run_ir3c(synthetic_suite.dictionary, query, config)
        assert result.iterations <= 50
        assert _strictly_decreasing(result.objective_trace)
        if fraction == 0.0:
            assert result.iterations <= 5, f'clean query {index} took {result.iterations} iterations'


@pytest.fixture(scope='module')
def clean_runs(synthetic_suite):
    runs = []
    for item in synthetic_suite.queries:
        query = QuerySignal(item.image.flatten())
        for beta in (1, 2):
            runs.append((beta, item, run_ir3c(synthetic_suite.dictionary, query, CoderConfig.clean(beta))))
    return runs


@pytest.mark.slow
def test_clean_queries_converge_within_five_iterations(clean_runs):
    for beta, item, result in clean_runs:
        assert result.stop_reason == STOP_CONVERGED, (beta, item.source, result.stop_reason)
        assert result.iterations <= 5, (beta, item.source, result.iterations)


@pytest.mark.slow
def test_trace_ceiling_never_binds_on_clean_queries(clean_runs):
    for beta, item, result in clean_runs:
        assert result.stop_reason != STOP_FIXED_POINT, (beta, item.source)
        assert not any(record.ceiling_bound for record in result.trace), (beta, item.source)


@pytest.mark.slow
def test_outlier_pixels_get_low_weights(synthetic_suite):
    separated = 0
    for trial in range(200):
        index = trial % len(synthetic_suite.queries)
        query, mask, _ = _corrupted(synthetic_suite, index, 0.6, seed=1000 + trial)
        result = run_ir3c(synthetic_suite.dictionary, query, CoderConfig.occluded(2))
        weights = result.final_weights.weights
        if np.median(weights[mask]) < 0.5 and np.median(weights[~mask]) > 0.5:
            separated += 1
    assert separated >= 190


def test_line_search_reports_when_only_the_ceiling_rejects():
    D = np.eye(2)
    y = np.array([1.0, 0.0])
    params = WeightParams(mu=8.0, delta=1.0)
    config = CoderConfig(lam=0.0)
    start = np.zeros(2)
    overshoot = 1.5 * y
    full = objective(overshoot, D, y, params, config)
    half = objective(0.5 * overshoot, D, y, params, config)
    assert half < full < objective(start, D, y, params, config)
    bound = line_search(start, overshoot, D, y, params, config, ceiling=0.5 * (full + half))
    assert bound.ceiling_bound and bound.nu == 0.5 and not bound.fixed_point
    free = line_search(start, overshoot, D, y, params, config, ceiling=full + 1.0)
    assert not free.ceiling_bound and free.nu == 1.0
    stuck = line_search(start, overshoot, D, y, params, config, ceiling=-1.0)
    assert stuck.fixed_point and stuck.ceiling_bound


def test_planted_atom_is_reproduced():
    rng = np.random.default_rng(404)
    dictionary = random_dictionary(rng, 400, 4, 5)
    config = CoderConfig(beta=2, lam=1e-3, tau=0.2)
    for j in (0, 7, 13, 19):
        result = run_ir3c(dictionary, QuerySignal(dictionary.data[:, j]), config)
        label = dictionary.partition.labels[j]
        assert np.linalg.norm(result.residual) < 1e-2
        assert result.predicted_class == label
        own = np.abs(result.alpha[dictionary.partition.indices(label)]).sum()
        assert own >= 0.9 * np.abs(result.alpha).sum()


def test_zero_drop_threshold_matches_no_dropping(synthetic_suite):
    query, _, _ = _corrupted(synthetic_suite, 4, 0.3, seed=8)
    for beta in (1, 2):
        plain = run_ir3c(synthetic_suite.dictionary, query, CoderConfig.occluded(beta))
        zero = run_ir3c(synthetic_suite.dictionary, query, CoderConfig.occluded(beta, pixel_drop_threshold=0.0))
        assert np.array_equal(plain.alpha, zero.alpha)
        assert plain.objective_trace == zero.objective_trace
        assert all(record.dropped_pixels == 0 for record in zero.trace)


def test_repeated_runs_are_bitwise_identical(synthetic_suite):
    query, _, _ = _corrupted(synthetic_suite, 9, 0.4, seed=12)
    for beta in (1, 2):
        first = run_ir3c(synthetic_suite.dictionary, query, CoderConfig.occluded(beta))
        second = run_ir3c(synthetic_suite.dictionary, query, CoderConfig.occluded(beta))
        assert first.objective_trace == second.objective_trace
        assert np.array_equal(first.alpha, second.alpha)
        assert np.array_equal(first.final_weights.weights, second.final_weights.weights)


def test_unconverged_solves_are_counted(small_dictionary, rng):
    query = planted_query(small_dictionary, 1, rng, noise=0.05)
    for beta in (1, 2):
        config = CoderConfig(beta=beta, cg_tol=1e-14, cg_max_iter=1, irls_inner_max_iter=2, max_outer_iter=3)
        with capture_logs() as logs:
            result = run_ir3c(small_dictionary, query, config)
        assert result.solver_failures >= sum(record.cg_failures for record in result.trace) > 0
        assert result.to_json_dict()['solver_failures'] == result.solver_failures
        assert any(entry['event'] == 'cg_not_converged' for entry in logs)
