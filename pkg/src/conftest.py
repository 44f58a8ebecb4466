"""Shared fixtures: seeded random dictionaries and the small synthetic face suite."""
import sys
from pathlib import Path

import numpy as np
import pytest
import structlog

sys.path.insert(0, str(Path(__file__).parent))

from coding_types import Dictionary, QuerySignal
from dataset import SyntheticSpec, generate_synthetic


def random_dictionary(rng, n, per_class, k):
    labels = np.repeat(np.arange(k), per_class)
    return Dictionary.from_columns(rng.standard_normal((n, per_class * k)), labels)


def planted_query(dictionary, class_id, rng, noise=0.0):
    """Sum of the atoms of one class plus optional Gaussian noise."""
    atoms = dictionary.partition.indices(class_id)
    y = dictionary.data[:, atoms] @ rng.uniform(0.5, 1.5, atoms.size)
    if noise:
        y = y + noise * rng.standard_normal(y.size)
    return QuerySignal(y)


@pytest.fixture(autouse=True)
def _reset_structlog():
    """rrc_cli.main binds structlog to the current sys.stderr, which pytest closes after the test."""
    yield
    structlog.reset_defaults()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_dictionary(rng):
    return random_dictionary(rng, 40, 4, 5)


@pytest.fixture(scope='session')
def synthetic_suite():
    return generate_synthetic(SyntheticSpec(), seed=11)


@pytest.fixture(scope='session')
def tiny_spec():
    return SyntheticSpec(n_classes=3, train_per_class=3, test_per_class=2, impostor_classes=2,
                         height=8, width=7, smoothness=1.5)
