import os

import numpy as np
import pytest

from mdm_scoring import ScoreTable, admissible_keys
from score_cache import read_score_cache

FIXTURES = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'fixtures')


def fixture_dir(name):
    return os.path.join(FIXTURES, name)


def load_fixture_tables(name):
    directory = fixture_dir(name)
    return [read_score_cache(os.path.join(directory, f)) for f in sorted(os.listdir(directory))
            if f.endswith('.scores.jsonl')]


def two_variable_table(subject, node1_with_parent, node2_with_parent):
    """P=2 table with zero scores for empty parent sets"""
    return ScoreTable.from_entries(subject, 2, 1, {
        (1, ()): 0.0, (1, (2,)): node1_with_parent,
        (2, ()): 0.0, (2, (1,)): node2_with_parent,
    })


def random_table(rng, subject, p, d_max, low=-5.0, high=5.0):
    entries = {key: float(rng.uniform(low, high)) for key in admissible_keys(p, d_max)}
    return ScoreTable.from_entries(subject, p, d_max, entries)


@pytest.fixture
def opposed_pair():
    return load_fixture_tables('opposed_pair')


@pytest.fixture
def network_split():
    return load_fixture_tables('network_split')


@pytest.fixture
def rng():
    return np.random.default_rng(42)
