import itertools
import math

import numpy as np
import pytest

from dag_core import (Dag, distance, enumerate_dags, find_cycle, is_acyclic, mask_of, members,
                      popcount)
from errors import CapacityError, InputError


def labeled_dag_count(p):
    """Robinson's recurrence for labeled DAGs"""
    a = [1]
    for n in range(1, p + 1):
        a.append(sum((-1) ** (k + 1) * math.comb(n, k) * 2 ** (k * (n - k)) * a[n - k]
                     for k in range(1, n + 1)))
    return a[p]


class TestBitmasks:

    def test_mask_roundtrip(self):
        assert mask_of([1, 3]) == 0b101
        assert members(0b101) == [1, 3]
        assert popcount(0b1011) == 3

    def test_empty_mask(self):
        assert members(0) == []
        assert mask_of([]) == 0


class TestAcyclicity:

    def test_empty_graph(self):
        assert is_acyclic([[], [], []])

    def test_two_cycle(self):
        assert not is_acyclic([[2], [1]])

    def test_chain(self):
        assert is_acyclic([[], [1], [2]])

    def test_bitmask_input(self):
        assert is_acyclic([0, 0b01, 0b10])
        assert not is_acyclic([0b100, 0b001, 0b010])

    def test_bad_index(self):
        with pytest.raises(InputError):
            is_acyclic([[4], [], []])
        with pytest.raises(InputError):
            is_acyclic([[1], []])

    def test_find_cycle_vertices(self):
        assert find_cycle(3, [0b100, 0b001, 0b010]) == [1, 2, 3]
        assert find_cycle(3, [0, 0b01, 0b10]) is None

    def test_dag_rejects_cycle(self):
        with pytest.raises(InputError):
            Dag(2, ((2,), (1,)))


class TestDag:

    def test_edges_sorted_by_child(self):
        g = Dag.from_edges(3, [(2, 3), (1, 3), (1, 2)])
        assert g.edges() == [(1, 2), (1, 3), (2, 3)]
        assert g.n_edges == 3
        assert g.max_in_degree() == 2

    def test_adjacency_orientation(self):
        g = Dag.from_edges(2, [(1, 2)])
        np.testing.assert_array_equal(g.adjacency(), [[0, 1], [0, 0]])

    def test_json_roundtrip(self):
        g = Dag.from_edges(4, [(1, 2), (3, 2), (2, 4)])
        data = g.to_json()
        assert data == {"p": 4, "parents": [[], [1, 3], [], [2]]}
        assert Dag.from_json(data) == g

    def test_in_degree_check(self):
        g = Dag.from_edges(3, [(1, 3), (2, 3)])
        g.check_in_degree(2)
        with pytest.raises(InputError):
            g.check_in_degree(1)

    def test_dot_uses_labels(self):
        text = Dag.from_edges(2, [(1, 2)]).to_dot(["V1", "PCC"], name="s1")
        assert 'digraph "s1"' in text
        assert '2 [label="PCC"]' in text
        assert '1 -> 2;' in text

    def test_str(self):
        assert str(Dag.empty(2)) == "{}"
        assert str(Dag.from_edges(2, [(2, 1)])) == "2->1"


class TestDistance:

    def test_identity(self):
        g = Dag.from_edges(3, [(1, 2)])
        report = distance(g, g)
        assert (report.shd, report.xor_count) == (0, 0)

    def test_single_edge(self):
        report = distance(Dag.from_edges(2, [(1, 2)]), Dag.empty(2))
        assert (report.shd, report.xor_count) == (1, 1)

    def test_reversal(self):
        report = distance(Dag.from_edges(2, [(1, 2)]), Dag.from_edges(2, [(2, 1)]))
        assert (report.shd, report.xor_count) == (1, 2)

    def test_dimension_mismatch(self):
        with pytest.raises(InputError):
            distance(Dag.empty(2), Dag.empty(3))

    def test_symmetry_and_triangle_inequality(self):
        dags = list(enumerate_dags(3))
        for a, b in itertools.product(dags, repeat=2):
            assert distance(a, b) == distance(b, a)
            assert distance(a, b).xor_count >= distance(a, b).shd
            assert (distance(a, b).xor_count == 0) == (a == b)
        rng = np.random.default_rng(42)
        for _ in range(300):
            a, b, c = (dags[i] for i in rng.integers(len(dags), size=3))
            assert distance(a, c).xor_count <= distance(a, b).xor_count + distance(b, c).xor_count


class TestEnumeration:

    @pytest.mark.parametrize("p, expected", [(1, 1), (2, 3), (3, 25), (4, 543)])
    def test_counts(self, p, expected):
        assert sum(1 for _ in enumerate_dags(p)) == expected == labeled_dag_count(p)

    def test_cap_zero(self):
        assert list(enumerate_dags(3, d_max=0)) == [Dag.empty(3)]

    def test_cap_filters(self):
        dags = list(enumerate_dags(3, d_max=1))
        assert all(g.max_in_degree() <= 1 for g in dags)
        assert len(dags) == 25 - 9

    def test_all_acyclic_and_distinct(self):
        dags = list(enumerate_dags(4))
        assert all(is_acyclic(g.parents) for g in dags)
        assert len(set(dags)) == len(dags)

    def test_lexicographic_order(self):
        parents = [g.parents for g in enumerate_dags(3)]
        assert parents == sorted(parents)

    def test_refuses_large(self):
        with pytest.raises(CapacityError):
            next(enumerate_dags(6))
