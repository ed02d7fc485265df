import math

import numpy as np
import pytest

from conftest import random_table
from dag_core import Dag, enumerate_dags
from errors import InputError
from joint_prior import (Hyperparameters, SubjectNetwork, covariate_lambda_table, joint_log_posterior,
                         lambda_eta_star, load_hyperparameters, log_multiplicity, log_network_prior,
                         log_regularity, partition_string, replicate_network)
from mdm_scoring import ScoreTable

FORWARD = Dag.from_edges(2, [(1, 2)])
BACKWARD = Dag.from_edges(2, [(2, 1)])
EMPTY2 = Dag.empty(2)


class TestSubjectNetwork:

    def test_canonical_pairs(self):
        a = SubjectNetwork(3, frozenset({(2, 1), (3, 2)}))
        assert a.sorted_edges() == [(1, 2), (2, 3)]
        assert (2, 1) in a
        assert len(a) == 2

    def test_rejects_self_loop_and_range(self):
        with pytest.raises(InputError):
            SubjectNetwork(3, frozenset({(2, 2)}))
        with pytest.raises(InputError):
            SubjectNetwork(3, frozenset({(1, 4)}))

    def test_complete(self):
        a = SubjectNetwork.complete(4)
        assert len(a) == 6 and a.is_complete()
        assert not SubjectNetwork.empty(4).is_complete()

    def test_components(self):
        a = SubjectNetwork(5, frozenset({(1, 3), (4, 5)}))
        assert a.components() == [(1, 3), (2,), (4, 5)]
        assert partition_string(a.components()) == "{{1,3},{2},{4,5}}"

    def test_json_roundtrip(self):
        a = SubjectNetwork(3, frozenset({(1, 3)}))
        assert a.to_json() == {"k_total": 3, "edges": [[1, 3]]}
        assert SubjectNetwork.from_json(a.to_json()) == a

    def test_replicates(self):
        a = replicate_network([[1, 2], [3, 4, 5]])
        assert a.k_total == 5
        assert a.sorted_edges() == [(1, 2), (3, 4), (3, 5), (4, 5)]

    def test_dot(self):
        text = SubjectNetwork(2, frozenset({(1, 2)})).to_dot(["s1", "s2"])
        assert 'graph "A"' in text and '1 -- 2;' in text and 'label="s2"' in text


class TestHyperparameters:

    def test_scalar_expands(self):
        hp = Hyperparameters(lambda_=2, eta=1, d_max=2)
        mat = hp.lambda_matrix(1, 2, 3)
        np.testing.assert_array_equal(mat, [[0, 2, 2], [2, 0, 2], [2, 2, 0]])
        assert hp.eta_for(2, 1) == 1.0

    def test_tables(self):
        hp = Hyperparameters(lambda_={"1-2": [[0, 1], [5, 0]]}, eta={"2-1": 5.0})
        assert hp.lambda_matrix(2, 1, 2)[1, 0] == 5.0
        assert hp.eta_for(1, 2) == 5.0
        with pytest.raises(InputError):
            hp.eta_for(1, 3)
        with pytest.raises(InputError):
            hp.validate(3, 2)

    def test_rejects_negative_lambda(self):
        with pytest.raises(InputError):
            Hyperparameters(lambda_=-1.0)
        with pytest.raises(InputError):
            Hyperparameters(lambda_={"1-2": -0.5})

    def test_negative_eta_allowed(self):
        assert Hyperparameters(eta=-2.0).eta == -2.0

    def test_file_roundtrip(self, tmp_path):
        path = tmp_path / "hyper.json"
        path.write_text('{"lambda": {"1-2": 3}, "eta": 0.5, "d_max": 2}')
        hp = load_hyperparameters(str(path))
        assert hp.to_dict() == {"lambda": {"1-2": 3.0}, "eta": 0.5, "d_max": 2}
        assert Hyperparameters.from_dict(hp.to_dict()) == hp

    def test_unknown_field(self):
        with pytest.raises(InputError):
            Hyperparameters.from_dict({"lam": 1})

    def test_covariate_table(self):
        table = covariate_lambda_table([20, 22, 30], 2.0, 2)
        assert table[(1, 2)][0, 1] == pytest.approx(0.25)
        hp = Hyperparameters(lambda_=table)
        assert hp.lambda_matrix(1, 3, 2)[1, 0] == pytest.approx(2.0 ** -10)
        assert hp.lambda_matrix(1, 3, 2)[0, 0] == 0.0


class TestRegularity:

    def test_identical(self):
        assert log_regularity(FORWARD, FORWARD, 7.0) == 0.0

    def test_three_mismatches(self):
        g1 = Dag.from_edges(3, [(1, 2), (1, 3)])
        g2 = Dag.from_edges(3, [(2, 3)])
        assert log_regularity(g1, g2, 4.0) == -12.0

    def test_reversal_counts_twice(self):
        assert log_regularity(FORWARD, BACKWARD, 1.5) == -3.0

    def test_matrix_weights(self):
        lam = np.array([[0.0, 1.0], [5.0, 0.0]])
        assert log_regularity(FORWARD, EMPTY2, lam) == -1.0
        assert log_regularity(BACKWARD, EMPTY2, lam) == -5.0

    def test_symmetric(self):
        dags = list(enumerate_dags(3))
        for g1, g2 in zip(dags, reversed(dags)):
            assert log_regularity(g1, g2, 1.3) == log_regularity(g2, g1, 1.3)

    def test_dimension_mismatch(self):
        with pytest.raises(InputError):
            log_regularity(FORWARD, Dag.empty(3), 1.0)


class TestMultiplicity:

    def test_empty(self):
        assert log_multiplicity(Dag.empty(4), 4, 3) == 0.0

    def test_three_parents_of_ten(self):
        g = Dag.from_edges(10, [(1, 4), (2, 4), (3, 4)])
        assert log_multiplicity(g, 10, 3) == pytest.approx(-math.log(120))

    def test_over_cap(self):
        g = Dag.from_edges(4, [(1, 4), (2, 4), (3, 4)])
        assert log_multiplicity(g, 4, 2) == -math.inf

    def test_grows_toward_half(self):
        values = [log_multiplicity(Dag.from_edges(9, [(j, 9) for j in range(1, d + 1)]), 9, 8)
                  for d in range(0, 5)]
        assert all(b < a for a, b in zip(values, values[1:]))


class TestNetworkPrior:

    def test_values(self):
        assert log_network_prior(SubjectNetwork.empty(4), 3.0) == 0.0
        assert log_network_prior(SubjectNetwork.complete(4), 0.5) == 3.0
        a = SubjectNetwork(3, frozenset({(1, 2)}))
        assert log_network_prior(a, {(1, 2): 5.0}) == 5.0
        assert log_network_prior(a, Hyperparameters(eta={"1-2": 5.0, "1-3": 1.0, "2-3": 1.0})) == 5.0


class TestJointPosterior:

    def test_single_subject(self, opposed_pair):
        value = joint_log_posterior(opposed_pair[:1], [FORWARD], SubjectNetwork.empty(1), Hyperparameters())
        assert value == 1.0

    @pytest.mark.parametrize("lam", [0.0, 0.5, 1.5, 3.0])
    def test_opposed_pair(self, opposed_pair, lam):
        a = SubjectNetwork(2, frozenset({(1, 2)}))
        value = joint_log_posterior(opposed_pair, [FORWARD, BACKWARD], a, Hyperparameters(lambda_=lam))
        assert value == pytest.approx(5 - 2 * lam, abs=1e-12)

    def test_identical_complete(self, network_split):
        hp = Hyperparameters(lambda_=10.0, eta=0.3)
        value = joint_log_posterior(network_split, [BACKWARD] * 4, SubjectNetwork.complete(4), hp)
        assert value == pytest.approx(5.0 + 6 * 0.3)

    def test_over_cap_is_minus_infinity(self, rng):
        tables = [random_table(rng, "s1", 3, 2)]
        g = Dag.from_edges(3, [(1, 3), (2, 3)])
        assert joint_log_posterior(tables, [g], SubjectNetwork.empty(1), Hyperparameters(d_max=1)) == -math.inf

    def test_subject_relabeling(self, rng):
        tables = [random_table(rng, f"s{k}", 3, 2) for k in range(1, 4)]
        dags = list(enumerate_dags(3))
        gs = [dags[i] for i in rng.integers(len(dags), size=3)]
        hp = Hyperparameters(lambda_=0.7, eta=0.4, d_max=2)
        a = SubjectNetwork.complete(3)
        perm = [2, 0, 1]
        base = joint_log_posterior(tables, gs, a, hp)
        permuted = joint_log_posterior([tables[i] for i in perm], [gs[i] for i in perm], a, hp)
        assert permuted == pytest.approx(base, abs=1e-12)

    def test_length_mismatch(self, opposed_pair):
        with pytest.raises(InputError):
            joint_log_posterior(opposed_pair, [FORWARD], SubjectNetwork.empty(2), Hyperparameters())


class TestThresholds:

    def test_opposed_pair(self, opposed_pair):
        assert lambda_eta_star(opposed_pair) == (9.0, 9.0)

    def test_network_split(self, network_split):
        assert lambda_eta_star(network_split)[0] == 8.0

    def test_flat_scores(self):
        assert lambda_eta_star([ScoreTable.flat("s1", 3, 2)]) == (0.0, 0.0)

    def test_single_node(self):
        table = ScoreTable.from_entries("s1", 2, 1, {(1, ()): 0, (1, (2,)): -3, (2, ()): 0, (2, (1,)): 0})
        assert lambda_eta_star([table])[0] == 3.0
