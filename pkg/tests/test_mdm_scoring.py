import math

import numpy as np
import pytest
from scipy import integrate, stats

from errors import InputError, NumericalError
from mdm_scoring import (DlmConfig, ScoreTable, TimeSeries, admissible_keys, build_score_table,
                         log_binomial, node_log_evidence, one_step_log_density, read_manifest,
                         read_series, static_log_evidence)


def random_series(rng, n_steps, p, subject="s1"):
    return TimeSeries(subject, rng.normal(size=(n_steps, p)))


class TestTimeSeries:

    def test_default_names(self):
        series = TimeSeries("s1", np.zeros((4, 3)))
        assert series.names == ("Y1", "Y2", "Y3")
        assert (series.n_steps, series.p) == (4, 3)

    def test_rejects_missing_values(self):
        values = np.ones((3, 2))
        values[1, 1] = np.nan
        with pytest.raises(InputError):
            TimeSeries("s1", values)

    def test_rejects_name_mismatch(self):
        with pytest.raises(InputError):
            TimeSeries("s1", np.zeros((3, 2)), ("a",))


class TestDlmConfig:

    def test_delta_range(self):
        with pytest.raises(InputError):
            DlmConfig(delta=0.0)
        with pytest.raises(InputError):
            DlmConfig(delta_grid=(0.5, 1.2))

    def test_dict_roundtrip_ignores_unknown(self):
        config = DlmConfig(delta=0.95, obs_variance=2.0)
        data = {**config.to_dict(), 'd_max': 3, 'threads': 4}
        assert DlmConfig.from_dict(data) == config


class TestClosedFormOracles:
    """delta = 1 collapses the filter onto conjugate Bayesian regression"""

    def test_single_step_by_hand(self):
        series = TimeSeries("s1", np.array([[1.0]]))
        config = DlmConfig(delta=1.0, obs_variance=1.0)
        # prior state N(0, 3), so y ~ N(0, 3 + 1)
        expected = -0.5 * math.log(2 * math.pi * 4.0) - 1.0 / 8.0
        assert node_log_evidence(series, 1, 0, config) == pytest.approx(expected, abs=1e-12)

    def test_known_variance_matches_joint_gaussian(self, rng):
        for _ in range(100):
            n_steps = int(rng.integers(1, 11))
            p = 4
            series = random_series(rng, n_steps, p)
            node = int(rng.integers(1, p + 1))
            others = [j for j in range(1, p + 1) if j != node]
            parents = sorted(j for j in others if rng.random() < 0.5)
            v = float(rng.uniform(0.5, 2.0))
            config = DlmConfig(delta=1.0, obs_variance=v, prior_state_mean=0.3, prior_state_scale=2.0)

            design = np.column_stack([np.ones(n_steps)] + [series.values[:, j - 1] for j in parents])
            mean = design @ np.full(design.shape[1], 0.3)
            cov = v * (np.eye(n_steps) + 2.0 * design @ design.T)
            expected = stats.multivariate_normal.logpdf(series.values[:, node - 1], mean=mean, cov=cov)

            got = node_log_evidence(series, node, parents, config)
            np.testing.assert_allclose(got, expected, rtol=0, atol=1e-6)

    def test_unknown_variance_matches_multivariate_t(self, rng):
        for _ in range(30):
            n_steps = int(rng.integers(1, 11))
            series = random_series(rng, n_steps, 3)
            parents = [j for j in (2, 3) if rng.random() < 0.5]
            config = DlmConfig(delta=1.0, prior_obs_shape=2.0, prior_obs_scale=1.5)
            np.testing.assert_allclose(node_log_evidence(series, 1, parents, config),
                                       static_log_evidence(series, 1, parents, config),
                                       rtol=1e-8, atol=1e-8)

    def test_bitmask_and_list_agree(self, rng):
        series = random_series(rng, 12, 3)
        config = DlmConfig()
        assert node_log_evidence(series, 3, 0b011, config) == node_log_evidence(series, 3, [1, 2], config)


class TestPredictiveDensity:

    @pytest.mark.parametrize("dof", [None, 3.0, 12.0])
    def test_integrates_to_one(self, dof):
        total, _ = integrate.quad(lambda y: math.exp(one_step_log_density(y, 0.7, 2.5, dof)),
                                  -np.inf, np.inf)
        assert total == pytest.approx(1.0, abs=1e-4)


class TestNodeEvidence:

    def test_rejects_self_parent(self, rng):
        with pytest.raises(InputError):
            node_log_evidence(random_series(rng, 5, 2), 1, [1], DlmConfig())

    def test_degenerate_variance(self, rng):
        series = random_series(rng, 5, 2)
        with pytest.raises(NumericalError) as info:
            node_log_evidence(series, 2, [1], DlmConfig(obs_variance=1e-14))
        assert info.value.exit_code == 4
        assert info.value.context['node'] == 2
        assert info.value.context['step'] == 1


class TestScoreTable:

    def test_log_binomial(self):
        assert log_binomial(10, 3) == pytest.approx(math.log(120))
        assert log_binomial(5, 0) == 0.0

    @pytest.mark.parametrize("p, d_max, count", [(1, 0, 1), (3, 2, 12), (4, 1, 16), (5, 2, 55)])
    def test_admissible_counts(self, p, d_max, count):
        assert len(admissible_keys(p, d_max)) == count

    def test_entry_is_best_discount_minus_multiplicity(self, rng):
        series = random_series(rng, 15, 3)
        config = DlmConfig()
        table = build_score_table(series, 2, config, threads=1)
        best = max(node_log_evidence(series, 2, [1, 3], config, delta=d) for d in config.delta_grid)
        assert table.score(2, 0b101) == pytest.approx(best - math.log(3), abs=1e-12)
        assert table.deltas[(2, 0b101)] in config.delta_grid

    def test_thread_count_invariant(self, rng):
        series = random_series(rng, 20, 3)
        one = build_score_table(series, 2, DlmConfig(), threads=1)
        many = build_score_table(series, 2, DlmConfig(), threads=4)
        assert one.scores == many.scores
        assert one.n_entries() == 12

    def test_duplicate_series_identical_tables(self, rng):
        values = rng.normal(size=(10, 3))
        a = build_score_table(TimeSeries("a", values), 1, DlmConfig(), threads=2)
        b = build_score_table(TimeSeries("b", values.copy()), 1, DlmConfig(), threads=2)
        assert a.scores == b.scores

    def test_cap_gives_minus_infinity(self, rng):
        table = build_score_table(random_series(rng, 8, 3), 1, DlmConfig(), threads=1)
        assert table.score(1, 0b110) == -math.inf

    def test_rejects_bad_d_max(self, rng):
        with pytest.raises(InputError):
            build_score_table(random_series(rng, 8, 3), 3, DlmConfig())

    def test_missing_entry(self):
        with pytest.raises(InputError):
            ScoreTable.from_entries("s1", 2, 1, {(1, ()): 0.0, (2, ()): 0.0, (2, (1,)): 1.0})

    def test_prototype_scores(self):
        table = ScoreTable.prototype("proto", 3, 2)
        assert table.score(1, 0) == 0.0
        assert table.score(1, 0b010) == pytest.approx(-math.log(3))
        assert table.score(1, 0b110) == pytest.approx(-math.log(3))

    def test_combine_sums(self):
        a = ScoreTable.from_entries("a", 2, 1, {(1, ()): 0, (1, (2,)): 1, (2, ()): 0, (2, (1,)): 2})
        b = ScoreTable.from_entries("b", 2, 1, {(1, ()): 1, (1, (2,)): 1, (2, ()): 0, (2, (1,)): -5})
        combined = ScoreTable.combine([a, b])
        assert combined.score(1, 0) == 1.0
        assert combined.score(2, 0b01) == -3.0


class TestReaders:

    def test_manifest_resolves_relative_paths(self, tmp_path):
        (tmp_path / "manifest.csv").write_text("subject,path\ns1,s1.csv\n")
        (tmp_path / "s1.csv").write_text("a,b\n1,2\n3,4\n")
        entries = read_manifest(str(tmp_path / "manifest.csv"))
        assert entries == [("s1", str(tmp_path / "s1.csv"))]
        series = read_series(entries[0][1], "s1")
        assert series.names == ("a", "b")
        np.testing.assert_array_equal(series.values, [[1, 2], [3, 4]])

    def test_manifest_duplicate_subjects(self, tmp_path):
        (tmp_path / "manifest.csv").write_text("subject,path\ns1,a.csv\ns1,b.csv\n")
        with pytest.raises(InputError):
            read_manifest(str(tmp_path / "manifest.csv"))

    def test_missing_series_file(self, tmp_path):
        with pytest.raises(InputError):
            read_series(str(tmp_path / "absent.csv"), "s1")

    def test_non_numeric_series(self, tmp_path):
        (tmp_path / "s1.csv").write_text("a,b\n1,x\n")
        with pytest.raises(InputError):
            read_series(str(tmp_path / "s1.csv"), "s1")
