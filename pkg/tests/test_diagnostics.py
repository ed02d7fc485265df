import io

import pandas as pd
import pytest

from dag_core import distance
from diagnostics import (SWEEP_COLUMNS, ComparisonSetting, SweepResult, elicit_lambda, eta_sweep,
                         gnuplot_script, lambda_sweep, log_score_comparison)
from errors import InputError
from exact_solver import independent_estimates
from ilp_encoding import SolveMode
from joint_prior import Hyperparameters, SubjectNetwork, lambda_eta_star
from mdm_scoring import DlmConfig, build_score_table
from synthetic import SyntheticSpec, generate

LINKED = SubjectNetwork(2, frozenset({(1, 2)}))
OPPOSED_GRID = [0.0, 0.5, 1.5, 3.0]
SPLIT = "{{1,2},{3,4}}"
WHOLE = "{{1,2,3,4}}"


@pytest.fixture
def opposed_sweep(opposed_pair):
    return lambda_sweep(opposed_pair, LINKED, OPPOSED_GRID, hp=Hyperparameters(d_max=1))


class TestLambdaSweep:

    def test_distances(self, opposed_sweep):
        assert opposed_sweep.distances('shd') == [1, 1, 1, 0]
        assert opposed_sweep.distances('xor') == [2, 2, 1, 0]
        assert [r.objective for r in opposed_sweep.records] == pytest.approx([5.0, 4.0, 2.5, 2.0])
        assert {r.partition for r in opposed_sweep.records} == {"{{1,2}}"}
        assert all(r.certificate == "proven-optimal" for r in opposed_sweep.records)

    def test_single_point_matches_full_sweep(self, opposed_pair, opposed_sweep):
        alone = lambda_sweep(opposed_pair, LINKED, [1.5], hp=Hyperparameters(d_max=1))
        assert alone.records[0] == opposed_sweep.records[2]

    def test_threads_do_not_change_records(self, opposed_pair, opposed_sweep):
        threaded = lambda_sweep(opposed_pair, LINKED, OPPOSED_GRID, hp=Hyperparameters(d_max=1), threads=3)
        assert threaded.records == opposed_sweep.records

    def test_brute_backend(self, opposed_pair, opposed_sweep):
        brute = lambda_sweep(opposed_pair, LINKED, OPPOSED_GRID, hp=Hyperparameters(d_max=1), backend='brute')
        assert brute.distances('xor') == opposed_sweep.distances('xor')

    @pytest.mark.parametrize("grid", [[], [1.0, 0.5], [0.0, float('inf')]])
    def test_bad_grids(self, opposed_pair, grid):
        with pytest.raises(InputError):
            lambda_sweep(opposed_pair, LINKED, grid)

    def test_bad_metric(self, opposed_pair):
        with pytest.raises(InputError):
            lambda_sweep(opposed_pair, LINKED, [0.0], metric='hamming')

    def test_errors_name_the_grid_point(self, opposed_pair):
        with pytest.raises(InputError) as info:
            lambda_sweep(opposed_pair, SubjectNetwork.empty(3), [0.0])
        assert str(info.value).startswith("lambda=0.0:")


class TestReplicateEndpoints:

    def test_endpoints_on_replicates(self):
        data = generate(SyntheticSpec(p=3, k_subjects=2, n_steps=60, d_max=2, edge_probability=0.6,
                                      divergence=0.0, seed=5))
        tables = [build_score_table(s, 2, DlmConfig(), threads=1) for s in data.series]
        lam_star, _ = lambda_eta_star(tables)
        sweep = lambda_sweep(tables, LINKED, [0.0, lam_star + 1.0], hp=Hyperparameters(d_max=2))
        g1, g2 = independent_estimates(tables)
        assert sweep.records[0].total_shd == distance(g1, g2).shd
        assert sweep.records[-1].total_shd == 0
        assert sweep.records[0].total_shd >= sweep.records[-1].total_shd


class TestEtaSweep:

    def test_network_split_partitions(self, network_split):
        sweep = eta_sweep(network_split, Hyperparameters(lambda_=10.0, d_max=1), [0.25, 0.5, 0.8, 1.2, 2.0])
        assert [r.partition for r in sweep.records] == [SPLIT, SPLIT, WHOLE, WHOLE, WHOLE]
        assert sweep.distances() == [0, 0, 0, 0, 0]
        assert sweep.records[0].objective == pytest.approx(8.5)
        assert sweep.records[-1].objective == pytest.approx(17.0)


class TestComparison:

    def settings(self):
        return [
            ComparisonSetting('lambda=1.5', Hyperparameters(lambda_=1.5, d_max=1), mode=SolveMode.fixed(LINKED)),
            ComparisonSetting('identical', Hyperparameters(d_max=1), identical=True),
        ]

    def test_differences_against_first(self, opposed_pair):
        frame = log_score_comparison(opposed_pair, self.settings())
        assert list(frame['setting']) == ['lambda=1.5', 'identical']
        assert list(frame['objective']) == pytest.approx([2.5, 2.0])
        assert list(frame['difference']) == pytest.approx([0.0, -0.5])

    def test_named_baseline(self, opposed_pair):
        frame = log_score_comparison(opposed_pair, self.settings(), baseline='identical')
        assert list(frame['difference']) == pytest.approx([0.5, 0.0])

    def test_identical_setting_links_every_pair(self, opposed_pair):
        setting = ComparisonSetting('identical', Hyperparameters(eta=1.5, d_max=1), identical=True)
        frame = log_score_comparison(opposed_pair, [setting])
        assert frame['objective'][0] == pytest.approx(3.5)

    def test_default_mode_is_joint(self, opposed_pair):
        frame = log_score_comparison(opposed_pair, [ComparisonSetting('independent', Hyperparameters(d_max=1))])
        assert frame['objective'][0] == pytest.approx(5.0)

    def test_validation(self, opposed_pair):
        with pytest.raises(InputError):
            log_score_comparison(opposed_pair, [])
        with pytest.raises(InputError):
            log_score_comparison(opposed_pair, self.settings(), baseline='missing')
        with pytest.raises(InputError):
            log_score_comparison(opposed_pair, self.settings()[:1] * 2)


class TestElicitation:

    def test_half_of_replicate_distance(self, opposed_sweep):
        assert elicit_lambda(opposed_sweep) == 3.0
        assert elicit_lambda(opposed_sweep, metric='xor') == 1.5
        assert elicit_lambda(opposed_sweep, fraction=1.0) == 0.0

    def test_needs_zero_start(self, opposed_pair):
        sweep = lambda_sweep(opposed_pair, LINKED, [0.5, 3.0], hp=Hyperparameters(d_max=1))
        with pytest.raises(InputError):
            elicit_lambda(sweep)

    def test_grid_too_short(self, opposed_pair):
        sweep = lambda_sweep(opposed_pair, LINKED, [0.0, 0.5], hp=Hyperparameters(d_max=1))
        with pytest.raises(InputError):
            elicit_lambda(sweep)


class TestOutputs:

    def test_csv_layout(self, opposed_sweep):
        text = opposed_sweep.to_csv({'grid': OPPOSED_GRID})
        lines = text.splitlines()
        assert lines[0].startswith('# {')
        assert '"tool": "multidag"' in lines[0]
        assert lines[1] == ",".join(SWEEP_COLUMNS)
        assert lines[2] == '0,1,2,5,"{{1,2}}"'
        frame = pd.read_csv(io.StringIO(text), comment='#')
        assert list(frame['total_xor']) == [2, 2, 1, 0]

    def test_csv_roundtrip(self, opposed_sweep):
        back = SweepResult.from_csv(opposed_sweep.to_csv())
        assert back.parameter == 'lambda'
        assert back.grid == OPPOSED_GRID
        assert back.distances('xor') == [2, 2, 1, 0]
        assert back.records[0].partition == "{{1,2}}"

    def test_plot_script(self):
        shd = gnuplot_script('lambda_sweep.csv', 'lambda')
        assert "using 1:2" in shd and "lambda_sweep.png" in shd
        assert "using 1:3" in gnuplot_script('eta_sweep.csv', 'eta', metric='xor')
