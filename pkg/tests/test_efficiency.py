"""Recovery study on synthetic data: joint estimation against independent estimation."""

import numpy as np
import pytest
from scipy import stats

from dag_core import distance
from diagnostics import elicit_lambda, lambda_sweep
from errors import InputError
from exact_solver import fit, independent_estimates
from ilp_encoding import SolveMode
from joint_prior import Hyperparameters, SubjectNetwork
from mdm_scoring import DlmConfig, build_score_table
from synthetic import SyntheticSpec, generate

P, K, N, D_MAX = 6, 6, 200, 2
GRID = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0]
SEEDS = range(24)


def scored(data):
    return [build_score_table(s, D_MAX, DlmConfig()) for s in data.series]


def elicited_lambda(base_dag, seed):
    """Lambda at half the lambda=0 distance between two replicates of the same DAG"""
    replicates = generate(SyntheticSpec(p=P, k_subjects=2, n_steps=N, base_dag=base_dag, d_max=D_MAX,
                                        seed=10_000 + seed))
    sweep = lambda_sweep(scored(replicates), SubjectNetwork.complete(2), GRID, hp=Hyperparameters(d_max=D_MAX))
    try:
        return elicit_lambda(sweep)
    except InputError:
        return GRID[-1]


def total_shd(estimates, truth):
    return sum(distance(g, h).shd for g, h in zip(estimates, truth))


@pytest.mark.slow
def test_joint_estimation_recovers_more_edges():
    joint_shd, independent_shd = [], []
    for seed in SEEDS:
        data = generate(SyntheticSpec(p=P, k_subjects=K, n_steps=N, d_max=D_MAX, divergence=1.0,
                                      edge_probability=0.3, seed=seed))
        tables = scored(data)
        lam = elicited_lambda(data.base_dag, seed)
        joint = fit(tables, Hyperparameters(lambda_=lam, d_max=D_MAX), SolveMode.fixed(SubjectNetwork.complete(K)))
        joint_shd.append(total_shd(joint.dags, data.dags))
        independent_shd.append(total_shd(independent_estimates(tables, D_MAX), data.dags))

    joint_shd, independent_shd = np.array(joint_shd), np.array(independent_shd)
    assert joint_shd.mean() < independent_shd.mean()

    wins = int(np.sum(joint_shd < independent_shd))
    losses = int(np.sum(joint_shd > independent_shd))
    assert stats.binomtest(wins, wins + losses, alternative='greater').pvalue < 0.05
