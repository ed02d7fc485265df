"""
Synthetic multi-subject data drawn from the linear-Gaussian MDM.

Each subject's DAG is the base DAG with a Poisson number of single
parent-membership toggles, each resampled until the graph stays acyclic
and within d_max. Series are then simulated in topological order with
random-walk regression coefficients on an intercept plus parents.
"""

import io
import os
from dataclasses import dataclass, field
from typing import List, Optional

import networkx as nx
import numpy as np
import pandas as pd

from dag_core import Dag, masks_acyclic, popcount
from errors import InputError
from logging_config import get_logger
from mdm_scoring import TimeSeries
from storage import atomic_write_many, dumps, stamp

logger = get_logger('Synthetic')

BIT_GENERATOR = 'PCG64'
MAX_TOGGLE_ATTEMPTS = 10_000


@dataclass(frozen=True)
class SyntheticSpec:
    p: int
    k_subjects: int
    n_steps: int
    base_dag: Optional[Dag] = None
    d_max: int = 3
    # probability of each forward edge when the base DAG is random
    edge_probability: float = 0.3
    divergence: float = 0.0
    obs_variance: float = 1.0
    drift_variance: float = 0.0
    coefficient_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.p < 1 or self.k_subjects < 1 or self.n_steps < 1:
            raise InputError("p, k_subjects and n_steps must be positive")
        if self.d_max < 0:
            raise InputError("d_max must be nonnegative")
        if self.divergence < 0:
            raise InputError("divergence must be nonnegative")
        if self.obs_variance < 0 or self.drift_variance < 0 or self.coefficient_scale < 0:
            raise InputError("variances and coefficient scale must be nonnegative")
        if not 0.0 <= self.edge_probability <= 1.0:
            raise InputError("edge_probability must lie in [0, 1]")
        if self.base_dag is not None:
            if self.base_dag.p != self.p:
                raise InputError(f"base DAG has {self.base_dag.p} vertices, expected {self.p}")
            self.base_dag.check_in_degree(self.d_max)

    def to_dict(self) -> dict:
        return {
            'p': self.p, 'k_subjects': self.k_subjects, 'n_steps': self.n_steps,
            'base_dag': self.base_dag.to_json() if self.base_dag else None,
            'd_max': self.d_max, 'edge_probability': self.edge_probability,
            'divergence': self.divergence, 'obs_variance': self.obs_variance,
            'drift_variance': self.drift_variance, 'coefficient_scale': self.coefficient_scale,
            'seed': self.seed,
        }


@dataclass
class SyntheticData:
    series: List[TimeSeries]
    dags: List[Dag]
    base_dag: Dag
    # observation noise actually drawn, one N x P array per subject
    innovations: List[np.ndarray] = field(repr=False)
    meta: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.series, self.dags))


def random_dag(p: int, d_max: int, edge_probability: float, rng: np.random.Generator) -> Dag:
    order = rng.permutation(p) + 1
    masks = [0] * p
    for pos, child in enumerate(order):
        candidates = [int(j) for j in order[:pos] if rng.random() < edge_probability]
        if len(candidates) > d_max:
            candidates = sorted(rng.choice(candidates, size=d_max, replace=False).tolist())
        for j in candidates:
            masks[child - 1] |= 1 << (j - 1)
    return Dag(p, tuple(masks))


def perturb(dag: Dag, n_toggles: int, d_max: int, rng: np.random.Generator) -> Dag:
    """Apply n single parent-membership toggles, each resampled until valid"""
    p = dag.p
    masks = list(dag.parents)
    if p < 2:
        return dag
    for _ in range(n_toggles):
        for _attempt in range(MAX_TOGGLE_ATTEMPTS):
            i, j = (int(v) + 1 for v in rng.choice(p, size=2, replace=False))
            trial = list(masks)
            trial[i - 1] ^= 1 << (j - 1)
            if popcount(trial[i - 1]) <= d_max and masks_acyclic(trial):
                masks = trial
                break
        else:
            raise InputError("could not find a valid toggle; d_max too tight for this base DAG")
    return Dag(p, tuple(masks))


def _simulate(dag: Dag, spec: SyntheticSpec, rng: np.random.Generator):
    p, n_steps = spec.p, spec.n_steps
    graph = nx.DiGraph(dag.edges())
    graph.add_nodes_from(range(1, p + 1))
    order = list(nx.lexicographical_topological_sort(graph))
    theta = {i: rng.normal(0.0, spec.coefficient_scale, size=1 + popcount(dag.parents[i - 1]))
             for i in range(1, p + 1)}
    values = np.zeros((n_steps, p))
    noise = rng.normal(0.0, np.sqrt(spec.obs_variance), size=(n_steps, p))
    drift_sd = np.sqrt(spec.drift_variance)
    for n in range(n_steps):
        for i in order:
            if n > 0 and drift_sd > 0:
                theta[i] = theta[i] + rng.normal(0.0, drift_sd, size=theta[i].shape)
            regressors = np.concatenate([[1.0], values[n, [j - 1 for j in dag.parent_set(i)]]])
            values[n, i - 1] = regressors @ theta[i] + noise[n, i - 1]
    return values, noise


def generate(spec: SyntheticSpec) -> SyntheticData:
    """Deterministic for a fixed spec (seed included); subjects use independent child streams"""
    children = np.random.SeedSequence(spec.seed).spawn(spec.k_subjects + 1)
    base_rng = np.random.Generator(np.random.PCG64(children[0]))
    base = spec.base_dag or random_dag(spec.p, spec.d_max, spec.edge_probability, base_rng)

    series, dags, innovations = [], [], []
    for k in range(1, spec.k_subjects + 1):
        rng = np.random.Generator(np.random.PCG64(children[k]))
        n_toggles = int(rng.poisson(spec.divergence)) if spec.divergence > 0 else 0
        dag = perturb(base, n_toggles, spec.d_max, rng)
        values, noise = _simulate(dag, spec, rng)
        series.append(TimeSeries(f"s{k}", values))
        dags.append(dag)
        innovations.append(noise)

    meta = {'bit_generator': BIT_GENERATOR, 'numpy_version': np.__version__, 'spec': spec.to_dict()}
    logger.info(f"Generated {spec.k_subjects} subjects (P={spec.p}, N={spec.n_steps}), "
                f"base DAG {base}, seed {spec.seed}")
    return SyntheticData(series, dags, base, innovations, meta)


def _series_csv(series: TimeSeries) -> str:
    buf = io.StringIO()
    pd.DataFrame(series.values, columns=list(series.names)).to_csv(
        buf, index=False, float_format='%.17g', lineterminator='\n')
    return buf.getvalue()


def write_dataset(data: SyntheticData, out_dir, config: Optional[dict] = None) -> List[str]:
    """Per-subject CSVs, manifest.csv and ground_truth.json; all or nothing"""
    files = []
    rows = []
    for s in data.series:
        name = f"{s.subject}.csv"
        files.append((os.path.join(out_dir, name), _series_csv(s)))
        rows.append({'subject': s.subject, 'path': name})
    buf = io.StringIO()
    pd.DataFrame(rows, columns=['subject', 'path']).to_csv(buf, index=False, lineterminator='\n')
    files.append((os.path.join(out_dir, 'manifest.csv'), buf.getvalue()))
    truth = {
        **stamp(config),
        'rng': data.meta,
        'subjects': [s.subject for s in data.series],
        'base_dag': data.base_dag.to_json(),
        'dags': [g.to_json() for g in data.dags],
    }
    files.append((os.path.join(out_dir, 'ground_truth.json'), dumps(truth)))
    atomic_write_many(files)
    return [path for path, _ in files]
