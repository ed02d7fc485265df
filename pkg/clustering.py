"""
k-means clustering of DAGs: subject DAGs, L data-free prototype DAGs and
the subject-to-prototype assignment are estimated together by one exact
solve in cluster mode. With as many prototypes as subjects the partition is
the identity and every prototype copies its subject.
"""

from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Mapping, Optional, Sequence, Tuple

from dag_core import Dag
from errors import InputError
from exact_solver import GAP, PROVEN_OPTIMAL, Certificate, MapEstimate, SolverLimits, SolverStats, fit
from ilp_encoding import SolveMode, slot_tables
from joint_prior import Hyperparameters, SubjectNetwork, joint_log_posterior, partition_string
from logging_config import get_logger
from mdm_scoring import ScoreTable

logger = get_logger('Clustering')


@dataclass(frozen=True)
class ClusterSpec:
    l_clusters: int
    subject_count: int

    def __post_init__(self):
        if self.subject_count < 1:
            raise InputError("clustering needs at least one subject")
        if not 1 <= self.l_clusters <= self.subject_count:
            raise InputError(f"need 1 <= L <= K, got L={self.l_clusters}, K={self.subject_count}")


@dataclass(frozen=True)
class ClusterResult:
    subject_dags: Tuple[Dag, ...]
    # ordered by canonical cluster label; unused prototypes come last
    prototypes: Tuple[Dag, ...]
    assignment: Dict[int, int]
    objective: float
    certificate: Certificate
    stats: SolverStats = field(default_factory=SolverStats, compare=False)

    @property
    def canonical_form(self) -> Dict[int, int]:
        return canonicalize(self.assignment)

    def clusters(self) -> List[Tuple[int, ...]]:
        groups: Dict[int, List[int]] = {}
        for k in sorted(self.assignment):
            groups.setdefault(self.assignment[k], []).append(k)
        return [tuple(groups[c]) for c in sorted(groups)]

    def partition(self) -> str:
        return partition_string(self.clusters())

    def network(self) -> SubjectNetwork:
        """Subject-prototype edges, prototype c sitting at vertex K + c"""
        k = len(self.subject_dags)
        edges = frozenset((s, k + c) for s, c in self.assignment.items())
        return SubjectNetwork(k + len(self.prototypes), edges)

    def to_dict(self) -> dict:
        return {
            'dags': [g.to_json() for g in self.subject_dags],
            'network': self.network().to_json(),
            'prototypes': [g.to_json() for g in self.prototypes],
            'assignment': {str(k): c for k, c in sorted(self.assignment.items())},
            'partition': self.partition(),
            'objective': self.objective,
            'certificate': self.certificate.to_dict(),
            'stats': self.stats.to_dict(),
        }


def canonicalize(assignment: Mapping[int, Hashable]) -> Dict[int, int]:
    """Relabel clusters 1, 2, ... in order of first appearance over subjects"""
    labels: Dict[Hashable, int] = {}
    out = {}
    for k in sorted(assignment):
        label = assignment[k]
        if label not in labels:
            labels[label] = len(labels) + 1
        out[k] = labels[label]
    return out


def _from_estimate(estimate: MapEstimate, k: int) -> ClusterResult:
    raw = {}
    for a, b in estimate.network.sorted_edges():
        raw[a] = b - k
    missing = [s for s in range(1, k + 1) if s not in raw]
    if missing:
        raise InputError(f"subjects {missing} have no prototype")
    canonical = canonicalize(raw)
    order = []
    for s in range(1, k + 1):
        if raw[s] not in order:
            order.append(raw[s])
    order += [c for c in range(1, len(estimate.prototypes) + 1) if c not in order]
    prototypes = tuple(estimate.prototypes[c - 1] for c in order)
    return ClusterResult(subject_dags=estimate.dags, prototypes=prototypes, assignment=canonical,
                         objective=estimate.objective, certificate=estimate.certificate,
                         stats=estimate.stats)


def _one_prototype_each(tables: Sequence[ScoreTable], hp: Hyperparameters, limits: Optional[SolverLimits],
                        prototype_prior: str, backend: str) -> ClusterResult:
    """
    L = K: subject k keeps its independent estimate and prototype k copies
    it, so the assignment is the identity and every pair penalty is zero.
    """
    k = len(tables)
    slots, cap = slot_tables(tables, hp, SolveMode.cluster(k), prototype_prior)
    single = SolveMode.fixed(SubjectNetwork.empty(1))
    estimates = [fit([table], Hyperparameters(d_max=cap), single, limits, backend=backend) for table in tables]
    dags = tuple(e.dags[0] for e in estimates)
    network = SubjectNetwork(2 * k, frozenset((s, k + s) for s in range(1, k + 1)))
    objective = joint_log_posterior(slots, list(dags) * 2, network, hp.with_eta(0.0))
    if all(e.certificate.proven_optimal for e in estimates):
        certificate = Certificate(PROVEN_OPTIMAL, objective)
    else:
        slack = sum(e.certificate.bound - e.objective for e in estimates)
        certificate = Certificate(GAP, objective + slack)
    stats = SolverStats(
        nodes=sum(e.stats.nodes for e in estimates), lp_solves=sum(e.stats.lp_solves for e in estimates),
        cuts=sum(e.stats.cuts for e in estimates),
        tie_break_solves=sum(e.stats.tie_break_solves for e in estimates),
        canonical=all(e.stats.canonical for e in estimates),
        wall_time=sum(e.stats.wall_time for e in estimates),
    )
    return ClusterResult(subject_dags=dags, prototypes=dags, assignment={s: s for s in range(1, k + 1)},
                         objective=objective, certificate=certificate, stats=stats)


def solve_clustering(tables: Sequence[ScoreTable], hp: Hyperparameters, spec: ClusterSpec,
                     limits: Optional[SolverLimits] = None, prototype_prior: str = 'multiplicity',
                     backend: str = 'ilp') -> ClusterResult:
    if spec.subject_count != len(tables):
        raise InputError(f"cluster spec is for {spec.subject_count} subjects, got {len(tables)} tables")
    if spec.l_clusters == spec.subject_count:
        result = _one_prototype_each(tables, hp, limits, prototype_prior, backend)
    else:
        estimate = fit(tables, hp, SolveMode.cluster(spec.l_clusters), limits, backend=backend,
                       prototype_prior=prototype_prior)
        result = _from_estimate(estimate, len(tables))
    logger.info(f"Clustered {len(tables)} subjects into {len(result.clusters())} of {spec.l_clusters} "
                f"prototypes: {result.partition()}")
    return result
