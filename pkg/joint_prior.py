"""
Multiple-DAG prior: pairwise regularity, multiplicity correction, network
hyperprior, and the joint log posterior those terms add up to.

All values are on the unnormalized log scale; the additive constant of
the network hyperprior is fixed at 0.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np

from dag_core import Dag, popcount
from errors import InputError
from mdm_scoring import ScoreTable, log_binomial
from storage import read_json

Pair = Tuple[int, int]
LambdaSpec = Union[float, Dict[Pair, np.ndarray]]
EtaSpec = Union[float, Dict[Pair, float]]


def canonical_pair(k: int, l: int) -> Pair:
    if k == l:
        raise InputError(f"self-loop ({k},{l}) in subject network")
    return (k, l) if k < l else (l, k)


def _parse_pair(key) -> Pair:
    if isinstance(key, str):
        parts = key.replace(',', '-').split('-')
        if len(parts) != 2:
            raise InputError(f"bad subject pair key {key!r}; use 'k-l'")
        key = parts
    try:
        k, l = (int(v) for v in key)
    except (TypeError, ValueError):
        raise InputError(f"bad subject pair key {key!r}")
    return canonical_pair(k, l)


@dataclass(frozen=True)
class SubjectNetwork:
    """Undirected network A over subjects 1..k_total (plus prototypes when clustering)"""
    k_total: int
    edges: frozenset = frozenset()

    def __post_init__(self):
        canon = set()
        for k, l in self.edges:
            pair = canonical_pair(int(k), int(l))
            if pair[0] < 1 or pair[1] > self.k_total:
                raise InputError(f"pair {pair} outside subjects 1..{self.k_total}")
            canon.add(pair)
        object.__setattr__(self, 'edges', frozenset(canon))

    @classmethod
    def empty(cls, k_total: int) -> 'SubjectNetwork':
        return cls(k_total)

    @classmethod
    def complete(cls, k_total: int) -> 'SubjectNetwork':
        return cls(k_total, frozenset(all_pairs(k_total)))

    def sorted_edges(self) -> List[Pair]:
        return sorted(self.edges)

    def __contains__(self, pair) -> bool:
        return canonical_pair(*pair) in self.edges

    def __len__(self):
        return len(self.edges)

    def is_complete(self) -> bool:
        return len(self.edges) == self.k_total * (self.k_total - 1) // 2

    def components(self, vertices: Optional[Iterable[int]] = None) -> List[tuple]:
        """Connected components, each sorted, ordered by smallest member"""
        graph = nx.Graph()
        graph.add_nodes_from(vertices if vertices is not None else range(1, self.k_total + 1))
        graph.add_edges_from(self.edges)
        return sorted(tuple(sorted(c)) for c in nx.connected_components(graph))

    def to_json(self) -> dict:
        return {"k_total": self.k_total, "edges": [list(e) for e in self.sorted_edges()]}

    @classmethod
    def from_json(cls, data: dict) -> 'SubjectNetwork':
        try:
            return cls(int(data["k_total"]), frozenset(tuple(e) for e in data.get("edges", [])))
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"malformed network record: {e}")

    def to_dot(self, labels: Optional[Sequence[str]] = None, name: str = "A") -> str:
        lines = [f'graph "{name}" {{']
        for k in range(1, self.k_total + 1):
            label = labels[k - 1] if labels else str(k)
            lines.append(f'  {k} [label="{label}"];')
        for k, l in self.sorted_edges():
            lines.append(f'  {k} -- {l};')
        lines.append('}')
        return "\n".join(lines) + "\n"


def all_pairs(k_total: int) -> List[Pair]:
    return [(k, l) for k in range(1, k_total + 1) for l in range(k + 1, k_total + 1)]


def replicate_network(groups: Sequence[Sequence[int]], k_total: Optional[int] = None) -> SubjectNetwork:
    """Link (k, l) iff datasets k and l are technical replicates of one subject"""
    k_total = k_total or max(max(g) for g in groups if g)
    edges = set()
    for group in groups:
        group = sorted(group)
        edges.update((a, b) for i, a in enumerate(group) for b in group[i + 1:])
    return SubjectNetwork(k_total, frozenset(edges))


def partition_string(blocks: Sequence[Sequence[int]]) -> str:
    """Canonical set-of-sets text, e.g. {{1,2},{3}}"""
    inner = ",".join("{" + ",".join(str(v) for v in sorted(b)) + "}" for b in sorted(sorted(b) for b in blocks))
    return "{" + inner + "}"


@dataclass(frozen=True)
class Hyperparameters:
    """
    ``lambda_`` is a scalar or a table {(k,l): P x P array}, entry [j-1, i-1]
    penalizing a mismatch on edge j->i. ``eta`` is a scalar or {(k,l): value}.
    """
    lambda_: LambdaSpec = 0.0
    eta: EtaSpec = 0.0
    d_max: int = 3

    def __post_init__(self):
        if self.d_max < 0:
            raise InputError("d_max must be nonnegative")
        if isinstance(self.lambda_, dict):
            table = {}
            for key, value in self.lambda_.items():
                arr = np.asarray(value, dtype=float)
                if arr.ndim == 0:
                    arr = float(arr)
                elif arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
                    raise InputError(f"lambda table entry {key} must be a scalar or a square matrix")
                if np.any(np.asarray(arr) < 0) or not np.all(np.isfinite(arr)):
                    raise InputError(f"lambda table entry {key} must be finite and nonnegative")
                table[_parse_pair(key)] = arr
            object.__setattr__(self, 'lambda_', table)
        else:
            if not np.isfinite(self.lambda_) or self.lambda_ < 0:
                raise InputError(f"lambda must be finite and nonnegative, got {self.lambda_}")
            object.__setattr__(self, 'lambda_', float(self.lambda_))
        if isinstance(self.eta, dict):
            table = {}
            for key, value in self.eta.items():
                if not np.isfinite(value):
                    raise InputError(f"eta table entry {key} must be finite")
                table[_parse_pair(key)] = float(value)
            object.__setattr__(self, 'eta', table)
        else:
            if not np.isfinite(self.eta):
                raise InputError("eta must be finite")
            object.__setattr__(self, 'eta', float(self.eta))

    @property
    def scalar_lambda(self) -> bool:
        return not isinstance(self.lambda_, dict)

    @property
    def scalar_eta(self) -> bool:
        return not isinstance(self.eta, dict)

    def lambda_matrix(self, k: int, l: int, p: int) -> np.ndarray:
        """P x P penalty matrix for pair (k,l); diagonal is zero"""
        if self.scalar_lambda:
            value = self.lambda_
        else:
            pair = canonical_pair(k, l)
            if pair not in self.lambda_:
                raise InputError(f"lambda table has no entry for subject pair {pair}")
            value = self.lambda_[pair]
        if np.ndim(value) == 0:
            mat = np.full((p, p), float(value))
        else:
            mat = np.array(value, dtype=float)
            if mat.shape != (p, p):
                raise InputError(f"lambda matrix for pair ({k},{l}) has shape {mat.shape}, expected ({p},{p})")
        np.fill_diagonal(mat, 0.0)
        return mat

    def eta_for(self, k: int, l: int) -> float:
        if self.scalar_eta:
            return self.eta
        pair = canonical_pair(k, l)
        if pair not in self.eta:
            raise InputError(f"eta table has no entry for subject pair {pair}")
        return self.eta[pair]

    def validate(self, k_total: int, p: int):
        for k, l in all_pairs(k_total):
            self.lambda_matrix(k, l, p)
            self.eta_for(k, l)

    def with_lambda(self, value) -> 'Hyperparameters':
        return replace(self, lambda_=value)

    def with_eta(self, value) -> 'Hyperparameters':
        return replace(self, eta=value)

    def to_dict(self) -> dict:
        def table(spec, convert):
            if not isinstance(spec, dict):
                return spec
            return {f"{k}-{l}": convert(v) for (k, l), v in sorted(spec.items())}
        return {
            'lambda': table(self.lambda_, lambda v: v.tolist() if isinstance(v, np.ndarray) else v),
            'eta': table(self.eta, float),
            'd_max': self.d_max,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'Hyperparameters':
        data = data or {}
        unknown = set(data) - {'lambda', 'eta', 'd_max'}
        if unknown:
            raise InputError(f"unknown hyperparameter fields: {sorted(unknown)}")
        return cls(lambda_=data.get('lambda', 0.0), eta=data.get('eta', 0.0), d_max=int(data.get('d_max', 3)))


def load_hyperparameters(path) -> Hyperparameters:
    return Hyperparameters.from_dict(read_json(path))


def covariate_lambda_table(covariates: Sequence[float], base: float, p: int) -> Dict[Pair, np.ndarray]:
    """lambda^{(k,l)} = base^{-|c_k - c_l|} on every edge (covariate-driven sharing)"""
    if base <= 0:
        raise InputError("base must be positive")
    k_total = len(covariates)
    return {(k, l): np.full((p, p), base ** (-abs(covariates[k - 1] - covariates[l - 1])))
            for k, l in all_pairs(k_total)}


def _lambda_arg(lam, p) -> np.ndarray:
    if np.ndim(lam) == 0:
        mat = np.full((p, p), float(lam))
        np.fill_diagonal(mat, 0.0)
        return mat
    mat = np.asarray(lam, dtype=float)
    if mat.shape != (p, p):
        raise InputError(f"lambda matrix shape {mat.shape} does not match P={p}")
    return mat


def log_regularity(g1: Dag, g2: Dag, lam) -> float:
    """-sum_{i,j} lambda_{j,i} [(j in G1_i) xor (j in G2_i)]"""
    if g1.p != g2.p:
        raise InputError(f"dimension mismatch: {g1.p} vs {g2.p} vertices")
    mismatch = g1.adjacency() != g2.adjacency()
    penalty = float((_lambda_arg(lam, g1.p) * mismatch).sum())
    return -penalty if penalty else 0.0


def log_multiplicity(g: Dag, p: int, d_max: int) -> float:
    """sum_i -log C(P, |G_i|), or -inf when any in-degree exceeds d_max"""
    sizes = [popcount(m) for m in g.parents]
    if any(s > d_max for s in sizes):
        return -math.inf
    return -sum(log_binomial(p, s) for s in sizes)


def log_network_prior(a: SubjectNetwork, eta) -> float:
    """sum over (k,l) in A of eta^{(k,l)}"""
    if isinstance(eta, Hyperparameters):
        return sum(eta.eta_for(k, l) for k, l in a.sorted_edges())
    if isinstance(eta, dict):
        return sum(float(eta[canonical_pair(k, l)]) for k, l in a.sorted_edges())
    return float(eta) * len(a)


def joint_log_posterior(tables: Sequence[ScoreTable], gs: Sequence[Dag], a: SubjectNetwork,
                        hp: Hyperparameters) -> float:
    """
    sum_k sum_i s_k(i, G_i^k) + sum_{(k,l) in A} log r(G^k, G^l) + log p(A).
    The multiplicity correction already lives inside the local scores.
    """
    if len(tables) != len(gs):
        raise InputError(f"{len(tables)} score tables but {len(gs)} DAGs")
    if a.k_total != len(gs):
        raise InputError(f"network over {a.k_total} vertices but {len(gs)} DAGs")
    total = 0.0
    for table, g in zip(tables, gs):
        if table.p != g.p:
            raise InputError(f"table {table.subject} has P={table.p}, DAG has P={g.p}")
        for i, mask in enumerate(g.parents, start=1):
            if popcount(mask) > hp.d_max:
                return -math.inf
            s = table.score(i, mask)
            if s == -math.inf:
                return -math.inf
            total += s
    for k, l in a.sorted_edges():
        total += log_regularity(gs[k - 1], gs[l - 1], hp.lambda_matrix(k, l, gs[0].p))
    total += log_network_prior(a, hp)
    return total


def lambda_eta_star(tables: Sequence[ScoreTable]) -> Tuple[float, float]:
    """
    Thresholds beyond which linked DAGs are forced equal (scalar lambda)
    and the network is forced complete (scalar eta):
    sum_k sum_i (max_pi s - min_pi s) over finite entries.
    """
    total = 0.0
    for table in tables:
        for i in range(1, table.p + 1):
            values = [v for v in table.scores.get(i, {}).values() if np.isfinite(v)]
            if not values:
                raise InputError(f"table {table.subject}: node {i} has no finite score")
            total += max(values) - min(values)
    return total, total
