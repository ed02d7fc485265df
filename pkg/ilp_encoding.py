"""
Integer linear program for the joint MAP problem.

Variables, in column order:

- ``x[s, i, pi]``: slot s (subject, or prototype when clustering) gives node
  i the parent set pi. Objective coefficient s_s(i, pi).
- ``z[k, l]``: pair (k, l) is in the subject network. Coefficient eta
  (fixed/joint modes) or 0 (cluster mode).
- ``d[k, l, j, i]``: edge j->i membership differs between k and l while
  (k, l) is linked. Coefficient -lambda_{j,i}. Only created where
  lambda_{j,i} > 0; continuous, integral at every integral (x, z).

Acyclicity is enforced by cluster constraints added lazily as cuts.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from dag_core import Dag, find_cycle, popcount
from errors import InputError, SolverError
from joint_prior import Hyperparameters, SubjectNetwork, all_pairs, joint_log_posterior
from logging_config import get_logger
from mdm_scoring import ScoreTable

logger = get_logger('Solver')

FIXED, JOINT, CLUSTER = 'fixed', 'joint', 'cluster'
PROTOTYPE_PRIORS = ('multiplicity', 'flat')
# exact subset enumeration for separation up to this many vertices
EXACT_SEPARATION_VERTICES = 10


@dataclass(frozen=True)
class SolveMode:
    kind: str
    network: Optional[SubjectNetwork] = None
    l_clusters: int = 0

    @classmethod
    def fixed(cls, network: SubjectNetwork) -> 'SolveMode':
        return cls(FIXED, network=network)

    @classmethod
    def joint(cls) -> 'SolveMode':
        return cls(JOINT)

    @classmethod
    def cluster(cls, l_clusters: int) -> 'SolveMode':
        return cls(CLUSTER, l_clusters=int(l_clusters))

    def to_dict(self) -> dict:
        data = {'kind': self.kind}
        if self.kind == FIXED:
            data['network'] = self.network.to_json()
        if self.kind == CLUSTER:
            data['l_clusters'] = self.l_clusters
        return data


@dataclass
class IlpModel:
    tables: List[ScoreTable]
    hp: Hyperparameters
    mode: SolveMode
    k_subjects: int
    p: int
    d_max: int
    # x block
    x_slot: np.ndarray
    x_node: np.ndarray
    x_mask: np.ndarray
    x_ranges: Dict[Tuple[int, int], Tuple[int, int]]
    # z block
    pairs: List[Tuple[int, int]]
    z_start: int
    # d block: (pair index, parent j, child i)
    d_vars: List[Tuple[int, int, int]]
    d_start: int
    lambda_mats: List[np.ndarray]
    f: np.ndarray
    a_ub: sparse.csr_matrix
    b_ub: np.ndarray
    a_eq: sparse.csr_matrix
    b_eq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    branchable: np.ndarray
    _separation: Dict[int, tuple] = field(default_factory=dict, repr=False)

    @property
    def n_vars(self) -> int:
        return len(self.f)

    @property
    def n_x(self) -> int:
        return len(self.x_slot)

    @property
    def n_slots(self) -> int:
        return len(self.tables)

    @property
    def n_prototypes(self) -> int:
        return self.n_slots - self.k_subjects

    def z_index(self, k: int, l: int) -> int:
        return self.z_start + self.pairs.index((k, l))

    # -- configuration <-> point -------------------------------------------

    def decode(self, x: np.ndarray) -> Tuple[List[Dag], SubjectNetwork]:
        masks = [[0] * self.p for _ in range(self.n_slots)]
        for (s, i), (start, stop) in self.x_ranges.items():
            chosen = start + int(np.argmax(x[start:stop]))
            if x[chosen] < 0.5:
                raise SolverError(f"no parent set selected for slot {s}, node {i}")
            masks[s - 1][i - 1] = int(self.x_mask[chosen])
        dags = []
        for s, row in enumerate(masks, start=1):
            cycle = find_cycle(self.p, row)
            if cycle is not None:
                raise SolverError(f"decoded slot {s} has a directed cycle through {cycle}")
            dags.append(Dag(self.p, tuple(row)))
        edges = [pair for idx, pair in enumerate(self.pairs) if x[self.z_start + idx] > 0.5]
        return dags, SubjectNetwork(self.n_slots, frozenset(edges))

    def encode_point(self, dags: Sequence[Dag], network: SubjectNetwork) -> np.ndarray:
        if len(dags) != self.n_slots:
            raise InputError(f"expected {self.n_slots} DAGs, got {len(dags)}")
        x = np.zeros(self.n_vars)
        for (s, i), (start, stop) in self.x_ranges.items():
            mask = dags[s - 1].parents[i - 1]
            hits = np.flatnonzero(self.x_mask[start:stop] == mask)
            if not len(hits):
                raise InputError(f"parent set {mask} of slot {s}, node {i} is not admissible")
            x[start + hits[0]] = 1.0
        for idx, pair in enumerate(self.pairs):
            x[self.z_start + idx] = 1.0 if pair in network.edges else 0.0
        for offset, (idx, j, i) in enumerate(self.d_vars):
            k, l = self.pairs[idx]
            bit = 1 << (j - 1)
            differs = bool(dags[k - 1].parents[i - 1] & bit) != bool(dags[l - 1].parents[i - 1] & bit)
            x[self.d_start + offset] = 1.0 if differs and x[self.z_start + idx] > 0.5 else 0.0
        return x

    def objective_value(self, x: np.ndarray) -> float:
        return float(self.f @ x)

    def pair_penalty(self, idx: int, g1: Dag, g2: Dag) -> float:
        """lambda-weighted mismatch count of a pair's DAGs"""
        mismatch = g1.adjacency() != g2.adjacency()
        return float((self.lambda_mats[idx] * mismatch).sum())

    def canonical_network(self, dags: Sequence[Dag], tolerance: float = 1e-9) -> SubjectNetwork:
        """
        Best network for fixed DAGs. Pairs decouple once the DAGs are known:
        joint mode keeps a pair iff its net contribution exceeds tolerance,
        cluster mode attaches each subject to its closest prototype (smallest
        prototype index on ties).
        """
        if self.mode.kind == FIXED:
            return self.mode.network
        if self.mode.kind == JOINT:
            edges = []
            for idx, (k, l) in enumerate(self.pairs):
                value = self.hp.eta_for(k, l) - self.pair_penalty(idx, dags[k - 1], dags[l - 1])
                if value > tolerance:
                    edges.append((k, l))
            return SubjectNetwork(self.n_slots, frozenset(edges))
        edges = []
        for k in range(1, self.k_subjects + 1):
            best, best_pair = None, None
            for c in range(self.k_subjects + 1, self.n_slots + 1):
                idx = self.pairs.index((k, c))
                penalty = self.pair_penalty(idx, dags[k - 1], dags[c - 1])
                if best is None or penalty < best - tolerance:
                    best, best_pair = penalty, (k, c)
            edges.append(best_pair)
        return SubjectNetwork(self.n_slots, frozenset(edges))

    def posterior_hyperparameters(self) -> Hyperparameters:
        # the assignment always has K edges, so eta is a constant there
        if self.mode.kind == CLUSTER:
            return self.hp.with_eta(0.0)
        return self.hp

    def posterior(self, dags: Sequence[Dag], network: SubjectNetwork) -> float:
        return joint_log_posterior(self.tables, dags, network, self.posterior_hyperparameters())

    # -- cluster cuts ------------------------------------------------------

    def cluster_cut_row(self, slot: int, subset: int) -> np.ndarray:
        """Columns of sum_{i in C} sum_{pi disjoint from C} x[slot, i, pi] >= 1"""
        cols = []
        for i in range(1, self.p + 1):
            if not subset & (1 << (i - 1)):
                continue
            start, stop = self.x_ranges[(slot, i)]
            cols.extend(start + np.flatnonzero((self.x_mask[start:stop] & subset) == 0))
        return np.asarray(cols, dtype=np.int64)

    def _separation_data(self, slot: int):
        if slot not in self._separation:
            subsets = np.array([c for c in range(1 << self.p) if popcount(c) >= 2], dtype=np.int64)
            start = self.x_ranges[(slot, 1)][0]
            stop = self.x_ranges[(slot, self.p)][1]
            nodes = self.x_node[start:stop].astype(np.int64)
            masks = self.x_mask[start:stop].astype(np.int64)
            in_cluster = ((subsets[:, None] >> (nodes[None, :] - 1)) & 1).astype(bool)
            disjoint = (subsets[:, None] & masks[None, :]) == 0
            incidence = sparse.csr_matrix((in_cluster & disjoint).astype(float))
            self._separation[slot] = (subsets, incidence, start, stop)
        return self._separation[slot]

    def violated_clusters(self, x: np.ndarray, epsilon: float = 1e-6, per_slot: int = 20) -> List[Tuple[int, int]]:
        """
        (slot, subset) pairs whose cluster constraint the point violates.
        Exact enumeration for small P; beyond that only integral points are
        checked, through their cycles.
        """
        found = []
        for slot in range(1, self.n_slots + 1):
            if self.p <= EXACT_SEPARATION_VERTICES:
                subsets, incidence, start, stop = self._separation_data(slot)
                lhs = incidence @ x[start:stop]
                hits = np.flatnonzero(lhs < 1.0 - epsilon)
                # most violated first, then smaller clusters
                order = sorted(hits, key=lambda h: (lhs[h], popcount(int(subsets[h])), int(subsets[h])))
                found.extend((slot, int(subsets[h])) for h in order[:per_slot])
            else:
                masks = self._integral_masks(x, slot)
                if masks is None:
                    continue
                cycle = find_cycle(self.p, masks)
                if cycle is not None:
                    found.append((slot, sum(1 << (v - 1) for v in cycle)))
        return found

    def _integral_masks(self, x, slot) -> Optional[List[int]]:
        masks = []
        for i in range(1, self.p + 1):
            start, stop = self.x_ranges[(slot, i)]
            block = x[start:stop]
            chosen = int(np.argmax(block))
            if block[chosen] < 1.0 - 1e-6:
                return None
            masks.append(int(self.x_mask[start + chosen]))
        return masks


def effective_d_max(tables: Sequence[ScoreTable], hp: Hyperparameters) -> int:
    return min([hp.d_max] + [t.d_max for t in tables])


def slot_tables(tables: Sequence[ScoreTable], hp: Hyperparameters, mode: SolveMode,
                prototype_prior: str = 'multiplicity') -> Tuple[List[ScoreTable], int]:
    """Subject tables plus data-free prototype tables in cluster mode"""
    if not tables:
        raise InputError("no score tables given")
    p = tables[0].p
    for t in tables:
        if t.p != p:
            raise InputError(f"table {t.subject} has P={t.p}, expected {p}")
    cap = effective_d_max(tables, hp)
    slots = list(tables)
    if mode.kind == CLUSTER:
        if not 1 <= mode.l_clusters <= len(tables):
            raise InputError(f"need 1 <= L <= K, got L={mode.l_clusters}, K={len(tables)}")
        if prototype_prior not in PROTOTYPE_PRIORS:
            raise InputError(f"prototype_prior must be one of {PROTOTYPE_PRIORS}")
        build = ScoreTable.prototype if prototype_prior == 'multiplicity' else ScoreTable.flat
        slots.extend(build(f"prototype{c}", p, cap) for c in range(1, mode.l_clusters + 1))
    elif mode.kind == FIXED:
        if mode.network is None or mode.network.k_total != len(tables):
            raise InputError(f"fixed network must have {len(tables)} vertices")
    elif mode.kind != JOINT:
        raise InputError(f"unknown mode {mode.kind!r}")
    return slots, cap


def _model_pairs(mode: SolveMode, k_subjects: int) -> List[Tuple[int, int]]:
    if mode.kind == FIXED:
        return mode.network.sorted_edges()
    if mode.kind == JOINT:
        return all_pairs(k_subjects)
    return [(k, k_subjects + c) for k in range(1, k_subjects + 1) for c in range(1, mode.l_clusters + 1)]


def encode(tables: Sequence[ScoreTable], hp: Hyperparameters, mode: SolveMode,
           prototype_prior: str = 'multiplicity') -> IlpModel:
    slots, cap = slot_tables(tables, hp, mode, prototype_prior)
    k_subjects = len(tables)
    p = slots[0].p

    f, x_slot, x_node, x_mask = [], [], [], []
    x_ranges = {}
    for s, table in enumerate(slots, start=1):
        for i in range(1, p + 1):
            start = len(f)
            for mask in table.parent_sets(i, cap):
                f.append(table.score(i, mask))
                x_slot.append(s)
                x_node.append(i)
                x_mask.append(mask)
            x_ranges[(s, i)] = (start, len(f))

    pairs = _model_pairs(mode, k_subjects)
    z_start = len(f)
    lambda_mats = [hp.lambda_matrix(k, l, p) for k, l in pairs]
    for k, l in pairs:
        f.append(hp.eta_for(k, l) if mode.kind != CLUSTER else 0.0)

    d_start = len(f)
    d_vars = []
    for idx, mat in enumerate(lambda_mats):
        for i in range(1, p + 1):
            for j in range(1, p + 1):
                if j != i and mat[j - 1, i - 1] > 0:
                    d_vars.append((idx, j, i))
                    f.append(-float(mat[j - 1, i - 1]))

    n = len(f)
    x_mask_arr = np.asarray(x_mask, dtype=np.int64)

    def membership(s, j, i):
        start, stop = x_ranges[(s, i)]
        return start + np.flatnonzero(x_mask_arr[start:stop] & (1 << (j - 1)))

    rows, cols, vals, b_ub = [], [], [], []

    def add_row(entries, rhs):
        r = len(b_ub)
        for c, v in entries:
            rows.append(r)
            cols.append(c)
            vals.append(v)
        b_ub.append(rhs)

    for offset, (idx, j, i) in enumerate(d_vars):
        k, l = pairs[idx]
        z_col, d_col = z_start + idx, d_start + offset
        e_k, e_l = membership(k, j, i), membership(l, j, i)
        link = [(z_col, 1.0), (d_col, -1.0)]
        add_row([(c, 1.0) for c in e_k] + [(c, -1.0) for c in e_l] + link, 1.0)
        add_row([(c, 1.0) for c in e_l] + [(c, -1.0) for c in e_k] + link, 1.0)
        add_row([(d_col, 1.0), (z_col, -1.0)], 0.0)
    a_ub = sparse.csr_matrix((vals, (rows, cols)), shape=(len(b_ub), n))

    eq_rows, eq_cols, b_eq = [], [], []
    for (s, i), (start, stop) in x_ranges.items():
        r = len(b_eq)
        eq_rows.extend([r] * (stop - start))
        eq_cols.extend(range(start, stop))
        b_eq.append(1.0)
    if mode.kind == CLUSTER:
        for k in range(1, k_subjects + 1):
            r = len(b_eq)
            members_ = [z_start + idx for idx, (a, _) in enumerate(pairs) if a == k]
            eq_rows.extend([r] * len(members_))
            eq_cols.extend(members_)
            b_eq.append(1.0)
    a_eq = sparse.csr_matrix((np.ones(len(eq_rows)), (eq_rows, eq_cols)), shape=(len(b_eq), n))

    lb = np.zeros(n)
    ub = np.ones(n)
    if mode.kind == FIXED:
        lb[z_start:d_start] = 1.0
    branchable = np.zeros(n, dtype=bool)
    branchable[:d_start] = True

    if not np.all(np.isfinite(f)):
        raise InputError("objective has non-finite coefficients")
    model = IlpModel(
        tables=slots, hp=hp, mode=mode, k_subjects=k_subjects, p=p, d_max=cap,
        x_slot=np.asarray(x_slot, dtype=np.int64), x_node=np.asarray(x_node, dtype=np.int64),
        x_mask=x_mask_arr, x_ranges=x_ranges, pairs=pairs, z_start=z_start,
        d_vars=d_vars, d_start=d_start, lambda_mats=lambda_mats, f=np.asarray(f, dtype=float),
        a_ub=a_ub, b_ub=np.asarray(b_ub, dtype=float), a_eq=a_eq, b_eq=np.asarray(b_eq, dtype=float),
        lb=lb, ub=ub, branchable=branchable,
    )
    logger.debug(f"Encoded {mode.kind} model: {len(slots)} slots, {model.n_x} x, "
                 f"{len(pairs)} z, {len(d_vars)} d variables, {len(b_ub)} linking rows")
    return model
