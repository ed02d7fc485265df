"""
Certified MAP estimation: LP-based branch-and-cut over the joint encoding,
plus an exhaustive backend used as an oracle on small instances.

Both backends return the same configuration among tied optima. The order
on optima is: fewest total edges over all DAGs, then the lexicographically
smallest sequence of parent-set bitmasks by (slot, node), then the
canonical network for those DAGs (smallest edge set in joint mode,
closest prototype with the smallest index in cluster mode). A time or
node limit reached during that ordering leaves the optimum as found.
"""

import heapq
import itertools
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from dag_core import Dag, enumerate_dags
from errors import CapacityError, InputError, SolverError
from ilp_encoding import CLUSTER, FIXED, JOINT, IlpModel, SolveMode, encode
from joint_prior import Hyperparameters, SubjectNetwork
from logging_config import get_logger
from mdm_scoring import ScoreTable

logger = get_logger('Solver')

PROVEN_OPTIMAL = 'proven-optimal'
GAP = 'gap'
INTEGRALITY_TOLERANCE = 1e-6
MAX_CUT_ROUNDS = 200
BRUTE_FORCE_BLOCK = 1 << 21

LP_OPTIONS = {
    'primal_feasibility_tolerance': 1e-10,
    'dual_feasibility_tolerance': 1e-10,
    'presolve': True,
}


@dataclass(frozen=True)
class SolverLimits:
    time_limit: Optional[float] = None
    node_limit: Optional[int] = None
    # absolute gap at which the search may stop early
    gap: float = 0.0
    tolerance: float = 1e-9
    brute_force_budget: int = 200_000_000

    def __post_init__(self):
        if self.time_limit is not None and self.time_limit <= 0:
            raise InputError("time_limit must be positive")
        if self.node_limit is not None and self.node_limit < 1:
            raise InputError("node_limit must be at least 1")
        if self.gap < 0 or self.tolerance <= 0:
            raise InputError("gap must be nonnegative and tolerance positive")

    def to_dict(self) -> dict:
        return {'time_limit': self.time_limit, 'node_limit': self.node_limit, 'gap': self.gap,
                'tolerance': self.tolerance, 'brute_force_budget': self.brute_force_budget}

    @classmethod
    def from_dict(cls, data: dict) -> 'SolverLimits':
        known = {k: v for k, v in (data or {}).items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(frozen=True)
class Certificate:
    status: str
    bound: float

    @property
    def proven_optimal(self) -> bool:
        return self.status == PROVEN_OPTIMAL

    @property
    def exit_code(self) -> int:
        return 0 if self.proven_optimal else 1

    def label(self) -> str:
        return PROVEN_OPTIMAL if self.proven_optimal else f"gap({self.bound:.17g})"

    def to_dict(self) -> dict:
        return {'status': self.status, 'bound': self.bound}


@dataclass
class SolverStats:
    nodes: int = 0
    lp_solves: int = 0
    cuts: int = 0
    tie_break_solves: int = 0
    # false when a limit cut the tie-break short
    canonical: bool = True
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        # wall time is logged, never written, so output files stay reproducible
        return {'nodes': self.nodes, 'lp_solves': self.lp_solves, 'cuts': self.cuts,
                'tie_break_solves': self.tie_break_solves, 'canonical': self.canonical}


@dataclass(frozen=True)
class MapEstimate:
    dags: Tuple[Dag, ...]
    network: SubjectNetwork
    objective: float
    certificate: Certificate
    stats: SolverStats = field(default_factory=SolverStats, compare=False)
    prototypes: Tuple[Dag, ...] = ()

    @property
    def all_dags(self) -> Tuple[Dag, ...]:
        return tuple(self.dags) + tuple(self.prototypes)

    def to_dict(self, subjects: Optional[Sequence[str]] = None) -> dict:
        data = {
            'dags': [g.to_json() for g in self.dags],
            'network': self.network.to_json(),
            'objective': self.objective,
            'certificate': self.certificate.to_dict(),
            'stats': self.stats.to_dict(),
        }
        if subjects is not None:
            data['subjects'] = list(subjects)
        if self.prototypes:
            data['prototypes'] = [g.to_json() for g in self.prototypes]
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'MapEstimate':
        try:
            cert = data['certificate']
            stats = {k: v for k, v in data.get('stats', {}).items() if k in SolverStats.__dataclass_fields__}
            return cls(
                dags=tuple(Dag.from_json(g) for g in data['dags']),
                network=SubjectNetwork.from_json(data['network']),
                objective=float(data['objective']),
                certificate=Certificate(cert['status'], float(cert['bound'])),
                stats=SolverStats(**stats),
                prototypes=tuple(Dag.from_json(g) for g in data.get('prototypes', [])),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"malformed solution record: {e}")


@dataclass
class _Outcome:
    x: Optional[np.ndarray]
    value: float
    bound: float
    exhausted: bool


class BranchAndCutSolver:
    """
    Best-first branch-and-bound on LP relaxations (HiGHS dual simplex),
    with cluster constraints separated at every node. Branching is on the
    most fractional x/z variable, ties to the smallest column.
    """

    def __init__(self, model: IlpModel, limits: Optional[SolverLimits] = None):
        self.model = model
        self.limits = limits or SolverLimits()
        self.cut_pool: List[Tuple[int, int]] = []
        self._cut_keys = set()
        self._cut_matrix = None
        self.stats = SolverStats()
        self._deadline = None

    # -- LP plumbing -------------------------------------------------------

    def _add_cuts(self, clusters) -> int:
        added = []
        for slot, subset in clusters:
            if (slot, subset) in self._cut_keys:
                continue
            self._cut_keys.add((slot, subset))
            self.cut_pool.append((slot, subset))
            added.append(self.model.cluster_cut_row(slot, subset))
        if added:
            rows = [np.full(len(c), r) for r, c in enumerate(added)]
            block = sparse.csr_matrix(
                (-np.ones(sum(len(c) for c in added)), (np.concatenate(rows), np.concatenate(added))),
                shape=(len(added), self.model.n_vars))
            self._cut_matrix = block if self._cut_matrix is None else sparse.vstack(
                [self._cut_matrix, block], format='csr')
            self.stats.cuts += len(added)
        return len(added)

    def _lp(self, c, lb, ub, extra_a, extra_b):
        m = self.model
        pieces = [(m.a_ub, m.b_ub)]
        if self._cut_matrix is not None:
            pieces.append((self._cut_matrix, -np.ones(self._cut_matrix.shape[0])))
        if extra_a is not None:
            pieces.append((extra_a, extra_b))
        pieces = [(a, b) for a, b in pieces if a.shape[0]]
        a_ub = sparse.vstack([a for a, _ in pieces], format='csr') if pieces else None
        b_ub = np.concatenate([b for _, b in pieces]) if pieces else None
        self.stats.lp_solves += 1
        res = linprog(-c, A_ub=a_ub, b_ub=b_ub, A_eq=m.a_eq, b_eq=m.b_eq,
                      bounds=np.column_stack([lb, ub]), method='highs-ds', options=LP_OPTIONS)
        if res.status == 2:
            return None, -math.inf
        if res.status != 0:
            raise SolverError(f"LP relaxation failed: {res.message}")
        return res.x, -res.fun

    def _solve_node(self, c, lb, ub, extra_a, extra_b, cutoff):
        """LP with cut loop; returns (x, value) or (None, -inf)"""
        for _ in range(MAX_CUT_ROUNDS):
            x, value = self._lp(c, lb, ub, extra_a, extra_b)
            if x is None or value <= cutoff:
                return x, value
            violated = self.model.violated_clusters(x)
            if not violated or not self._add_cuts(violated):
                return x, value
        logger.warning("Cut loop hit its round limit; branching on current relaxation")
        return x, value

    def _branch_var(self, x) -> Optional[int]:
        frac = np.minimum(x, 1.0 - x)
        frac[~self.model.branchable] = 0.0
        j = int(np.argmax(frac))
        return j if frac[j] > INTEGRALITY_TOLERANCE else None

    def _out_of_budget(self) -> bool:
        if self._deadline is not None and time.perf_counter() > self._deadline:
            return True
        return self.limits.node_limit is not None and self.stats.nodes >= self.limits.node_limit

    # -- search ------------------------------------------------------------

    def _search(self, c, lb, ub, extra_a=None, extra_b=None, incumbent=None,
                prune_tol=1e-9, first_feasible=False, use_gap=True) -> _Outcome:
        m = self.model
        best_x, best_val = (incumbent if incumbent is not None else (None, -math.inf))
        counter = itertools.count()
        heap = [(-math.inf, next(counter), ())]
        bound_open = math.inf

        while heap:
            neg_bound, _, fixings = heapq.heappop(heap)
            parent_bound = -neg_bound
            if parent_bound <= best_val + prune_tol:
                heap.clear()
                break
            if self._out_of_budget() or (use_gap and self.limits.gap > 0 and best_x is not None
                                         and parent_bound - best_val <= self.limits.gap):
                heapq.heappush(heap, (neg_bound, next(counter), fixings))
                break
            self.stats.nodes += 1
            node_lb, node_ub = lb.copy(), ub.copy()
            for col, val in fixings:
                node_lb[col] = node_ub[col] = val

            x, value = self._solve_node(c, node_lb, node_ub, extra_a, extra_b, best_val + prune_tol)
            if x is None or value <= best_val + prune_tol:
                continue
            col = self._branch_var(x)
            if col is None:
                dags, network = m.decode(np.round(x))
                point = m.encode_point(dags, network)
                point_val = float(c @ point)
                if point_val > best_val:
                    best_x, best_val = point, point_val
                    logger.debug(f"Incumbent {best_val:.10g} at node {self.stats.nodes}, bound {value:.10g}")
                if first_feasible:
                    heap.clear()
                    break
                continue
            for val in (1.0, 0.0):
                heapq.heappush(heap, (-value, next(counter), fixings + ((col, val),)))

        exhausted = not heap
        if exhausted:
            bound_open = best_val
        else:
            bound_open = max(best_val, max(-h[0] for h in heap))
        return _Outcome(best_x, best_val, bound_open, exhausted)

    # -- public ------------------------------------------------------------

    def solve(self) -> MapEstimate:
        m = self.model
        tol = self.limits.tolerance
        started = time.perf_counter()
        if self.limits.time_limit is not None:
            self._deadline = started + self.limits.time_limit

        empty = [Dag.empty(m.p) for _ in range(m.n_slots)]
        start_point = m.encode_point(empty, m.canonical_network(empty, tol))
        outcome = self._search(m.f, m.lb, m.ub, incumbent=(start_point, m.objective_value(start_point)),
                               prune_tol=tol)
        if outcome.x is None:
            raise SolverError("no feasible point found: encoding is inconsistent")

        proven = outcome.exhausted or outcome.bound - outcome.value <= tol
        x = outcome.x
        if proven:
            x = self._tie_break(x, outcome.value)
        dags, _ = m.decode(x)
        network = m.canonical_network(dags, tol)
        objective = m.posterior(dags, network)
        if proven:
            certificate = Certificate(PROVEN_OPTIMAL, objective)
        else:
            certificate = Certificate(GAP, max(outcome.bound, objective))
        self.stats.wall_time = time.perf_counter() - started
        logger.info(f"{m.mode.kind} solve: objective {objective:.10g}, {certificate.label()}, "
                    f"{self.stats.nodes} nodes, {self.stats.cuts} cuts, {self.stats.wall_time:.3f}s")
        return _estimate(m, dags, network, objective, certificate, self.stats)

    def _tie_break(self, x_best, v_star) -> np.ndarray:
        """
        Canonical optimum among all x with objective >= v_star - tolerance.
        The re-solves share the time and node budget of the main search;
        once it is spent the proven incumbent is returned as found.
        """
        m = self.model
        tol = self.limits.tolerance
        n = m.n_vars
        floor_row = sparse.csr_matrix(-m.f.reshape(1, -1))
        floor_rhs = np.array([-(v_star - tol)])

        # uniqueness: any other x block reaching the optimum?
        ones = np.flatnonzero(x_best[:m.n_x] > 0.5)
        nogood = np.zeros(n)
        nogood[ones] = 1.0
        self.stats.tie_break_solves += 1
        other = self._search(m.f, m.lb, m.ub, sparse.vstack([floor_row, sparse.csr_matrix(nogood)], format='csr'),
                             np.concatenate([floor_rhs, [len(ones) - 1.0]]), first_feasible=True,
                             use_gap=False)
        if other.x is None:
            if not other.exhausted:
                return self._uncanonical(x_best)
            return x_best

        edges = np.zeros(n)
        edges[:m.n_x] = [bin(int(mask)).count('1') for mask in m.x_mask]
        self.stats.tie_break_solves += 1
        fewest = self._search(-edges, m.lb, m.ub, floor_row, floor_rhs,
                              incumbent=(x_best, float(-edges @ x_best)), prune_tol=0.5, use_gap=False)
        if not fewest.exhausted:
            return self._uncanonical(x_best)
        x_cur = fewest.x
        n_edges = float(edges @ x_cur)
        extra_a = sparse.vstack([floor_row, sparse.csr_matrix(edges)], format='csr')
        extra_b = np.concatenate([floor_rhs, [n_edges + 0.5]])

        lb = m.lb.copy()
        for (s, i), (start, stop) in m.x_ranges.items():
            chosen = start + int(np.argmax(x_cur[start:stop]))
            if m.x_mask[chosen] != 0:
                weights = np.zeros(n)
                weights[start:stop] = m.x_mask[start:stop]
                self.stats.tie_break_solves += 1
                smallest = self._search(-weights, lb, m.ub, extra_a, extra_b,
                                        incumbent=(x_cur, float(-weights @ x_cur)), prune_tol=0.5,
                                        use_gap=False)
                if not smallest.exhausted:
                    return self._uncanonical(x_best)
                x_cur = smallest.x
                chosen = start + int(np.argmax(x_cur[start:stop]))
            lb[chosen] = 1.0
        logger.debug(f"Tie-break settled on {int(n_edges)} edges after {self.stats.tie_break_solves} solves")
        return x_cur

    def _uncanonical(self, x_best) -> np.ndarray:
        self.stats.canonical = False
        logger.warning(f"Budget spent during tie-break after {self.stats.tie_break_solves} solves; "
                       f"returning the optimum as found")
        return x_best


def _estimate(model: IlpModel, dags, network, objective, certificate, stats) -> MapEstimate:
    k = model.k_subjects
    return MapEstimate(dags=tuple(dags[:k]), network=network, objective=objective,
                       certificate=certificate, stats=stats, prototypes=tuple(dags[k:]))


def solve(model: IlpModel, limits: Optional[SolverLimits] = None) -> MapEstimate:
    return BranchAndCutSolver(model, limits).solve()


def fit(tables: Sequence[ScoreTable], hp: Hyperparameters, mode: SolveMode,
        limits: Optional[SolverLimits] = None, backend: str = 'ilp',
        prototype_prior: str = 'multiplicity') -> MapEstimate:
    if backend == 'ilp':
        return solve(encode(tables, hp, mode, prototype_prior), limits)
    if backend == 'brute':
        budget = (limits or SolverLimits()).brute_force_budget
        return solve_brute_force(tables, hp, mode, budget=budget, prototype_prior=prototype_prior,
                                 tolerance=(limits or SolverLimits()).tolerance)
    raise InputError(f"unknown backend {backend!r}")


def independent_estimates(tables: Sequence[ScoreTable], d_max: Optional[int] = None,
                          limits: Optional[SolverLimits] = None) -> List[Dag]:
    """Per-subject MAP DAGs (single-subject solves)"""
    out = []
    for table in tables:
        hp = Hyperparameters(d_max=table.d_max if d_max is None else d_max)
        model = encode([table], hp, SolveMode.fixed(SubjectNetwork.empty(1)))
        out.append(solve(model, limits).dags[0])
    return out


# -- exhaustive backend ---------------------------------------------------

def _along(vec, axis, ndim):
    shape = [1] * ndim
    shape[axis] = len(vec)
    return vec.reshape(shape)


def _place(mat, axis_a, axis_b, ndim):
    """Broadcastable view of an |G| x |G| matrix indexed by axes a < b"""
    shape = [1] * ndim
    shape[axis_a] = mat.shape[0]
    shape[axis_b] = mat.shape[1]
    return mat.reshape(shape)


def _term(vecs_or_mat, axes, lead, idx, ndim):
    """
    Slice a 1- or 2-axis term for a block whose leading axes are fixed to
    idx. Two-axis terms always have a < b, so b is leading only if a is.
    """
    if len(axes) == 1:
        (a,) = axes
        return vecs_or_mat[idx[a]] if a < lead else _along(vecs_or_mat, a - lead, ndim)
    a, b = axes
    mat = vecs_or_mat
    if b < lead:
        return mat[idx[a], idx[b]]
    if a < lead:
        return _along(mat[idx[a], :], b - lead, ndim)
    return _place(mat, a - lead, b - lead, ndim)


def solve_brute_force(tables: Sequence[ScoreTable], hp: Hyperparameters, mode: SolveMode,
                      budget: int = 200_000_000, prototype_prior: str = 'multiplicity',
                      tolerance: float = 1e-9) -> MapEstimate:
    """
    Exhaustive optimum over every DAG tuple; networks are optimized in
    closed form per tuple (pairs decouple once the DAGs are fixed).
    """
    started = time.perf_counter()
    model = encode(tables, hp, mode, prototype_prior)
    dags = list(enumerate_dags(model.p, model.d_max))
    n_dags = len(dags)
    n_slots = model.n_slots
    total = n_dags ** n_slots
    if total > budget:
        raise CapacityError(f"brute force needs {total} configurations, budget is {budget}")

    adj = np.array([g.adjacency().ravel() for g in dags], dtype=float)
    edges = adj.sum(axis=1)
    slot_scores = [np.array([sum(t.score(i, mask) for i, mask in enumerate(g.parents, start=1)) for g in dags])
                   for t in model.tables]
    mismatch = np.abs(adj[:, None, :] - adj[None, :, :]) if model.pairs else None

    def penalty(idx):
        return mismatch @ model.lambda_mats[idx].ravel()

    pair_terms = []
    max_groups = []
    if mode.kind in (FIXED, JOINT):
        for idx, (k, l) in enumerate(model.pairs):
            value = hp.eta_for(k, l) - penalty(idx)
            if mode.kind == JOINT:
                value = np.where(value > tolerance, value, 0.0)
            pair_terms.append(((k - 1, l - 1), value))
    else:
        for k in range(1, model.k_subjects + 1):
            max_groups.append([((k - 1, c - 1), -penalty(model.pairs.index((k, c))))
                               for c in range(model.k_subjects + 1, n_slots + 1)])

    lead = 0
    while n_dags ** (n_slots - lead) > BRUTE_FORCE_BLOCK and lead < n_slots:
        lead += 1
    ndim = n_slots - lead

    def blocks():
        for idx in itertools.product(range(n_dags), repeat=lead):
            obj = 0.0
            n_edges = 0.0
            for s in range(n_slots):
                obj = obj + _term(slot_scores[s], (s,), lead, idx, ndim)
                n_edges = n_edges + _term(edges, (s,), lead, idx, ndim)
            for axes, mat in pair_terms:
                obj = obj + _term(mat, axes, lead, idx, ndim)
            for group in max_groups:
                best = None
                for axes, mat in group:
                    term = _term(mat, axes, lead, idx, ndim)
                    best = term if best is None else np.maximum(best, term)
                obj = obj + best
            shape = (n_dags,) * ndim
            yield idx, np.broadcast_to(obj, shape), np.broadcast_to(n_edges, shape)

    v_star = max(float(np.max(obj)) for _, obj, _ in blocks())
    best_key = None
    for idx, obj, n_edges in blocks():
        tied = obj >= v_star - tolerance
        if not tied.any():
            continue
        fewest = float(np.min(n_edges[tied]))
        flat = int(np.flatnonzero((tied & (n_edges == fewest)).ravel())[0])
        key = (fewest, idx, flat)
        if best_key is None or key < best_key:
            best_key = key
    fewest, idx, flat = best_key
    trailing = np.unravel_index(flat, (n_dags,) * ndim) if ndim else ()
    chosen = [dags[int(g)] for g in tuple(idx) + tuple(trailing)]

    network = model.canonical_network(chosen, tolerance)
    objective = model.posterior(chosen, network)
    stats = SolverStats(nodes=total, wall_time=time.perf_counter() - started)
    logger.info(f"Brute force over {total} configurations: objective {objective:.10g}")
    return _estimate(model, chosen, network, objective, Certificate(PROVEN_OPTIMAL, objective), stats)
