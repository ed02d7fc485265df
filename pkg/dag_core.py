"""
DAG types for multidag.

Vertices are 1-based (1..P). A parent set is a bitmask where vertex j
sits on bit j-1, so ``parents[i-1] & (1 << (j-1))`` tests ``j -> i``.
"""

from dataclasses import dataclass
from typing import Iterable, Iterator, List, Optional, Sequence

import networkx as nx
import numpy as np

from errors import CapacityError, InputError

MAX_VERTICES = 64
MAX_ENUMERATION_VERTICES = 5


def mask_of(vertices: Iterable[int]) -> int:
    """Bitmask for a collection of 1-based vertices"""
    mask = 0
    for v in vertices:
        mask |= 1 << (int(v) - 1)
    return mask


def members(mask: int) -> List[int]:
    """1-based vertices in a bitmask, ascending"""
    out = []
    v = 1
    while mask:
        if mask & 1:
            out.append(v)
        mask >>= 1
        v += 1
    return out


def popcount(mask: int) -> int:
    return bin(mask).count('1')


def masks_acyclic(masks: Sequence[int]) -> bool:
    """Fast acyclicity test on parent bitmasks (peel off sources)"""
    remaining = (1 << len(masks)) - 1
    while remaining:
        peeled = 0
        for i in members(remaining):
            if masks[i - 1] & remaining == 0:
                peeled |= 1 << (i - 1)
        if not peeled:
            return False
        remaining &= ~peeled
    return True


def _parents_to_graph(p: int, masks: Sequence[int]) -> nx.DiGraph:
    graph = nx.DiGraph()
    graph.add_nodes_from(range(1, p + 1))
    for i, mask in enumerate(masks, start=1):
        for j in members(mask):
            graph.add_edge(j, i)
    return graph


def _normalize_parent_sets(parents) -> List[int]:
    """Accept bitmasks or iterables of vertices; validate indices"""
    p = len(parents)
    if p > MAX_VERTICES:
        raise InputError(f"P={p} exceeds the {MAX_VERTICES}-vertex limit")
    masks = []
    for i, ps in enumerate(parents, start=1):
        if isinstance(ps, (int, np.integer)):
            mask = int(ps)
            if mask < 0 or mask >> p:
                raise InputError(f"parent mask {mask} of vertex {i} references vertices outside 1..{p}")
        else:
            ps = list(ps)
            for j in ps:
                if not isinstance(j, (int, np.integer)) or j < 1 or j > p:
                    raise InputError(f"vertex {i} has parent {j!r} outside 1..{p}")
            mask = mask_of(ps)
        if mask & (1 << (i - 1)):
            raise InputError(f"vertex {i} lists itself as a parent")
        masks.append(mask)
    return masks


def is_acyclic(parents) -> bool:
    """True iff the parent sets induce no directed cycle"""
    masks = _normalize_parent_sets(parents)
    return nx.is_directed_acyclic_graph(_parents_to_graph(len(masks), masks))


def find_cycle(p: int, masks: Sequence[int]) -> Optional[List[int]]:
    """Vertices on one directed cycle, or None when acyclic"""
    try:
        cycle = nx.find_cycle(_parents_to_graph(p, masks))
    except nx.NetworkXNoCycle:
        return None
    return sorted({u for u, _ in cycle})


@dataclass(frozen=True)
class Dag:
    p: int
    parents: tuple

    def __post_init__(self):
        if self.p < 1:
            raise InputError("a DAG needs at least one vertex")
        if len(self.parents) != self.p:
            raise InputError(f"expected {self.p} parent sets, got {len(self.parents)}")
        masks = tuple(_normalize_parent_sets(self.parents))
        object.__setattr__(self, 'parents', masks)
        if not masks_acyclic(masks):
            raise InputError(f"parent sets contain a directed cycle: {find_cycle(self.p, masks)}")

    @classmethod
    def empty(cls, p: int) -> 'Dag':
        return cls(p, (0,) * p)

    @classmethod
    def from_edges(cls, p: int, edges: Iterable) -> 'Dag':
        """Build from (parent, child) pairs"""
        masks = [0] * p
        for j, i in edges:
            if not (1 <= j <= p and 1 <= i <= p):
                raise InputError(f"edge {j}->{i} outside 1..{p}")
            masks[i - 1] |= 1 << (j - 1)
        return cls(p, tuple(masks))

    def parent_set(self, i: int) -> List[int]:
        return members(self.parents[i - 1])

    def edges(self) -> List[tuple]:
        """(parent, child) pairs sorted by child then parent"""
        return [(j, i) for i in range(1, self.p + 1) for j in self.parent_set(i)]

    @property
    def n_edges(self) -> int:
        return sum(popcount(m) for m in self.parents)

    def max_in_degree(self) -> int:
        return max(popcount(m) for m in self.parents)

    def check_in_degree(self, d_max: int):
        if self.max_in_degree() > d_max:
            raise InputError(f"in-degree {self.max_in_degree()} exceeds d_max={d_max}")

    def adjacency(self) -> np.ndarray:
        """P x P 0/1 matrix, entry [j-1, i-1] = [j in parents(i)]"""
        adj = np.zeros((self.p, self.p), dtype=np.int8)
        for j, i in self.edges():
            adj[j - 1, i - 1] = 1
        return adj

    def to_json(self) -> dict:
        return {"p": self.p, "parents": [self.parent_set(i) for i in range(1, self.p + 1)]}

    @classmethod
    def from_json(cls, data: dict) -> 'Dag':
        try:
            p = int(data["p"])
            parents = [list(ps) for ps in data["parents"]]
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"malformed DAG record: {e}")
        return cls(p, tuple(parents))

    def to_dot(self, labels: Optional[Sequence[str]] = None, name: str = "G") -> str:
        """DOT text; ``labels[i-1]`` names vertex i"""
        lines = [f'digraph "{name}" {{']
        for i in range(1, self.p + 1):
            label = labels[i - 1] if labels else str(i)
            lines.append(f'  {i} [label="{label}"];')
        for j, i in self.edges():
            lines.append(f'  {j} -> {i};')
        lines.append('}')
        return "\n".join(lines) + "\n"

    def __str__(self):
        if not self.n_edges:
            return "{}"
        return ", ".join(f"{j}->{i}" for j, i in self.edges())


@dataclass(frozen=True)
class DagDistanceReport:
    shd: int
    xor_count: int


def distance(g1: Dag, g2: Dag) -> DagDistanceReport:
    """Structural Hamming distance (reversal = 1) and parent-membership XOR count"""
    if g1.p != g2.p:
        raise InputError(f"dimension mismatch: {g1.p} vs {g2.p} vertices")
    xor_count = sum(popcount(a ^ b) for a, b in zip(g1.parents, g2.parents))
    adj1, adj2 = g1.adjacency(), g2.adjacency()
    # per unordered pair, compare the edge state (none, a->b, b->a)
    upper = np.triu_indices(g1.p, k=1)
    differs = (adj1[upper] != adj2[upper]) | (adj1.T[upper] != adj2.T[upper])
    return DagDistanceReport(shd=int(differs.sum()), xor_count=xor_count)


def enumerate_dags(p: int, d_max: Optional[int] = None) -> Iterator[Dag]:
    """
    Every DAG on p vertices exactly once, in a fixed order (parent mask of
    vertex 1 ascending, then vertex 2, ...). Guarded to p <= 5.
    """
    if p < 1:
        raise InputError("p must be positive")
    if p > MAX_ENUMERATION_VERTICES:
        raise CapacityError(f"refusing to enumerate DAGs on {p} > {MAX_ENUMERATION_VERTICES} vertices")
    cap = p - 1 if d_max is None else min(d_max, p - 1)
    candidates = []
    for i in range(1, p + 1):
        own = 1 << (i - 1)
        candidates.append([m for m in range(1 << p) if not m & own and popcount(m) <= cap])

    masks = [0] * p

    def extend(i):
        if i == p:
            yield Dag(p, tuple(masks))
            return
        for m in candidates[i]:
            masks[i] = m
            # unassigned vertices have no parents yet, so a cycle here is final
            if masks_acyclic(masks):
                yield from extend(i + 1)
        masks[i] = 0

    yield from extend(0)
