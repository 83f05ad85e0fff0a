"""Directed graphs with the rootedness and composition checks used by the estimator.

Nodes are labelled ``1..n``. An edge ``(j, i)`` is a link leaving ``j`` and
pointing toward ``i`` (agent ``i`` receives from agent ``j``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

Edge = tuple[int, int]


@dataclass(frozen=True)
class Digraph:
    n: int
    edges: frozenset[Edge] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"node count must be positive, got {self.n}")
        edges = frozenset((int(j), int(i)) for j, i in self.edges)
        for j, i in edges:
            if not (1 <= j <= self.n and 1 <= i <= self.n):
                raise ValueError(f"edge {(j, i)} outside nodes 1..{self.n}")
        object.__setattr__(self, "edges", edges)

    @property
    def nodes(self) -> range:
        return range(1, self.n + 1)

    def adjacency(self) -> np.ndarray:
        """Boolean matrix ``A[j-1, i-1]`` true iff ``(j, i)`` is an edge."""
        a = np.zeros((self.n, self.n), dtype=bool)
        for j, i in self.edges:
            a[j - 1, i - 1] = True
        return a

    @classmethod
    def from_adjacency(cls, a: np.ndarray) -> "Digraph":
        js, is_ = np.nonzero(a)
        return cls(a.shape[0], frozenset(zip((js + 1).tolist(), (is_ + 1).tolist())))

    def in_neighbors(self, i: int) -> list[int]:
        return sorted(j for j, k in self.edges if k == i and j != i)

    def out_neighbors(self, j: int) -> list[int]:
        return sorted(i for k, i in self.edges if k == j and i != j)

    def with_self_loops(self) -> "Digraph":
        return Digraph(self.n, self.edges | {(i, i) for i in self.nodes})


@dataclass(frozen=True)
class WeightedDigraph:
    """Digraph with adjacency weights ``a_ij > 0`` on each edge ``(j, i)``."""

    base: Digraph
    weights: np.ndarray  # a[i-1, j-1] = a_ij, the weight of edge (j, i)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        n = self.base.n
        if w.shape != (n, n):
            raise ValueError(f"weights must be {n}x{n}, got {w.shape}")
        if np.any(np.diag(w) != 0.0):
            raise ValueError("a_ii must be zero")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        support = {(j + 1, i + 1) for i, j in zip(*np.nonzero(w))}
        if support != {(j, i) for j, i in self.base.edges if j != i}:
            raise ValueError("positive weights must coincide with the edge set")
        if any(j == i for j, i in self.base.edges):
            raise ValueError("weighted digraphs carry no self-loops")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_edges(
        cls, n: int, edges: Iterable[tuple[int, int, float]], normalize: bool = False
    ) -> "WeightedDigraph":
        """Build from ``(j, i, a_ij)`` triples; ``normalize`` rescales rows so kappa_i = 1."""
        w = np.zeros((n, n))
        es = set()
        for j, i, a in edges:
            if a <= 0:
                raise ValueError(f"edge {(j, i)} has nonpositive weight {a}")
            if (j, i) in es:
                raise ValueError(f"duplicate edge {(j, i)}")
            es.add((j, i))
            w[i - 1, j - 1] = a
        if normalize:
            rows = w.sum(axis=1)
            nz = rows > 0
            w[nz] /= rows[nz, None]
        return cls(Digraph(n, frozenset(es)), w)

    @property
    def n(self) -> int:
        return self.base.n

    def kappa(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    def sharp_nodes(self) -> list[int]:
        """Agents with at least one incoming link (kappa_i != 0)."""
        return [i + 1 for i, k in enumerate(self.kappa()) if k != 0.0]

    def edge_list(self) -> list[tuple[int, int, float]]:
        return sorted((j, i, float(self.weights[i - 1, j - 1])) for j, i in self.base.edges)


def laplacian(g: WeightedDigraph) -> np.ndarray:
    w = np.asarray(g.weights, dtype=float)
    return np.diag(w.sum(axis=1)) - w


def reachable_from(g: Digraph, r: int) -> set[int]:
    """Nodes reachable from ``r`` along directed edges (``r`` itself included)."""
    succ: dict[int, list[int]] = {k: [] for k in g.nodes}
    for j, i in g.edges:
        succ[j].append(i)
    seen = {r}
    stack = [r]
    while stack:
        u = stack.pop()
        for w in succ[u]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen


def roots(g: Digraph) -> set[int]:
    """Every node with a directed path to all other nodes."""
    return {r for r in g.nodes if len(reachable_from(g, r)) == g.n}


def is_rooted(g: Digraph) -> bool:
    return bool(roots(g))


def compose(g1: Digraph, g2: Digraph) -> Digraph:
    """``g1 ∘ g2``: ``(j, i)`` present iff ``(j, l)`` in g2 and ``(l, i)`` in g1 for some l."""
    if g1.n != g2.n:
        raise ValueError(f"node counts differ: {g1.n} vs {g2.n}")
    a = g2.adjacency().astype(np.int64) @ g1.adjacency().astype(np.int64)
    return Digraph.from_adjacency(a > 0)


def compose_sequence(seq: Sequence[Digraph]) -> Digraph:
    """``G_q ∘ ... ∘ G_1`` for ``seq = [G_1, ..., G_q]``."""
    if not seq:
        raise ValueError("empty graph sequence")
    out = seq[0]
    for g in seq[1:]:
        out = compose(g, out)
    return out


def is_jointly_rooted(seq: Sequence[Digraph]) -> bool:
    return is_rooted(compose_sequence(seq))


def estimator_graph(g: Digraph, leaders: Iterable[int]) -> Digraph:
    """Interaction graph of the velocity estimator.

    Incoming arcs of leaders are removed, every leader is linked to every other
    leader, and a self-loop is added at each node.
    """
    lead = set(leaders)
    if not lead <= set(g.nodes):
        raise ValueError(f"leaders {sorted(lead - set(g.nodes))} are not nodes")
    edges = {(j, i) for j, i in g.edges if i not in lead}
    edges |= {(a, b) for a in lead for b in lead}
    edges |= {(i, i) for i in g.nodes}
    return Digraph(g.n, frozenset(edges))


# Illustrative ten-node network rooted at nodes 1 and 4. It is a stand-in
# topology chosen for the bundled scenarios, not measured data.
STANDIN_EDGES: tuple[Edge, ...] = (
    (4, 1), (1, 4), (1, 2), (4, 3), (2, 3), (3, 5), (4, 5), (5, 6),
    (6, 7), (2, 7), (7, 8), (10, 8), (8, 9), (9, 10), (5, 10),
)


def standin_graph() -> WeightedDigraph:
    """Ten-node stand-in network with kappa_i = 1 for every agent."""
    return WeightedDigraph.from_edges(10, [(j, i, 1.0) for j, i in STANDIN_EDGES], normalize=True)
