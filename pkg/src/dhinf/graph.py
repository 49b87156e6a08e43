"""Directed interconnection topologies and their pattern matrices.

Node indices are 1-based throughout. Edge `(i, k)` means node ``i`` is
influenced by node ``k``. Neighbor lists and edge orderings are always
ascending so that stacked channel vectors are reproducible across runs
and across agents.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Topology",
    "PatternMatrix",
    "EdgeChannel",
    "TopologyError",
    "mirror",
    "symmetrize",
    "neighbors",
    "pattern",
    "spectrum",
]

NORMALITY_RTOL = 1e-9


class TopologyError(ValueError):
    """Raised for invalid graph structure."""


def _check_edges(n_nodes, edges):
    seen = set()
    for e in edges:
        if len(e) != 2:
            raise TopologyError(f"edge {e!r} is not a pair")
        i, k = e
        if i == k:
            raise TopologyError(f"self-loop ({i},{k}) not allowed")
        if not (1 <= i <= n_nodes and 1 <= k <= n_nodes):
            raise TopologyError(f"edge ({i},{k}) out of range 1..{n_nodes}")
        if (i, k) in seen:
            raise TopologyError(f"duplicate edge ({i},{k})")
        seen.add((i, k))


def _is_connected(n_nodes, edges):
    if n_nodes == 1:
        return True
    adj = {i: set() for i in range(1, n_nodes + 1)}
    for i, k in edges:
        adj[i].add(k)
        adj[k].add(i)
    stack, visited = [1], {1}
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in visited:
                visited.add(v)
                stack.append(v)
    return len(visited) == n_nodes


@dataclass(frozen=True)
class Topology:
    """Directed graph over nodes 1..n_nodes, connected as an undirected graph.

    Edges are stored sorted ascending-lexicographic; no self-loops and no
    duplicates. Disconnected inputs are rejected at construction because the
    distributed synthesis assumes a connected communication graph. Derived
    graphs that are allowed to be disconnected (mirror graphs) are built with
    ``require_connected=False``.
    """

    n_nodes: int
    edges: tuple = field(default=())
    require_connected: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        if self.n_nodes < 1:
            raise TopologyError("need at least one node")
        edges = tuple(sorted((int(i), int(k)) for i, k in self.edges))
        _check_edges(self.n_nodes, edges)
        if self.require_connected and not _is_connected(self.n_nodes, edges):
            raise TopologyError("graph is not connected (as undirected)")
        object.__setattr__(self, "edges", edges)

    def has_edge(self, i, k):
        return (i, k) in set(self.edges)

    @property
    def n_edges(self):
        return len(self.edges)


@dataclass(frozen=True)
class PatternMatrix:
    """Square matrix whose support encodes a topology (zero diagonal)."""

    n: int
    entries: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=float)
        if m.shape != (self.n, self.n):
            raise TopologyError(f"pattern must be {self.n}x{self.n}")
        if np.any(np.diag(m) != 0.0):
            raise TopologyError("pattern matrix must have zero diagonal")
        object.__setattr__(self, "entries", m)


@dataclass(frozen=True)
class EdgeChannel:
    """Channel dimensions of one directed edge.

    ``dim_in`` is the width of the incoming signal p_ik of node i from k,
    ``dim_out`` the width of the outgoing signal q_ik of node i toward k.
    A zero dimension marks a padding channel introduced by mirroring.
    """

    edge: tuple
    dim_in: int
    dim_out: int

    def __post_init__(self):
        if self.dim_in < 0 or self.dim_out < 0:
            raise TopologyError("channel dims must be >= 0")


def mirror(t: Topology) -> Topology:
    """Edges that complete ``t`` to an undirected graph (reversals only)."""
    present = set(t.edges)
    rev = tuple((k, i) for i, k in t.edges if (k, i) not in present)
    return Topology(t.n_nodes, rev, require_connected=False)


def symmetrize(t: Topology) -> Topology:
    """Union of ``t`` with its mirror; edge (i,k) present iff (k,i) is."""
    sym = set(t.edges)
    sym.update((k, i) for i, k in t.edges)
    return Topology(t.n_nodes, tuple(sorted(sym)),
                    require_connected=t.require_connected)


def neighbors(t: Topology, i: int) -> list:
    """Ascending list of nodes adjacent to ``i`` in either direction."""
    if not (1 <= i <= t.n_nodes):
        raise TopologyError(f"node {i} out of range 1..{t.n_nodes}")
    out = set()
    for a, b in t.edges:
        if a == i:
            out.add(b)
        elif b == i:
            out.add(a)
    return sorted(out)


def pattern(t: Topology, weights=None) -> PatternMatrix:
    """Pattern matrix of ``t``: weight at (i,k) per edge, zeros elsewhere.

    ``weights`` maps edges to scalars and defaults to 1 on every edge.
    """
    m = np.zeros((t.n_nodes, t.n_nodes))
    present = set(t.edges)
    if weights is not None:
        for e in weights:
            if tuple(e) not in present:
                raise TopologyError(f"weight given for absent edge {e}")
    for i, k in t.edges:
        w = 1.0 if weights is None else float(weights.get((i, k), 1.0))
        m[i - 1, k - 1] = w
    return PatternMatrix(t.n_nodes, m)


def spectrum(p: PatternMatrix):
    """Eigenvalues of the pattern plus a normality flag.

    Normality: ||A A^T - A^T A||_F <= 1e-9 * max(1, ||A||_F^2).
    """
    a = p.entries
    eig = np.linalg.eigvals(a)
    comm = a @ a.T - a.T @ a
    normal = np.linalg.norm(comm, "fro") <= NORMALITY_RTOL * max(
        1.0, np.linalg.norm(a, "fro") ** 2
    )
    return eig, bool(normal)
