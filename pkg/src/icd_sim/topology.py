"""Server graphs, doubly stochastic consensus matrices and client link schedules."""

from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations

import numpy as np

from .domain import ConfigurationError

GRAPH_KINDS = ("path", "cycle", "star", "complete", "custom")


class TopologyError(ConfigurationError):
    pass


class DisconnectedGraph(TopologyError):
    pass


class KappaTooLarge(TopologyError):
    pass


class ConsensusMatrixError(TopologyError):
    pass


@dataclass(frozen=True)
class ServerGraph:
    """Undirected server graph; `edges` holds pairs (I, J) with I < J, 0-based."""

    S: int
    edges: frozenset
    kind: str = "custom"

    def __post_init__(self):
        if self.S < 1:
            raise TopologyError("a server graph needs at least one server")
        norm = set()
        for a, b in self.edges:
            a, b = int(a), int(b)
            if a == b or not (0 <= a < self.S and 0 <= b < self.S):
                raise TopologyError(f"invalid edge ({a}, {b}) for {self.S} servers")
            norm.add((min(a, b), max(a, b)))
        object.__setattr__(self, "edges", frozenset(norm))
        if self.kind not in GRAPH_KINDS:
            raise TopologyError(f"unknown graph kind {self.kind!r}")
        if not self.is_connected():
            raise DisconnectedGraph(f"server graph ({self.kind}, S={self.S}) is not connected")

    @classmethod
    def path(cls, S):
        return cls(S, frozenset((i, i + 1) for i in range(S - 1)), "path")

    @classmethod
    def cycle(cls, S):
        edges = {(i, i + 1) for i in range(S - 1)}
        if S > 2:
            edges.add((0, S - 1))
        return cls(S, frozenset(edges), "cycle")

    @classmethod
    def star(cls, S, hub=0):
        return cls(S, frozenset((hub, j) for j in range(S) if j != hub), "star")

    @classmethod
    def complete(cls, S):
        return cls(S, frozenset(combinations(range(S), 2)), "complete")

    @classmethod
    def from_kind(cls, kind, S, hub=0, edges=None):
        if kind == "custom":
            return cls(S, frozenset(map(tuple, edges or ())), "custom")
        if kind == "star":
            return cls.star(S, hub)
        try:
            return getattr(cls, kind)(S)
        except AttributeError:
            raise TopologyError(f"unknown graph kind {kind!r}") from None

    def adjacency(self):
        A = np.zeros((self.S, self.S))
        for a, b in self.edges:
            A[a, b] = A[b, a] = 1.0
        return A

    def degrees(self):
        return self.adjacency().sum(axis=1)

    def is_connected(self):
        nbrs = {i: set() for i in range(self.S)}
        for a, b in self.edges:
            nbrs[a].add(b)
            nbrs[b].add(a)
        seen, todo = {0}, deque([0])
        while todo:
            for j in nbrs[todo.popleft()] - seen:
                seen.add(j)
                todo.append(j)
        return len(seen) == self.S


@dataclass(frozen=True)
class ConsensusMatrix:
    B: np.ndarray
    kappa: float
    graph: ServerGraph | None = None

    @property
    def S(self):
        return self.B.shape[0]

    @property
    def nu(self):
        return scrambling_coefficient(self.B)


def validate_consensus_matrix(B, graph=None, kappa=None, tol=1e-12):
    """Check nonnegativity, the neighbour floor and double stochasticity of `B`."""
    B = np.asarray(B, dtype=np.float64)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise ConsensusMatrixError(f"consensus matrix must be square, got shape {B.shape}")
    if np.any(B < -tol):
        I, J = np.argwhere(B < -tol)[0]
        raise ConsensusMatrixError(f"consensus matrix has a negative entry at ({I + 1}, {J + 1})")
    if graph is not None:
        A = graph.adjacency()
        floor = kappa if kappa is not None else 0.0
        for I, J in np.argwhere(A > 0):
            if B[I, J] < floor - tol or B[I, J] <= 0:
                raise ConsensusMatrixError(
                    f"neighbour floor rule violated: B[{I + 1},{J + 1}]={B[I, J]} < kappa={floor}"
                )
        off = (A == 0) & ~np.eye(B.shape[0], dtype=bool)
        if np.any(np.abs(B[off]) > tol):
            I, J = np.argwhere(off & (np.abs(B) > tol))[0]
            raise ConsensusMatrixError(f"non-neighbours {I + 1} and {J + 1} have weight {B[I, J]}")
    rows = B.sum(axis=1)
    bad = np.flatnonzero(np.abs(rows - 1.0) > tol)
    if bad.size:
        raise ConsensusMatrixError(
            f"row-stochastic rule violated: row {bad[0] + 1} sums to {rows[bad[0]]:.12g}"
        )
    cols = B.sum(axis=0)
    bad = np.flatnonzero(np.abs(cols - 1.0) > tol)
    if bad.size:
        raise ConsensusMatrixError(
            f"column-stochastic rule violated: column {bad[0] + 1} sums to {cols[bad[0]]:.12g}"
        )
    return B


def build_doubly_stochastic(graph, kappa):
    """Uniform edge weight `kappa` with the diagonal absorbing the remainder."""
    if not graph.is_connected():
        raise DisconnectedGraph("server graph is not connected")
    if not kappa > 0:
        raise TopologyError(f"kappa must be positive, got {kappa}")
    A = graph.adjacency()
    # exact remainder from the decimal kappa, so 1 - 3 * 0.2 gives 0.4 and not 0.3999...
    k_exact = Fraction(repr(float(kappa)))
    diag = np.array([float(1 - int(d) * k_exact) for d in A.sum(axis=1)])
    if np.any(diag < -1e-15):
        raise KappaTooLarge(
            f"kappa={kappa} exceeds 1/max_degree={1.0 / A.sum(axis=1).max():.6g}; diagonal would be negative"
        )
    B = kappa * A + np.diag(np.maximum(diag, 0.0))
    validate_consensus_matrix(B, graph, kappa)
    return ConsensusMatrix(B, float(kappa), graph)


def graph_from_support(B, tol=0.0):
    B = np.asarray(B, dtype=np.float64)
    S = B.shape[0]
    edges = {(i, j) for i in range(S) for j in range(i + 1, S) if B[i, j] > tol or B[j, i] > tol}
    return ServerGraph(S, frozenset(edges), "custom")


def consensus_from_matrix(B, tol=1e-12):
    """Wrap an explicit matrix, inferring the graph from its support."""
    B = validate_consensus_matrix(B, tol=tol)
    graph = graph_from_support(B)
    positive = B[B > 0]
    return ConsensusMatrix(B.copy(), float(positive.min()), graph)


def scrambling_coefficient(B):
    """Dobrushin coefficient ``1 - min_{I,G} sum_J min(B[I,J], B[G,J])``."""
    B = np.asarray(B, dtype=np.float64)
    S = B.shape[0]
    if S < 2:
        return 0.0
    overlaps = [np.minimum(B[i], B[g]).sum() for i, g in combinations(range(S), 2)]
    return float(1.0 - min(overlaps))


def check_scrambling(B):
    """True iff every pair of rows shares a column where both are positive."""
    B = np.asarray(B, dtype=np.float64)
    pos = B > 0
    return all(np.any(pos[i] & pos[g]) for i, g in combinations(range(B.shape[0]), 2))


@dataclass(frozen=True)
class ClientLinkSchedule:
    """Per-iteration server/client links, boolean ``(T, S, C)``, repeated with period T."""

    links: np.ndarray

    def __post_init__(self):
        links = np.asarray(self.links, dtype=bool)
        if links.ndim == 2:
            links = links[None]
        if links.ndim != 3 or links.shape[0] < 1:
            raise TopologyError(f"link schedule must have shape (T, S, C), got {links.shape}")
        links.flags.writeable = False
        object.__setattr__(self, "links", links)

    @classmethod
    def full(cls, S, C):
        return cls(np.ones((1, S, C), dtype=bool))

    @classmethod
    def from_pairs(cls, S, C, steps):
        """`steps` is a list, one entry per iteration, of [server, client] pairs (0-based)."""
        links = np.zeros((len(steps), S, C), dtype=bool)
        for t, pairs in enumerate(steps):
            for J, h in pairs:
                links[t, int(J), int(h)] = True
        return cls(links)

    @property
    def period(self):
        return self.links.shape[0]

    def at(self, t):
        return self.links[t % self.period]

    def to_pairs(self):
        return [[[int(J), int(h)] for J, h in np.argwhere(step)] for step in self.links]


def check_delta_connectivity(sched, delta):
    """True iff every client has a link within every window of `delta` iterations."""
    T = sched.period
    span = T + delta - 1  # covers every distinct window of the periodic schedule
    seen = np.stack([sched.at(t).any(axis=0) for t in range(span)])  # (span, C)
    for start in range(T):
        if not np.all(seen[start:start + delta].any(axis=0)):
            return False
    return True
