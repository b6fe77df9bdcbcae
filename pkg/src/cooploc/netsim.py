"""Deterministic multi-hop communication layer.

Delivery is synchronous and lossless within a time step.  Every agent that
receives a flooded envelope re-broadcasts it exactly once, so the cost of a
flood is one broadcast per reached agent.
"""
from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping


class ConnectivityError(RuntimeError):
    """A message could not reach every agent it must reach."""


class EnvelopeKind(str, enum.Enum):
    ANNOUNCEMENT = "announcement"
    LANDMARK = "landmark"
    UPDATE = "update"
    CI_RELAY = "ci_relay"
    CI_FUSED = "ci_fused"
    REFACTOR = "refactor"


@dataclass(frozen=True)
class Envelope:
    kind: EnvelopeKind
    payload: bytes
    origin: int
    step: int
    hop_count: int = 0


class CommGraph:
    """Directed communication graph; an edge ``(i, j)`` means ``i`` can send to ``j``."""

    def __init__(self, nodes: Iterable[int], edges: Iterable[tuple[int, int]] = ()):
        self.nodes = sorted(set(nodes))
        self._out: dict[int, set[int]] = {n: set() for n in self.nodes}
        for i, j in edges:
            self.add_edge(i, j)

    def add_edge(self, i: int, j: int) -> None:
        if i == j:
            return
        if i not in self._out or j not in self._out:
            raise KeyError(f"edge ({i}, {j}) references an unknown agent")
        self._out[i].add(j)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return sorted((i, j) for i in self.nodes for j in self._out[i])

    def successors(self, i: int) -> list[int]:
        return sorted(self._out[i])

    @classmethod
    def complete(cls, nodes: Iterable[int]) -> "CommGraph":
        nodes = list(nodes)
        return cls(nodes, [(i, j) for i in nodes for j in nodes if i != j])

    @classmethod
    def geometric(cls, positions: Mapping[int, tuple[float, float]],
                  comm_range: float | Mapping[int, float]) -> "CommGraph":
        """Edge ``i -> j`` iff ``|p_i - p_j| <= range_i`` (true positions)."""
        nodes = sorted(positions)
        g = cls(nodes)
        for i in nodes:
            r = comm_range[i] if isinstance(comm_range, Mapping) else comm_range
            xi, yi = positions[i][0], positions[i][1]
            for j in nodes:
                if j != i and math.hypot(positions[j][0] - xi, positions[j][1] - yi) <= r:
                    g.add_edge(i, j)
        return g


def fig2_graph() -> CommGraph:
    """Six-agent digraph in the spirit of the multi-hop illustration.

    Reconstruction, not published data: agents 1 and 6 reach the whole team,
    landmarks 2 and 3 reach their masters 1 and 6, agent 4 is a sink, so the
    graph is not strongly connected.
    """
    edges = [(1, 2), (2, 1), (2, 3), (3, 2), (3, 4), (3, 6), (6, 3), (6, 5), (5, 4)]
    return CommGraph(range(1, 7), edges)


def _bfs(g: CommGraph, root: int) -> dict[int, int]:
    if root not in g._out:
        raise KeyError(f"unknown agent {root}")
    hops = {root: 0}
    queue = deque([root])
    while queue:
        i = queue.popleft()
        for j in g.successors(i):
            if j not in hops:
                hops[j] = hops[i] + 1
                queue.append(j)
    return hops


def reachable_set(g: CommGraph, root: int) -> set[int]:
    return set(_bfs(g, root))


@dataclass
class DeliveryReport:
    received: dict[int, bool]
    hop_counts: dict[int, int]
    broadcasts: dict[int, int]
    bytes_sent: dict[int, int]
    envelope: Envelope | None = None

    @property
    def undelivered(self) -> list[int]:
        return sorted(u for u, ok in self.received.items() if not ok)

    @property
    def total_broadcasts(self) -> int:
        return sum(self.broadcasts.values())

    def require(self, targets: Iterable[int] | None = None) -> None:
        targets = self.received if targets is None else targets
        missing = sorted(u for u in targets if not self.received.get(u, False))
        if missing:
            origin = self.envelope.origin if self.envelope else "?"
            raise ConnectivityError(f"message from agent {origin} did not reach agents {missing}")


def flood(g: CommGraph, origin: int, envelope: Envelope) -> DeliveryReport:
    """Multi-hop flood: BFS delivery, one re-broadcast per reached agent."""
    hops = _bfs(g, origin)
    size = len(envelope.payload)
    received = {u: u in hops for u in g.nodes}
    broadcasts = {u: (1 if u in hops else 0) for u in g.nodes}
    bytes_sent = {u: size * broadcasts[u] for u in g.nodes}
    return DeliveryReport(received, dict(hops), broadcasts, bytes_sent, envelope)


@dataclass
class Feasibility:
    ok: bool
    missing: list[int] = field(default_factory=list)
    landmark_cut_off: bool = False

    def __bool__(self) -> bool:
        return self.ok


def check_im_dcl_feasible(g: CommGraph, master: int, landmark: int | None = None) -> Feasibility:
    """Master must reach every agent; the landmark (if any) must reach the master."""
    missing = sorted(set(g.nodes) - reachable_set(g, master))
    cut = landmark is not None and landmark != master and master not in reachable_set(g, landmark)
    if cut:
        missing = sorted(set(missing) | {landmark})
    return Feasibility(not missing, missing, cut)


def is_strongly_connected(g: CommGraph) -> bool:
    return all(len(reachable_set(g, n)) == len(g.nodes) for n in g.nodes)
