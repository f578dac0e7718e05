"""Undirected graph over the finite state set, with k-hop neighborhood queries.

States are kept in the order they were given; that order is the canonical
ordering used everywhere a window or a per-state vector needs a fixed layout.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence


@dataclass(frozen=True)
class Window:
    """States within `radius` hops of `center`, in canonical (global) order."""

    center: int
    radius: int
    members: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.members)


@dataclass
class StateGraph:
    """Immutable undirected graph; k-hop sets are BFS-computed lazily and cached."""

    labels: tuple[Hashable, ...]
    edges: frozenset[tuple[int, int]]
    adjacency: tuple[tuple[int, ...], ...]
    _khop_cache: dict[tuple[int, int], tuple[int, ...]] = field(
        default_factory=dict, repr=False
    )
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def n_states(self) -> int:
        return len(self.labels)

    def index_of(self, label: Hashable) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValueError(f"unknown state {label!r}") from None

    def _check_state(self, s: int) -> None:
        if not 0 <= s < self.n_states:
            raise ValueError(f"unknown state index {s}")

    def _bfs_distances(self, s: int) -> list[int]:
        dist = [-1] * self.n_states
        dist[s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in self.adjacency[u]:
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        return dist

    def khop_members(self, s: int, k: int) -> tuple[int, ...]:
        """States at BFS distance <= k from s (always includes s), canonical order."""
        self._check_state(s)
        if k < 0:
            raise ValueError("k must be nonnegative")
        key = (s, k)
        cached = self._khop_cache.get(key)
        if cached is not None:
            return cached
        with self._lock:
            cached = self._khop_cache.get(key)
            if cached is not None:
                return cached
            dist = self._bfs_distances(s)
            members = tuple(t for t in range(self.n_states) if 0 <= dist[t] <= k)
            self._khop_cache[key] = members
            return members

    def diameter(self) -> int:
        """Largest shortest-path distance between any pair; requires connectivity."""
        best = 0
        for s in range(self.n_states):
            dist = self._bfs_distances(s)
            if any(d < 0 for d in dist):
                raise ValueError("graph is not connected; diameter undefined")
            best = max(best, max(dist))
        return best


def build_graph(states: Sequence[Hashable], edges: Iterable[Sequence[Hashable]]) -> StateGraph:
    """Build a StateGraph from state labels and unordered edge pairs.

    Rejects duplicate states, unknown endpoints, self-loops, and duplicate
    edges (an edge given in both orientations counts as a duplicate).
    """
    labels = tuple(states)
    if len(set(labels)) != len(labels):
        raise ValueError("duplicate state id")
    idx = {lab: i for i, lab in enumerate(labels)}
    seen: set[tuple[int, int]] = set()
    adj: list[set[int]] = [set() for _ in labels]
    for e in edges:
        a, b = e
        if a not in idx or b not in idx:
            raise ValueError(f"edge ({a!r}, {b!r}) references unknown state")
        i, j = idx[a], idx[b]
        if i == j:
            raise ValueError(f"self-loop edge on state {a!r}")
        pair = (min(i, j), max(i, j))
        if pair in seen:
            raise ValueError(f"duplicate edge ({a!r}, {b!r})")
        seen.add(pair)
        adj[i].add(j)
        adj[j].add(i)
    adjacency = tuple(tuple(sorted(neigh)) for neigh in adj)
    return StateGraph(labels=labels, edges=frozenset(seen), adjacency=adjacency)


def k_hop(g: StateGraph, s: int, k: int) -> Window:
    """The k-hop neighborhood window of s; k = 0 gives just {s}."""
    return Window(center=s, radius=k, members=g.khop_members(s, k))


def complement_k_hop(g: StateGraph, s: int, k: int) -> Window:
    """States outside the k-hop neighborhood of s, canonical order."""
    inside = set(g.khop_members(s, k))
    members = tuple(t for t in range(g.n_states) if t not in inside)
    return Window(center=s, radius=k, members=members)


def restrict(vec: Sequence, w: Window):
    """Entries of a full per-state vector at the window members (no renormalization)."""
    return tuple(vec[t] for t in w.members)
