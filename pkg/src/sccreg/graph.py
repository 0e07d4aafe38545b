"""Spatial adjacency graphs and the label-agreement smoothing weight.

Vertices are string identifiers (one per observation location). The graph is
simple: symmetric, irreflexive, no multi-edges. ``expand_neighbors`` widens
adjacency to all pairs within a shortest-path distance bound, which is how a
contiguity graph becomes the neighborhood structure actually smoothed over.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class SpatialGraph:
    """Undirected simple graph over labeled vertices."""

    labels: tuple
    neighbors: tuple  # tuple of sorted index tuples, aligned with labels
    _index: dict = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.labels)})

    @classmethod
    def from_edge_list(cls, edges, vertices):
        """Build from (src, dst) pairs over an explicit vertex list.

        Vertices absent from every edge are kept as isolated vertices.
        Self-loops and duplicate edges are rejected.
        """
        labels = tuple(str(v) for v in vertices)
        if len(set(labels)) != len(labels):
            raise InputError("vertex identifiers must be unique")
        index = {s: i for i, s in enumerate(labels)}
        sets = [set() for _ in labels]
        seen = set()
        for src, dst in edges:
            src, dst = str(src), str(dst)
            if src not in index or dst not in index:
                missing = [s for s in (src, dst) if s not in index]
                raise InputError(f"edge ({src}, {dst}) references unknown vertices: {missing}")
            if src == dst:
                raise InputError(f"self-loop on vertex {src!r} is not allowed")
            a, b = index[src], index[dst]
            key = (min(a, b), max(a, b))
            if key in seen:
                raise InputError(f"duplicate edge between {src!r} and {dst!r}")
            seen.add(key)
            sets[a].add(b)
            sets[b].add(a)
        return cls(labels=labels, neighbors=tuple(tuple(sorted(s)) for s in sets))

    @property
    def n(self):
        return len(self.labels)

    def index_of(self, label):
        try:
            return self._index[str(label)]
        except KeyError:
            raise InputError(f"unknown vertex {label!r}") from None

    def expand_neighbors(self, d_max):
        """Graph connecting every pair at shortest-path distance <= d_max."""
        if int(d_max) != d_max or d_max < 1:
            raise InputError(f"d_max must be a positive integer, got {d_max}")
        d_max = int(d_max)
        if d_max == 1:
            return self
        out = []
        for start in range(self.n):
            reached = {start: 0}
            queue = deque([start])
            while queue:
                v = queue.popleft()
                if reached[v] == d_max:
                    continue
                for w in self.neighbors[v]:
                    if w not in reached:
                        reached[w] = reached[v] + 1
                        queue.append(w)
            reached.pop(start)
            out.append(tuple(sorted(reached)))
        return SpatialGraph(labels=self.labels, neighbors=tuple(out))

    def csr_arrays(self):
        """Neighbor lists flattened to (indptr, indices) int64 arrays."""
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        for i, nb in enumerate(self.neighbors):
            indptr[i + 1] = indptr[i] + len(nb)
        indices = np.fromiter(
            (w for nb in self.neighbors for w in nb), dtype=np.int64, count=int(indptr[-1])
        )
        return indptr, indices

    def connected_components(self):
        """List of vertex-index lists, one per connected component."""
        seen = [False] * self.n
        comps = []
        for start in range(self.n):
            if seen[start]:
                continue
            comp = []
            queue = deque([start])
            seen[start] = True
            while queue:
                v = queue.popleft()
                comp.append(v)
                for w in self.neighbors[v]:
                    if not seen[w]:
                        seen[w] = True
                        queue.append(w)
            comps.append(sorted(comp))
        return comps


def mrf_log_weight(z, i, candidate, graph, lam):
    """Log Markov-random-field factor for assigning label ``candidate`` to i.

    Equals lam times the number of neighbors of i currently holding
    ``candidate``. The entry z[i] is never consulted (the graph is
    irreflexive), so callers may pass a stale value there.
    """
    if lam < 0:
        raise InputError(f"smoothing weight must be nonnegative, got {lam}")
    z = np.asarray(z)
    if z.shape != (graph.n,):
        raise InputError(f"label vector has shape {z.shape}, expected ({graph.n},)")
    if not 0 <= i < graph.n:
        raise InputError(f"vertex index {i} out of range for n={graph.n}")
    count = 0
    for j in graph.neighbors[i]:
        if z[j] == candidate:
            count += 1
    return lam * count
