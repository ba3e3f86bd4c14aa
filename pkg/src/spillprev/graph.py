"""Directed proxy network with fast neighborhood lookup in both directions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class AdjacencyGraph:
    """Directed graph over densely indexed units.

    ``out_neighbors[i]`` are the units whose treatment can affect unit i's
    exposure; ``in_neighbors[i]`` are the units whose exposure unit i's
    treatment can affect.  Both directions are materialized so either lookup
    is O(1).  Instances are immutable after construction and safe to share
    across workers.
    """

    n_units: int
    out_neighbors: tuple[tuple[int, ...], ...]
    in_neighbors: tuple[tuple[int, ...], ...]
    _out_arrays: tuple[np.ndarray, ...] = field(repr=False, default=())

    def __post_init__(self):
        arrays = tuple(
            np.asarray(nb, dtype=np.int64) for nb in self.out_neighbors
        )
        for a in arrays:
            a.setflags(write=False)
        object.__setattr__(self, "_out_arrays", arrays)

    def out_degree(self, i: int) -> int:
        return len(self.out_neighbors[i])

    def in_degree(self, i: int) -> int:
        return len(self.in_neighbors[i])

    @property
    def max_degree(self) -> int:
        """Largest in- or out-degree in the graph."""
        if self.n_units == 0:
            return 0
        return max(
            max((len(nb) for nb in self.out_neighbors), default=0),
            max((len(nb) for nb in self.in_neighbors), default=0),
        )

    def out_array(self, i: int) -> np.ndarray:
        """Out-neighborhood of i as a read-only int64 array."""
        return self._out_arrays[i]

    def edge_list(self) -> list[tuple[int, int]]:
        return [(i, j) for i in range(self.n_units) for j in self.out_neighbors[i]]

    def to_csr(self):
        """Boolean CSR matrix A with A[i, j] = 1 iff j is an out-neighbor of i."""
        from scipy import sparse

        indptr = np.zeros(self.n_units + 1, dtype=np.int64)
        for i in range(self.n_units):
            indptr[i + 1] = indptr[i] + len(self.out_neighbors[i])
        indices = np.concatenate(
            [self.out_array(i) for i in range(self.n_units)]
            or [np.empty(0, dtype=np.int64)]
        )
        data = np.ones(len(indices), dtype=np.int8)
        return sparse.csr_matrix(
            (data, indices, indptr), shape=(self.n_units, self.n_units)
        )


def build_graph(edges, n_units: int) -> AdjacencyGraph:
    """Build a graph from directed (src, dst) pairs.

    Duplicate edges are collapsed.  Self-loops or out-of-range indices are
    rejected.  For an undirected input, pass both orientations of each edge.
    """
    if n_units < 0:
        raise ValueError("n_units must be nonnegative")
    out_sets = [set() for _ in range(n_units)]
    in_sets = [set() for _ in range(n_units)]
    for src, dst in edges:
        src = int(src)
        dst = int(dst)
        if not (0 <= src < n_units and 0 <= dst < n_units):
            raise ValueError(f"edge ({src}, {dst}) out of range for {n_units} units")
        if src == dst:
            raise ValueError(f"self-loop at unit {src} is not allowed")
        out_sets[src].add(dst)
        in_sets[dst].add(src)
    return AdjacencyGraph(
        n_units=n_units,
        out_neighbors=tuple(tuple(sorted(s)) for s in out_sets),
        in_neighbors=tuple(tuple(sorted(s)) for s in in_sets),
    )


def joint_neighborhood(g: AdjacencyGraph, i: int, j: int) -> tuple[int, ...]:
    """Units whose treatment can move either i's or j's exposure, excluding
    i and j themselves: sorted (out(i) | out(j)) - {i, j}."""
    if i == j:
        raise ValueError("joint neighborhood requires two distinct units")
    union = set(g.out_neighbors[i]) | set(g.out_neighbors[j])
    union.discard(i)
    union.discard(j)
    return tuple(sorted(union))
