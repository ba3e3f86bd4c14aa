"""Synthetic graphs, outcome models, and datasets for simulations and demos."""

from __future__ import annotations

import numpy as np

from .design import Design
from .exposure import ExposureSpec
from .graph import AdjacencyGraph, build_graph
from .oracle import ThresholdResponse


def ring_graph(n: int, degree: int = 4) -> AdjacencyGraph:
    """Each unit points to its degree/2 nearest neighbors on each side."""
    if degree % 2 != 0 or degree <= 0:
        raise ValueError("ring degree must be a positive even number")
    half = degree // 2
    if degree >= n:
        raise ValueError("ring degree must be below n")
    edges = []
    for i in range(n):
        for k in range(1, half + 1):
            edges.append((i, (i + k) % n))
            edges.append((i, (i - k) % n))
    return build_graph(edges, n)


def random_bounded_degree_graph(n: int, d_max: int, seed) -> AdjacencyGraph:
    """Random undirected graph with all degrees capped at d_max.

    Repeated uniform edge proposals, rejected when either endpoint is full.
    Degrees concentrate near the cap without exceeding it.
    """
    rng = np.random.default_rng(seed)
    degree = np.zeros(n, dtype=np.int64)
    edges = set()
    proposals = 4 * n * d_max
    for _ in range(proposals):
        i, j = rng.integers(0, n, size=2)
        if i == j or degree[i] >= d_max or degree[j] >= d_max:
            continue
        key = (min(int(i), int(j)), max(int(i), int(j)))
        if key in edges:
            continue
        edges.add(key)
        degree[i] += 1
        degree[j] += 1
    directed = [(i, j) for i, j in edges] + [(j, i) for i, j in edges]
    return build_graph(directed, n)


def cluster_ring_graph(
    n_clusters: int, units_per_cluster: int, neighbor_clusters: int = 2
) -> tuple[AdjacencyGraph, np.ndarray]:
    """Clusters arranged on a ring; units see every unit of adjacent clusters.

    Own-cluster edges are omitted, as cluster-level exposure requires.
    Returns the graph and the unit -> cluster map.
    """
    n = n_clusters * units_per_cluster
    cluster_of = np.repeat(np.arange(n_clusters), units_per_cluster)
    members = [
        np.flatnonzero(cluster_of == c) for c in range(n_clusters)
    ]
    half = max(1, neighbor_clusters // 2)
    edges = []
    for c in range(n_clusters):
        targets = []
        for k in range(1, half + 1):
            targets.append((c + k) % n_clusters)
            targets.append((c - k) % n_clusters)
        for i in members[c]:
            for tc in set(targets) - {c}:
                for j in members[tc]:
                    edges.append((int(i), int(j)))
    return build_graph(edges, n), cluster_of


def permute_edges(graph: AdjacencyGraph, share: float, seed) -> AdjacencyGraph:
    """Rewire a share of edges to random endpoints, as a misspecified proxy.

    Keeps the no-self-loop invariant; the result is a deliberately wrong
    analysis network for the same units.
    """
    rng = np.random.default_rng(seed)
    edges = graph.edge_list()
    n = graph.n_units
    n_rewire = int(round(share * len(edges)))
    idx = rng.choice(len(edges), size=n_rewire, replace=False)
    out = set(edges)
    for k in idx:
        src, dst = edges[k]
        out.discard((src, dst))
        new_dst = int(rng.integers(0, n))
        while new_dst == src:
            new_dst = int(rng.integers(0, n))
        out.add((src, new_dst))
    return build_graph(sorted(out), n)


def dense_spillover_model(
    graph: AdjacencyGraph,
    spec: ExposureSpec,
    seed,
    direct_share: float = 0.3,
    spillover_strength: float = 0.6,
) -> ThresholdResponse:
    """Interference affects a large share of units; thresholds stay generic.

    Baselines are spread so some units flip outcome with exposure and a
    ``direct_share`` of units also respond to their own treatment.
    """
    rng = np.random.default_rng(seed)
    n = graph.n_units
    baseline = rng.uniform(0.2, 0.9, size=n)
    direct = np.where(rng.random(n) < direct_share, rng.uniform(0.2, 0.6, size=n), 0.0)
    spillover = np.full(n, spillover_strength)
    return ThresholdResponse(
        baseline=baseline,
        direct=direct,
        spillover=spillover,
        true_graph=graph,
        true_exposure=spec,
    )


def null_model(graph: AdjacencyGraph, spec: ExposureSpec, seed) -> ThresholdResponse:
    """No interference: outcomes depend on own treatment only."""
    rng = np.random.default_rng(seed)
    n = graph.n_units
    baseline = rng.uniform(0.2, 0.9, size=n)
    direct = np.where(rng.random(n) < 0.5, rng.uniform(0.2, 0.6, size=n), 0.0)
    return ThresholdResponse(
        baseline=baseline,
        direct=direct,
        spillover=np.zeros(n),
        true_graph=graph,
        true_exposure=spec,
    )


def random_small_instance(seed, n: int = 10, n_treated: int | None = None, d_max: int = 3):
    """A complete-randomization instance small enough for full enumeration."""
    rng = np.random.default_rng(seed)
    graph = random_bounded_degree_graph(n, d_max, rng.integers(2**32))
    design = Design.complete(n, n_treated if n_treated is not None else n // 2)
    gamma = rng.integers(1, 3, size=n).astype(float)
    spec = ExposureSpec.count(gamma)
    model = dense_spillover_model(graph, spec, rng.integers(2**32))
    return design, graph, spec, model


# -- school-style clustered fixture ------------------------------------------

FIXTURE_CELLS = (
    # (exposed, treated, n_schools, mean_outcome)
    (1, 1, 10, 0.14),
    (1, 0, 10, 0.22),
    (0, 1, 15, 0.23),
    (0, 0, 14, 0.53),
)


def school_fixture(units_per_cell: int = 100, seed: int = 7) -> dict:
    """Clustered dataset whose (exposure, treatment) cell means are exact.

    49 schools in four cells (10/10/15/14 schools) with pooled student
    outcome means 0.14 / 0.22 / 0.23 / 0.53.  School sizes within a cell
    are chosen so each cell holds exactly ``units_per_cell`` students, which
    makes the target means exact fractions.  The school network is built so
    every intended high-exposure school has three treated neighbors out of
    four and every low-exposure school has none, keeping the half-of-
    neighbors rule unambiguous regardless of school sizes.

    Returns a dict with units / edges tables (lists of dicts) and the
    intended per-school cells for verification.
    """
    rng = np.random.default_rng(seed)
    schools = []
    school_id = 0
    for exposed, treated, n_schools, mean in FIXTURE_CELLS:
        sizes = _split_total(units_per_cell, n_schools)
        infected_total = round(mean * units_per_cell)
        infected = _split_infections(sizes, infected_total)
        for size, inf in zip(sizes, infected):
            schools.append(
                {
                    "school": school_id,
                    "treated": treated,
                    "exposed": exposed,
                    "size": size,
                    "infected": inf,
                }
            )
            school_id += 1
    treated_ids = [s["school"] for s in schools if s["treated"] == 1]
    control_ids = [s["school"] for s in schools if s["treated"] == 0]

    school_edges = []
    for s in schools:
        others_t = [t for t in treated_ids if t != s["school"]]
        others_c = [c for c in control_ids if c != s["school"]]
        if s["exposed"]:
            nbrs = list(rng.choice(others_t, size=3, replace=False)) + list(
                rng.choice(others_c, size=1, replace=False)
            )
        else:
            nbrs = list(rng.choice(others_c, size=4, replace=False))
        for t in nbrs:
            school_edges.append((s["school"], int(t)))

    units = []
    uid = 0
    for s in schools:
        for k in range(s["size"]):
            units.append(
                {
                    "unit_id": f"s{s['school']:02d}u{k:03d}",
                    "treatment": s["treated"],
                    "outcome": 1 if k < s["infected"] else 0,
                    "stratum": "all",
                    "cluster": f"school{s['school']:02d}",
                }
            )
            uid += 1
    first_unit = {}
    offsets = {}
    pos = 0
    for s in schools:
        offsets[s["school"]] = pos
        pos += s["size"]
    edges = []
    for src_school, dst_school in school_edges:
        src0 = offsets[src_school]
        dst0 = offsets[dst_school]
        src_n = schools[src_school]["size"]
        dst_n = schools[dst_school]["size"]
        for a in range(src_n):
            for b in range(dst_n):
                edges.append(
                    {
                        "src": units[src0 + a]["unit_id"],
                        "dst": units[dst0 + b]["unit_id"],
                    }
                )
    return {
        "units": units,
        "edges": edges,
        "schools": schools,
        "school_edges": school_edges,
    }


def _split_total(total: int, parts: int) -> list:
    base = total // parts
    rem = total - base * parts
    return [base + 1] * rem + [base] * (parts - rem)


def _split_infections(sizes, infected_total: int) -> list:
    out = []
    remaining = infected_total
    for idx, size in enumerate(sizes):
        left = sum(sizes[idx:])
        share = round(remaining * size / left) if left else 0
        share = min(share, size, remaining)
        out.append(share)
        remaining -= share
    # distribute any leftover to schools with spare capacity
    idx = 0
    while remaining > 0 and idx < len(sizes):
        spare = sizes[idx] - out[idx]
        add = min(spare, remaining)
        out[idx] += add
        remaining -= add
        idx += 1
    return out
