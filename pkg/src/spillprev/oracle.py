"""Brute-force reference implementations for small instances.

Everything here enumerates: the design's full support, or all binary
counterfactuals.  These are the independent checks the estimator components
are tested against; nothing in this module is used on the estimation path.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .design import Design, enumerate_assignments, support_size
from .exposure import ExposureSpec, compute_exposure
from .graph import AdjacencyGraph
from .statistic import affected_count, sqrt_plus


@dataclass(frozen=True)
class ThresholdResponse:
    """Deterministic potential outcomes driven by own treatment and true exposure.

    Y_i = 1{ baseline_i + direct_i * X_i + spillover_i * W_i >= 1 }, with W
    computed from the *true* graph and exposure rule.  Realizes both the
    no-interference null (spillover = 0) and dense-interference alternatives
    while keeping the isolated-treatment outcome analytically available.
    """

    baseline: np.ndarray
    direct: np.ndarray
    spillover: np.ndarray
    true_graph: AdjacencyGraph
    true_exposure: ExposureSpec

    @property
    def n_units(self) -> int:
        return len(self.baseline)

    def outcomes(self, x: np.ndarray) -> np.ndarray:
        w = compute_exposure(self.true_graph, self.true_exposure, x)
        score = self.baseline + self.direct * np.asarray(x) + self.spillover * w
        return (score >= 1.0).astype(np.int8)

    def outcomes_batch(self, x_batch: np.ndarray) -> np.ndarray:
        from .exposure import compute_exposure_batch

        w = compute_exposure_batch(self.true_graph, self.true_exposure, x_batch)
        score = (
            self.baseline[None, :]
            + self.direct[None, :] * np.asarray(x_batch)
            + self.spillover[None, :] * w
        )
        return (score >= 1.0).astype(np.int8)


@dataclass(frozen=True)
class LookupTable:
    """Potential outcomes as an explicit map from assignments to outcomes."""

    table: dict  # tuple(x) -> tuple(y)
    n_units: int

    def outcomes(self, x: np.ndarray) -> np.ndarray:
        return np.array(self.table[tuple(int(v) for v in x)], dtype=np.int8)


def isolated_assignment(
    model_n: int, x: np.ndarray, i: int, level: str, design: Design | None = None
) -> np.ndarray:
    """The assignment where unit i (or its cluster) keeps its treatment and
    everyone else receives control."""
    x = np.asarray(x)
    iso = np.zeros_like(x)
    if level == "unit":
        iso[i] = x[i]
    elif level == "cluster":
        if design is None:
            raise ValueError("cluster-level isolation requires the design")
        members = design.units_by_group[int(design.group_of[i])]
        iso[members] = x[members]
    else:
        raise ValueError(f"unknown isolation level {level!r}")
    return iso


def isolated_outcomes(
    model, x: np.ndarray, level: str = "unit", design: Design | None = None
) -> np.ndarray:
    """Outcome of each unit under its isolated-treatment counterfactual.

    Unit-level: unit i keeps X_i, all others are control.  Cluster-level:
    i's whole cluster keeps its assignment, all other clusters are control.
    The result depends only on each unit's own (or own cluster's) treatment.
    """
    x = np.asarray(x)
    n = model.n_units
    theta = np.empty(n, dtype=np.int8)
    for i in range(n):
        iso = isolated_assignment(n, x, i, level, design)
        theta[i] = model.outcomes(iso)[i]
    return theta


def true_affected_count(
    model, x: np.ndarray, level: str = "unit", design: Design | None = None
) -> int:
    """The estimand itself: units whose outcome differs from isolated treatment."""
    y = model.outcomes(x)
    theta = isolated_outcomes(model, x, level, design)
    return affected_count(y, theta)


def exact_contrast_variance(
    design: Design,
    graph: AdjacencyGraph,
    spec: ExposureSpec,
    weights_builder,
    model,
    level: str = "unit",
    cap: int = 100_000,
) -> float:
    """Exact Var(u @ theta*) by full enumeration of the design's support.

    ``weights_builder(x, w)`` must return the realized weight vector for an
    assignment and its exposures (the propensity table is fixed across the
    support).  Enumeration is rejected past ``cap`` with the exact count.
    """
    taus = []
    for x in enumerate_assignments(design, cap):
        w = compute_exposure(graph, spec, x)
        u = weights_builder(x, w)
        theta = isolated_outcomes(model, x, level, design)
        taus.append(float(u @ theta))
    taus = np.array(taus)
    return float(taus.var())


def integer_optimum(
    u: np.ndarray,
    q: np.ndarray,
    y: np.ndarray,
    z: float,
    n_cap: int = 15,
) -> float:
    """Global optimum of the binary inversion program by exhaustive search.

    min sum|Y - theta| over theta in {0,1}^N subject to
    |u @ theta| <= z * sqrt_plus(theta' Q theta); a negative quadratic form
    makes the right side -inf and the point infeasible.  theta = 0 is always
    feasible, so the optimum exists.
    """
    u = np.asarray(u, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if n > n_cap:
        raise ValueError(f"n={n} exceeds the enumeration cap {n_cap}")
    thetas = np.array(list(itertools.product((0.0, 1.0), repeat=n)))
    lhs = np.abs(thetas @ u)
    v = np.einsum("ki,ij,kj->k", thetas, q, thetas)
    feasible = (v >= 0) & (lhs <= z * np.sqrt(np.maximum(v, 0.0)) + 1e-12)
    objective = np.abs(thetas - y[None, :]).sum(axis=1)
    return float(objective[feasible].min())


def confidence_set_membership(
    u: np.ndarray, q: np.ndarray, theta: np.ndarray, z: float
) -> bool:
    """Whether a binary theta lies in the inverted confidence set."""
    theta = np.asarray(theta, dtype=np.float64)
    lhs = abs(float(np.asarray(u) @ theta))
    rhs = z * sqrt_plus(float(theta @ np.asarray(q) @ theta))
    return lhs <= rhs


def enumerate_support_arrays(design: Design, cap: int = 100_000) -> np.ndarray:
    """All assignments in the support, stacked as one (support, n) array."""
    return np.array(list(enumerate_assignments(design, cap)), dtype=np.int8)


def exact_exposure_law(
    design: Design,
    graph: AdjacencyGraph,
    spec: ExposureSpec,
    i: int,
    x: int,
    cap: int = 100_000,
) -> float:
    """P(W_i = 1 | X_i = x) by averaging over the enumerated support."""
    hits = 0
    total = 0
    for assignment in enumerate_assignments(design, cap):
        if int(assignment[i]) != int(x):
            continue
        total += 1
        w = compute_exposure(graph, spec, assignment)
        hits += int(w[i])
    if total == 0:
        raise ValueError(f"conditioning X_{i}={x} never occurs in the support")
    return hits / total


def exact_pair_law(
    design: Design,
    graph: AdjacencyGraph,
    spec: ExposureSpec,
    weights_values: np.ndarray,
    i: int,
    j: int,
    x_i: int,
    x_j: int,
    cap: int = 100_000,
) -> float:
    """E[u_i u_j | X_i, X_j] by averaging the realized products over the support."""
    total = 0
    acc = 0.0
    for assignment in enumerate_assignments(design, cap):
        if int(assignment[i]) != int(x_i) or int(assignment[j]) != int(x_j):
            continue
        total += 1
        w = compute_exposure(graph, spec, assignment)
        acc += float(
            weights_values[i, x_i, int(w[i])] * weights_values[j, x_j, int(w[j])]
        )
    if total == 0:
        raise ValueError("conditioning never occurs in the support")
    return acc / total


def support_is_enumerable(design: Design, cap: int = 100_000) -> bool:
    return support_size(design) <= cap
