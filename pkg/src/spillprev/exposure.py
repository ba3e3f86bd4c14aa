"""Binary indirect-treatment indicators computed from neighbors' treatments."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import AdjacencyGraph


@dataclass(frozen=True)
class ExposureSpec:
    """Threshold rule turning neighbor treatments into a 0/1 exposure.

    mode "count": exposed iff the number of treated neighbors is >= gamma_i.
    mode "fraction": exposed iff that number is >= phi_i * (neighborhood size).
    Units with no neighbors get the constant ``empty_value``; they carry a
    degenerate exposure law and are excluded from the weight vector
    downstream.
    """

    mode: str  # "count" | "fraction"
    threshold: np.ndarray  # per-unit gamma (count) or phi (fraction)
    empty_value: int = 0

    def __post_init__(self):
        thr = np.ascontiguousarray(self.threshold, dtype=np.float64)
        thr.setflags(write=False)
        object.__setattr__(self, "threshold", thr)
        if self.mode not in ("count", "fraction"):
            raise ValueError(f"unknown exposure mode {self.mode!r}")
        if self.empty_value not in (0, 1):
            raise ValueError("empty_value must be 0 or 1")
        if self.mode == "count" and (thr < 0).any():
            raise ValueError("count thresholds must be nonnegative")
        if self.mode == "fraction" and ((thr < 0) | (thr > 1)).any():
            raise ValueError("fraction thresholds must lie in [0, 1]")

    @staticmethod
    def count(gamma, n_units: int | None = None, empty_value: int = 0) -> "ExposureSpec":
        gamma = np.asarray(gamma, dtype=np.float64)
        if gamma.ndim == 0:
            if n_units is None:
                raise ValueError("scalar threshold requires n_units")
            gamma = np.full(n_units, float(gamma))
        return ExposureSpec(mode="count", threshold=gamma, empty_value=empty_value)

    @staticmethod
    def fraction(phi, n_units: int | None = None, empty_value: int = 0) -> "ExposureSpec":
        phi = np.asarray(phi, dtype=np.float64)
        if phi.ndim == 0:
            if n_units is None:
                raise ValueError("scalar threshold requires n_units")
            phi = np.full(n_units, float(phi))
        return ExposureSpec(mode="fraction", threshold=phi, empty_value=empty_value)

    def count_threshold(self, i: int, degree: int) -> int:
        """Smallest treated-neighbor count that makes unit i exposed.

        For fraction mode this is ceil(phi * degree), matching the "at least
        a phi share" convention on an integer count.
        """
        if self.mode == "count":
            return int(math.ceil(self.threshold[i] - 1e-12))
        return int(math.ceil(self.threshold[i] * degree - 1e-12))


def compute_exposure(g: AdjacencyGraph, spec: ExposureSpec, x: np.ndarray) -> np.ndarray:
    """Exposure vector for a full treatment assignment.

    Each unit's value depends only on the treatments of its out-neighbors;
    isolated units get ``spec.empty_value``.
    """
    x = np.asarray(x)
    if x.shape != (g.n_units,):
        raise ValueError(f"assignment has shape {x.shape}, expected ({g.n_units},)")
    if len(spec.threshold) != g.n_units:
        raise ValueError("threshold vector does not match the graph size")
    w = np.empty(g.n_units, dtype=np.int8)
    for i in range(g.n_units):
        nb = g.out_array(i)
        if nb.size == 0:
            w[i] = spec.empty_value
        else:
            treated = int(x[nb].sum())
            w[i] = 1 if treated >= spec.count_threshold(i, nb.size) else 0
    return w


def compute_exposure_batch(
    g: AdjacencyGraph, spec: ExposureSpec, x_batch: np.ndarray
) -> np.ndarray:
    """Exposure for a (reps, n_units) batch of assignments via one sparse matmul."""
    x_batch = np.asarray(x_batch, dtype=np.float64)
    counts = (g.to_csr() @ x_batch.T).T  # (reps, n)
    degrees = np.array([g.out_degree(i) for i in range(g.n_units)])
    thresholds = np.array(
        [spec.count_threshold(i, int(degrees[i])) for i in range(g.n_units)]
    )
    w = (counts >= thresholds[None, :] - 1e-9).astype(np.int8)
    empty = degrees == 0
    if empty.any():
        w[:, empty] = spec.empty_value
    return w


def exposure_on_subset(
    g: AdjacencyGraph, spec: ExposureSpec, i: int, x_i: int, treated_neighbors
) -> int:
    """Exposure of unit i when exactly the given subset of its neighbors is
    treated.  Locality means no other coordinate matters; ``x_i`` is part of
    the unit's treatment information but does not enter the threshold rule.
    """
    nb = set(g.out_neighbors[i])
    subset = set(int(t) for t in treated_neighbors)
    if not subset <= nb:
        raise ValueError(f"treated set {sorted(subset - nb)} not within unit {i}'s neighborhood")
    if not nb:
        return spec.empty_value
    return 1 if len(subset) >= spec.count_threshold(i, len(nb)) else 0
