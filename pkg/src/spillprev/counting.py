"""Exact hypergeometric counting for exposure laws under without-replacement designs.

Conditioning on one or two coordinates removes the affected groups (units or
clusters) and their treated slots from the relevant strata.  The law of the
remaining treated groups factorizes over strata, so the joint distribution of
one or two exposure indicators reduces to a finite sum over treated-count
configurations of the "relevant" neighbor groups, weighted by multivariate
hypergeometric counts.  All weights are computed with exact integer
arithmetic; a single division at the end produces the float result.

The objects here are structural: two unit pairs with the same stratum pools,
class layout, thresholds, and base contributions share the same table, which
is what makes caching across pairs (and across replications of a simulation)
effective.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np


def comb0(n: int, k: int) -> int:
    """Binomial coefficient that is zero outside the valid range."""
    if k < 0 or n < 0 or k > n:
        return 0
    return math.comb(n, k)


class EnumerationCapExceeded(Exception):
    """Exact enumeration would exceed the configured budget."""

    def __init__(self, size, cap):
        self.size = size
        self.cap = cap
        super().__init__(f"enumeration of {size} configurations exceeds cap {cap}")


# A stratum record is (tag, n_groups, n_treated, classes) where tag marks
# which conditioned groups live in the stratum ("i", "j", "ij", or "") and
# classes is a tuple of (a, b, k): k exchangeable groups each contributing a
# neighbors to the first unit and b to the second.
Record = tuple


def enumeration_size(records) -> int:
    size = 1
    for _, _, _, classes in records:
        for _, _, k in classes:
            size *= k + 1
    return size


def _adjusted_pool(record, x_i: int, x_j: int, same_group: bool):
    """Pool size and treated slots after removing the conditioned groups.

    Returns None when the conditioning is infeasible for this stratum.
    """
    tag, n_s, t_s, _ = record
    if tag == "":
        n_fixed, t_fixed = 0, 0
    elif tag == "i":
        n_fixed, t_fixed = 1, x_i
    elif tag == "j":
        n_fixed, t_fixed = 1, x_j
    elif tag == "ij":
        if same_group:
            n_fixed, t_fixed = 1, x_i
        else:
            n_fixed, t_fixed = 2, x_i + x_j
    else:  # pragma: no cover - construction never emits other tags
        raise ValueError(f"unknown record tag {tag!r}")
    n_pool = n_s - n_fixed
    t_pool = t_s - t_fixed
    if not 0 <= t_pool <= n_pool:
        return None
    return n_pool, t_pool


def _config_tables(records, x_i, x_j, same_group):
    """Flatten class structure and per-record pools for one conditioning.

    Returns (classes, pools) or None if infeasible, where classes is a list
    of (record_index, a, b, comb_table) and pools a list of
    (n_pool, t_pool, total_class_groups).
    """
    classes = []
    pools = []
    for ridx, record in enumerate(records):
        adj = _adjusted_pool(record, x_i, x_j, same_group)
        if adj is None:
            return None
        n_pool, t_pool = adj
        k_total = sum(k for _, _, k in record[3])
        pools.append((n_pool, t_pool, k_total))
        for a, b, k in record[3]:
            classes.append((ridx, a, b, [math.comb(k, c) for c in range(k + 1)]))
    return classes, pools


def joint_exposure_table(key) -> np.ndarray:
    """Joint law of two exposure indicators given both units' treatments.

    ``key`` is (same_group, a_own, a_other, b_own, b_other, thr_i, thr_j,
    records).  Returns a (2, 2, 2, 2) array indexed [x_i, x_j, w_i, w_j];
    entries are NaN when (x_i, x_j) is infeasible under the design.
    """
    same_group, a_own, a_other, b_own, b_other, thr_i, thr_j, records = key
    table = np.full((2, 2, 2, 2), np.nan)
    for x_i, x_j in itertools.product((0, 1), (0, 1)):
        if same_group and x_i != x_j:
            continue
        prepared = _config_tables(records, x_i, x_j, same_group)
        if prepared is None:
            continue
        classes, pools = prepared
        base_i = a_own * x_i + a_other * x_j
        base_j = b_own * x_j + b_other * x_i
        denom = 1
        for n_pool, t_pool, _ in pools:
            denom *= math.comb(n_pool, t_pool)
        cells = [[0, 0], [0, 0]]
        ranges = [range(len(ct[3])) for ct in classes]
        for counts in itertools.product(*ranges):
            count_i = base_i
            count_j = base_j
            weight = 1
            treated_by_record = [0] * len(pools)
            for (ridx, a, b, comb_table), c in zip(classes, counts):
                weight *= comb_table[c]
                count_i += a * c
                count_j += b * c
                treated_by_record[ridx] += c
            if weight == 0:
                continue
            for (n_pool, t_pool, k_total), c_total in zip(pools, treated_by_record):
                weight *= comb0(n_pool - k_total, t_pool - c_total)
                if weight == 0:
                    break
            if weight == 0:
                continue
            w_i = 1 if count_i >= thr_i else 0
            w_j = 1 if count_j >= thr_j else 0
            cells[w_i][w_j] += weight
        for w_i in (0, 1):
            for w_j in (0, 1):
                table[x_i, x_j, w_i, w_j] = float(
                    Fraction(cells[w_i][w_j], denom)
                )
    return table


def exposure_probability(key) -> np.ndarray:
    """Marginal exposure law of one unit given its own treatment.

    ``key`` is (a_own, thr, records) with records tagged "i" or "".
    Returns [P(W=1 | X=0), P(W=1 | X=1)]; NaN marks an infeasible
    conditioning (cannot occur for a valid design).
    """
    a_own, thr, records = key
    out = np.full(2, np.nan)
    for x in (0, 1):
        prepared = _config_tables(records, x, 0, False)
        if prepared is None:
            continue
        classes, pools = prepared
        denom = 1
        for n_pool, t_pool, _ in pools:
            denom *= math.comb(n_pool, t_pool)
        hit = 0
        ranges = [range(len(ct[3])) for ct in classes]
        for counts in itertools.product(*ranges):
            count = a_own * x
            weight = 1
            treated_by_record = [0] * len(pools)
            for (ridx, a, _b, comb_table), c in zip(classes, counts):
                weight *= comb_table[c]
                count += a * c
                treated_by_record[ridx] += c
            if weight == 0:
                continue
            for (n_pool, t_pool, k_total), c_total in zip(pools, treated_by_record):
                weight *= comb0(n_pool - k_total, t_pool - c_total)
                if weight == 0:
                    break
            if weight == 0:
                continue
            if count >= thr:
                hit += weight
        out[x] = float(Fraction(hit, denom))
    return out
