"""Randomization designs: sampling, conditional sampling, and enumeration.

All three supported designs draw treated *groups* without replacement within
strata.  A group is a single unit (complete / stratified randomization) or a
cluster of units that share one treatment (cluster randomization).  This
unified view keeps conditional laws closed-form: conditioning on one or two
coordinates just removes the affected groups from their stratum's pool.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np


class InfeasibleConditioningError(ValueError):
    """Requested fixed coordinates are inconsistent with the design."""


class SupportTooLargeError(ValueError):
    """Exhaustive enumeration was requested beyond the configured cap."""

    def __init__(self, size, cap):
        self.support_size = size
        self.cap = cap
        super().__init__(f"support has {size} assignments, exceeding cap {cap}")


@dataclass(frozen=True)
class Design:
    """A known randomization law for the treatment vector.

    Use the ``complete``, ``stratified`` or ``cluster`` constructors.  The
    internal representation maps units to groups, groups to strata, and
    records how many groups are treated per stratum.  Immutable; samplers
    are pure functions of (design, seed).
    """

    kind: str  # "complete" | "stratified" | "cluster"
    group_of: np.ndarray  # unit -> group
    stratum_of_group: np.ndarray  # group -> stratum
    n_treated_per_stratum: np.ndarray  # stratum -> treated group count
    balance_fraction: float = 0.0  # diagnostic floor rho for T_s/N_s

    # derived, filled in __post_init__
    n_units: int = field(init=False, default=0)
    n_groups: int = field(init=False, default=0)
    n_strata: int = field(init=False, default=0)
    groups_by_stratum: tuple = field(init=False, default=(), repr=False)
    units_by_group: tuple = field(init=False, default=(), repr=False)

    def __post_init__(self):
        group_of = np.ascontiguousarray(self.group_of, dtype=np.int64)
        stratum_of_group = np.ascontiguousarray(self.stratum_of_group, dtype=np.int64)
        treated = np.ascontiguousarray(self.n_treated_per_stratum, dtype=np.int64)
        for a in (group_of, stratum_of_group, treated):
            a.setflags(write=False)
        object.__setattr__(self, "group_of", group_of)
        object.__setattr__(self, "stratum_of_group", stratum_of_group)
        object.__setattr__(self, "n_treated_per_stratum", treated)
        object.__setattr__(self, "n_units", len(group_of))
        object.__setattr__(self, "n_groups", len(stratum_of_group))
        object.__setattr__(self, "n_strata", len(treated))

        if group_of.size and (group_of.min() < 0 or group_of.max() >= self.n_groups):
            raise ValueError("group indices out of range")
        if stratum_of_group.size and (
            stratum_of_group.min() < 0 or stratum_of_group.max() >= self.n_strata
        ):
            raise ValueError("stratum indices out of range")

        groups_by_stratum = tuple(
            np.flatnonzero(stratum_of_group == s) for s in range(self.n_strata)
        )
        units_by_group = tuple(
            np.flatnonzero(group_of == gidx) for gidx in range(self.n_groups)
        )
        for s in range(self.n_strata):
            n_s = len(groups_by_stratum[s])
            t_s = int(treated[s])
            if not 0 < t_s < n_s:
                raise ValueError(
                    f"stratum {s}: need 0 < treated ({t_s}) < groups ({n_s}); "
                    "degenerate strata cannot identify exposure effects"
                )
        for gidx in range(self.n_groups):
            if len(units_by_group[gidx]) == 0:
                raise ValueError(f"group {gidx} has no members")
        object.__setattr__(self, "groups_by_stratum", groups_by_stratum)
        object.__setattr__(self, "units_by_group", units_by_group)

        if self.balance_fraction > 0:
            rho = self.balance_fraction
            for s in range(self.n_strata):
                share = treated[s] / len(groups_by_stratum[s])
                if not rho <= share <= 1 - rho:
                    warnings.warn(
                        f"stratum {s}: treated share {share:.3f} outside "
                        f"[{rho}, {1 - rho}]; asymptotic guarantees may degrade",
                        stacklevel=2,
                    )

    # -- constructors ------------------------------------------------------

    @staticmethod
    def complete(n_units: int, n_treated: int, balance_fraction: float = 0.0) -> "Design":
        """Treat ``n_treated`` of ``n_units`` units, uniformly without replacement."""
        return Design(
            kind="complete",
            group_of=np.arange(n_units),
            stratum_of_group=np.zeros(n_units, dtype=np.int64),
            n_treated_per_stratum=np.array([n_treated]),
            balance_fraction=balance_fraction,
        )

    @staticmethod
    def stratified(stratum_of, n_treated_per_stratum, balance_fraction: float = 0.0) -> "Design":
        """Independent complete randomization within each stratum of units."""
        stratum_of = np.asarray(stratum_of, dtype=np.int64)
        return Design(
            kind="stratified",
            group_of=np.arange(len(stratum_of)),
            stratum_of_group=stratum_of,
            n_treated_per_stratum=np.asarray(n_treated_per_stratum, dtype=np.int64),
            balance_fraction=balance_fraction,
        )

    @staticmethod
    def cluster(
        cluster_of,
        stratum_of_cluster,
        n_treated_clusters_per_stratum,
        balance_fraction: float = 0.0,
    ) -> "Design":
        """Randomize whole clusters within strata; members share one treatment."""
        return Design(
            kind="cluster",
            group_of=np.asarray(cluster_of, dtype=np.int64),
            stratum_of_group=np.asarray(stratum_of_cluster, dtype=np.int64),
            n_treated_per_stratum=np.asarray(
                n_treated_clusters_per_stratum, dtype=np.int64
            ),
            balance_fraction=balance_fraction,
        )

    # -- helpers -----------------------------------------------------------

    def expand_group_treatment(self, group_x: np.ndarray) -> np.ndarray:
        """Broadcast a per-group 0/1 vector to the per-unit treatment vector."""
        return np.asarray(group_x, dtype=np.int8)[self.group_of]

    def group_counts(self) -> np.ndarray:
        """Number of groups per stratum."""
        return np.array([len(g) for g in self.groups_by_stratum], dtype=np.int64)


def validate_assignment(d: Design, x: np.ndarray) -> None:
    """Check that x lies in the design's support; raise ValueError otherwise."""
    x = np.asarray(x)
    if x.shape != (d.n_units,):
        raise ValueError(f"assignment has shape {x.shape}, expected ({d.n_units},)")
    if not np.isin(x, (0, 1)).all():
        raise ValueError("treatments must be binary")
    group_x = np.zeros(d.n_groups, dtype=np.int64)
    for gidx in range(d.n_groups):
        members = d.units_by_group[gidx]
        vals = np.unique(x[members])
        if len(vals) != 1:
            raise ValueError(f"group {gidx} has mixed treatment values")
        group_x[gidx] = vals[0]
    for s in range(d.n_strata):
        t = int(group_x[d.groups_by_stratum[s]].sum())
        if t != int(d.n_treated_per_stratum[s]):
            raise ValueError(
                f"stratum {s}: {t} treated groups, design requires "
                f"{int(d.n_treated_per_stratum[s])}"
            )


def sample_assignment(d: Design, seed) -> np.ndarray:
    """Draw one treatment vector uniformly from the design's support."""
    rng = _as_rng(seed)
    group_x = np.zeros(d.n_groups, dtype=np.int8)
    for s in range(d.n_strata):
        pool = d.groups_by_stratum[s]
        chosen = rng.choice(pool, size=int(d.n_treated_per_stratum[s]), replace=False)
        group_x[chosen] = 1
    return d.expand_group_treatment(group_x)


def sample_conditional(d: Design, fixed: dict, seed) -> np.ndarray:
    """Draw from the conditional law of the treatment given <= 2 coordinates.

    ``fixed`` maps unit indices to treatment values.  Conditioning on a unit
    conditions on its whole group.  Within each affected stratum the
    remaining treated groups are a uniform without-replacement draw over the
    unfixed groups, which is exactly the conditional law.
    """
    rng = _as_rng(seed)
    fixed_groups = _fixed_groups(d, fixed)
    group_x = np.zeros(d.n_groups, dtype=np.int8)
    for gidx, val in fixed_groups.items():
        group_x[gidx] = val
    for s in range(d.n_strata):
        pool = d.groups_by_stratum[s]
        fixed_here = [g for g in fixed_groups if d.stratum_of_group[g] == s]
        t_remaining = int(d.n_treated_per_stratum[s]) - sum(
            fixed_groups[g] for g in fixed_here
        )
        free = np.setdiff1d(pool, np.array(fixed_here, dtype=np.int64))
        if not 0 <= t_remaining <= len(free):
            raise InfeasibleConditioningError(
                f"stratum {s}: cannot place {t_remaining} treated among "
                f"{len(free)} free groups"
            )
        if t_remaining:
            chosen = rng.choice(free, size=t_remaining, replace=False)
            group_x[chosen] = 1
    return d.expand_group_treatment(group_x)


def support_size(d: Design) -> int:
    """Exact number of assignments in the support (big integer)."""
    total = 1
    for s in range(d.n_strata):
        total *= math.comb(
            len(d.groups_by_stratum[s]), int(d.n_treated_per_stratum[s])
        )
    return total


def enumerate_assignments(d: Design, cap: int = 1_000_000):
    """Yield every assignment in the support exactly once.

    Rejects upfront (reporting the exact count) when the support exceeds
    ``cap``.
    """
    size = support_size(d)
    if size > cap:
        raise SupportTooLargeError(size, cap)
    per_stratum = [
        list(itertools.combinations(d.groups_by_stratum[s].tolist(),
                                    int(d.n_treated_per_stratum[s])))
        for s in range(d.n_strata)
    ]
    for combo in itertools.product(*per_stratum):
        group_x = np.zeros(d.n_groups, dtype=np.int8)
        for chosen in combo:
            group_x[list(chosen)] = 1
        yield d.expand_group_treatment(group_x)


def conditional_feasible(d: Design, fixed: dict) -> bool:
    """True when the fixed coordinates are consistent with some assignment."""
    try:
        fixed_groups = _fixed_groups(d, fixed)
    except InfeasibleConditioningError:
        return False
    for s in range(d.n_strata):
        fixed_here = [g for g in fixed_groups if d.stratum_of_group[g] == s]
        t_remaining = int(d.n_treated_per_stratum[s]) - sum(
            fixed_groups[g] for g in fixed_here
        )
        n_free = len(d.groups_by_stratum[s]) - len(fixed_here)
        if not 0 <= t_remaining <= n_free:
            return False
    return True


def _fixed_groups(d: Design, fixed: dict) -> dict:
    out = {}
    for unit, val in fixed.items():
        val = int(val)
        if val not in (0, 1):
            raise ValueError("fixed treatment values must be 0 or 1")
        gidx = int(d.group_of[int(unit)])
        if gidx in out and out[gidx] != val:
            raise InfeasibleConditioningError(
                f"group {gidx} fixed to both 0 and 1 (units share a cluster)"
            )
        out[gidx] = val
    if len(out) > 2:
        raise ValueError("conditional sampling supports at most 2 fixed groups")
    return out


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
