"""Exposure propensities and pairwise conditional moments.

Everything here is a function of the design, the proxy network, and the
exposure rule alone; observed treatments only select which precomputed entry
to read.  That split is what lets a simulation reuse one engine across
thousands of replications.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import counting
from .design import Design, InfeasibleConditioningError, sample_conditional
from .exposure import ExposureSpec, exposure_on_subset
from .graph import AdjacencyGraph

DEFAULT_PROPENSITY_ENUM_CAP = 100_000
DEFAULT_PAIR_UNION_CAP = 22
DEFAULT_PAIR_ENUM_CAP = 500_000
DEFAULT_MC_REPLICATIONS = 20_000


@dataclass(frozen=True)
class MomentBudget:
    """Caps for exact enumeration and the Monte Carlo fallback."""

    propensity_enum_cap: int = DEFAULT_PROPENSITY_ENUM_CAP
    pair_union_cap: int = DEFAULT_PAIR_UNION_CAP
    pair_enum_cap: int = DEFAULT_PAIR_ENUM_CAP
    mc_replications: int = DEFAULT_MC_REPLICATIONS
    seed: int = 0


@dataclass
class PropensityTable:
    """P(W_i = 1 | X_i = x) for x in {0, 1}, with provenance per unit.

    ``method[i]`` is "exact", "monte_carlo", or "excluded".  Excluded units
    (no neighbors, or a propensity within ``positivity_floor`` of 0 or 1 for
    either treatment value) are dropped from the weight vector downstream.
    """

    p: np.ndarray  # (n, 2): column x is P(W=1 | X=x)
    method: list
    std_error: np.ndarray  # (n, 2), NaN for exact / excluded entries
    excluded: np.ndarray  # (n,) bool
    positivity_floor: float
    mc_replications: int = 0

    @property
    def n_units(self) -> int:
        return len(self.p)

    def summary(self) -> dict:
        active = ~self.excluded
        counts = Counter(self.method)
        out = {
            "excluded_units": int(self.excluded.sum()),
            "method_counts": dict(counts),
            "positivity_floor": self.positivity_floor,
        }
        if active.any():
            out["min_propensity"] = float(self.p[active].min())
            out["max_propensity"] = float(self.p[active].max())
        return out


@dataclass
class MomentMatrix:
    """Symmetric matrix of E[u_i u_j | X_i, X_j] at the observed treatments."""

    q: np.ndarray
    method_counts: dict
    mc_standard_errors: dict = field(default_factory=dict)

    @property
    def n_units(self) -> int:
        return len(self.q)

    def summary(self) -> dict:
        out = {"method_counts": dict(self.method_counts)}
        if self.mc_standard_errors:
            ses = np.array(list(self.mc_standard_errors.values()))
            out["mc_entry_se_max"] = float(ses.max())
            out["mc_entry_se_mean"] = float(ses.mean())
        return out


class ExposureMomentEngine:
    """Exact propensities and pairwise exposure laws with structural caching.

    Structurally identical units (same stratum pools, neighbor-class layout,
    and threshold) share one computation, as do structurally identical pairs.
    """

    def __init__(self, design: Design, graph: AdjacencyGraph, spec: ExposureSpec):
        if graph.n_units != design.n_units:
            raise ValueError("graph and design disagree on the number of units")
        self.design = design
        self.graph = graph
        self.spec = spec
        self._unit_keys: dict = {}
        self._unit_tables: dict = {}
        self._pair_tables: dict = {}

    # -- structural keys ---------------------------------------------------

    def _group_weights(self, i: int) -> Counter:
        d = self.design
        return Counter(int(d.group_of[j]) for j in self.graph.out_neighbors[i])

    def unit_key(self, i: int):
        """Structural key for unit i's exposure law, or None if isolated."""
        if i in self._unit_keys:
            return self._unit_keys[i]
        d = self.design
        nb = self.graph.out_neighbors[i]
        if not nb:
            self._unit_keys[i] = None
            return None
        thr = self.spec.count_threshold(i, len(nb))
        weights = self._group_weights(i)
        own = int(d.group_of[i])
        a_own = weights.pop(own, 0)
        own_stratum = int(d.stratum_of_group[own])
        per_stratum: dict = {}
        for gidx, a in weights.items():
            s = int(d.stratum_of_group[gidx])
            per_stratum.setdefault(s, Counter())[a] += 1
        strata = set(per_stratum) | {own_stratum}
        records = []
        for s in strata:
            classes = tuple(
                sorted((a, 0, k) for a, k in per_stratum.get(s, {}).items())
            )
            tag = "i" if s == own_stratum else ""
            records.append(
                (
                    tag,
                    len(d.groups_by_stratum[s]),
                    int(d.n_treated_per_stratum[s]),
                    classes,
                )
            )
        records.sort(key=lambda r: (r[0] == "", r[1], r[2], r[3]))
        key = (a_own, thr, tuple(records))
        self._unit_keys[i] = key
        return key

    def pair_key(self, i: int, j: int):
        """Structural key for the joint exposure law of a distinct pair."""
        d = self.design
        g_i, g_j = int(d.group_of[i]), int(d.group_of[j])
        same_group = g_i == g_j
        wa = self._group_weights(i)
        wb = self._group_weights(j)
        a_own = wa.pop(g_i, 0)
        a_other = 0 if same_group else wa.pop(g_j, 0)
        b_own = wb.pop(g_j, 0)
        b_other = 0 if same_group else wb.pop(g_i, 0)
        thr_i = self.spec.count_threshold(i, max(self.graph.out_degree(i), 1))
        thr_j = self.spec.count_threshold(j, max(self.graph.out_degree(j), 1))
        per_stratum: dict = {}
        for gidx in set(wa) | set(wb):
            s = int(d.stratum_of_group[gidx])
            cls = (wa.get(gidx, 0), wb.get(gidx, 0))
            per_stratum.setdefault(s, Counter())[cls] += 1
        s_i = int(d.stratum_of_group[g_i])
        s_j = int(d.stratum_of_group[g_j])
        strata = set(per_stratum) | {s_i, s_j}
        records = []
        for s in strata:
            classes = tuple(
                sorted((a, b, k) for (a, b), k in per_stratum.get(s, {}).items())
            )
            if s == s_i and s == s_j:
                tag = "ij"
            elif s == s_i:
                tag = "i"
            elif s == s_j:
                tag = "j"
            else:
                tag = ""
            records.append(
                (
                    tag,
                    len(d.groups_by_stratum[s]),
                    int(d.n_treated_per_stratum[s]),
                    classes,
                )
            )
        records.sort(key=lambda r: (r[0] == "", r[0], r[1], r[2], r[3]))
        return (same_group, a_own, a_other, b_own, b_other, thr_i, thr_j, tuple(records))

    # -- laws ----------------------------------------------------------------

    def propensity(self, i: int, enum_cap: int = DEFAULT_PROPENSITY_ENUM_CAP) -> np.ndarray:
        """[P(W_i=1 | X_i=0), P(W_i=1 | X_i=1)], exactly."""
        key = self.unit_key(i)
        if key is None:
            v = float(self.spec.empty_value)
            return np.array([v, v])
        if key not in self._unit_tables:
            size = counting.enumeration_size(key[2])
            if size > enum_cap:
                raise counting.EnumerationCapExceeded(size, enum_cap)
            self._unit_tables[key] = counting.exposure_probability(key)
        return self._unit_tables[key]

    def joint_table(
        self,
        i: int,
        j: int,
        union_cap: int = DEFAULT_PAIR_UNION_CAP,
        enum_cap: int = DEFAULT_PAIR_ENUM_CAP,
    ) -> np.ndarray:
        """(2,2,2,2) array of P(W_i=w1, W_j=w2 | X_i=x1, X_j=x2).

        The cap counts the randomization groups the law depends on (equal to
        the joint unit neighborhood under unit-level designs; neighbor
        clusters under cluster designs).
        """
        if i == j:
            raise ValueError("pair law requires two distinct units")
        d = self.design
        union = (set(self.graph.out_neighbors[i]) | set(self.graph.out_neighbors[j])) - {i, j}
        groups = {int(d.group_of[k]) for k in union}
        groups -= {int(d.group_of[i]), int(d.group_of[j])}
        if len(groups) > union_cap:
            raise counting.EnumerationCapExceeded(len(groups), union_cap)
        key = self.pair_key(i, j)
        if key not in self._pair_tables:
            size = counting.enumeration_size(key[7])
            if size > enum_cap:
                raise counting.EnumerationCapExceeded(size, enum_cap)
            self._pair_tables[key] = counting.joint_exposure_table(key)
        return self._pair_tables[key]

    def table_from_key(self, key) -> np.ndarray:
        if key not in self._pair_tables:
            self._pair_tables[key] = counting.joint_exposure_table(key)
        return self._pair_tables[key]


# -- public operations -------------------------------------------------------


def exact_propensity(
    design: Design,
    graph: AdjacencyGraph,
    spec: ExposureSpec,
    i: int,
    x: int,
    enum_cap: int = DEFAULT_PROPENSITY_ENUM_CAP,
    engine: ExposureMomentEngine | None = None,
) -> float:
    """P(W_i = 1 | X_i = x) by exact per-stratum hypergeometric counting.

    Raises ``EnumerationCapExceeded`` when the configuration count is above
    ``enum_cap``; callers fall back to ``mc_propensity``.
    """
    engine = engine or ExposureMomentEngine(design, graph, spec)
    return float(engine.propensity(i, enum_cap)[int(x)])


def mc_propensity(
    design: Design,
    graph: AdjacencyGraph,
    spec: ExposureSpec,
    i: int,
    x: int,
    replications: int,
    seed,
) -> tuple[float, float]:
    """Monte Carlo estimate of P(W_i = 1 | X_i = x) with its binomial SE."""
    if replications < 1:
        raise ValueError("replications must be >= 1")
    rng = np.random.default_rng(seed)
    nb = graph.out_array(i)
    if nb.size == 0:
        return float(spec.empty_value), 0.0
    thr = spec.count_threshold(i, nb.size)
    hits = 0
    for _ in range(replications):
        draw = sample_conditional(design, {i: x}, rng)
        if int(draw[nb].sum()) >= thr:
            hits += 1
    p_hat = hits / replications
    se = float(np.sqrt(p_hat * (1 - p_hat) / replications))
    return p_hat, se


def build_propensities(
    design: Design,
    graph: AdjacencyGraph,
    spec: ExposureSpec,
    positivity_floor: float = 0.01,
    budget: MomentBudget | None = None,
    engine: ExposureMomentEngine | None = None,
) -> PropensityTable:
    """Propensities for every unit: exact where the cap allows, else MC.

    Exclusion (isolated units, and units whose exposure law is within
    ``positivity_floor`` of degenerate for either treatment value) depends
    only on the design, graph, and exposure rule, never on observed data.
    """
    budget = budget or MomentBudget()
    engine = engine or ExposureMomentEngine(design, graph, spec)
    n = design.n_units
    p = np.zeros((n, 2))
    se = np.full((n, 2), np.nan)
    method = ["exact"] * n
    excluded = np.zeros(n, dtype=bool)
    for i in range(n):
        if graph.out_degree(i) == 0:
            p[i] = float(spec.empty_value)
            method[i] = "excluded"
            excluded[i] = True
            continue
        try:
            p[i] = engine.propensity(i, budget.propensity_enum_cap)
        except counting.EnumerationCapExceeded:
            for x in (0, 1):
                p[i, x], se[i, x] = mc_propensity(
                    design,
                    graph,
                    spec,
                    i,
                    x,
                    budget.mc_replications,
                    np.random.SeedSequence((budget.seed, 7, i, x)),
                )
            method[i] = "monte_carlo"
        lo, hi = positivity_floor, 1 - positivity_floor
        if not (lo <= p[i, 0] <= hi and lo <= p[i, 1] <= hi):
            excluded[i] = True
            method[i] = "excluded"
    return PropensityTable(
        p=p,
        method=method,
        std_error=se,
        excluded=excluded,
        positivity_floor=positivity_floor,
        mc_replications=budget.mc_replications,
    )


def exact_pair_moment(
    design: Design,
    graph: AdjacencyGraph,
    spec: ExposureSpec,
    weights,
    i: int,
    j: int,
    x_i: int,
    x_j: int,
    budget: MomentBudget | None = None,
    engine: ExposureMomentEngine | None = None,
) -> float:
    """E[u_i u_j | X_i = x_i, X_j = x_j] by exact counting.

    ``weights`` carries the per-unit value table u_i(x, w) and the exclusion
    mask (see ``statistic.build_weights``).  Raises
    ``EnumerationCapExceeded`` past the cap and
    ``InfeasibleConditioningError`` for impossible (x_i, x_j).
    """
    budget = budget or MomentBudget()
    if weights.mask[i] or weights.mask[j]:
        return 0.0
    engine = engine or ExposureMomentEngine(design, graph, spec)
    table = engine.joint_table(i, j, budget.pair_union_cap, budget.pair_enum_cap)
    cell = table[int(x_i), int(x_j)]
    if np.isnan(cell).any():
        raise InfeasibleConditioningError(
            f"treatments ({x_i}, {x_j}) are jointly infeasible for units ({i}, {j})"
        )
    uv_i = weights.values[i, int(x_i)]
    uv_j = weights.values[j, int(x_j)]
    return float(sum(cell[w1, w2] * uv_i[w1] * uv_j[w2] for w1 in (0, 1) for w2 in (0, 1)))


def exact_diagonal_moment(
    propensities: PropensityTable, weights, i: int, x_i: int
) -> float:
    """E[u_i^2 | X_i = x_i]."""
    if weights.mask[i]:
        return 0.0
    p1 = propensities.p[i, int(x_i)]
    uv = weights.values[i, int(x_i)]
    return float(p1 * uv[1] ** 2 + (1 - p1) * uv[0] ** 2)


def mc_pair_moment(
    design: Design,
    graph: AdjacencyGraph,
    spec: ExposureSpec,
    weights,
    i: int,
    j: int,
    x_i: int,
    x_j: int,
    replications: int,
    seed,
) -> tuple[float, float]:
    """Monte Carlo fallback for one pair moment; returns (estimate, SE).

    The stream is derived from (seed, x_i, x_j) only, so pairs sharing a
    treatment cell see common random numbers.
    """
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), int(x_i), int(x_j))))
    nb_i = graph.out_array(i)
    nb_j = graph.out_array(j)
    thr_i = spec.count_threshold(i, max(nb_i.size, 1))
    thr_j = spec.count_threshold(j, max(nb_j.size, 1))
    vals = np.empty(replications)
    for r in range(replications):
        draw = sample_conditional(design, {i: x_i, j: x_j}, rng)
        w_i = spec.empty_value if nb_i.size == 0 else int(draw[nb_i].sum() >= thr_i)
        w_j = spec.empty_value if nb_j.size == 0 else int(draw[nb_j].sum() >= thr_j)
        vals[r] = weights.values[i, x_i, w_i] * weights.values[j, x_j, w_j]
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / np.sqrt(replications)) if replications > 1 else np.inf
    return est, se


def build_moment_matrix(
    design: Design,
    graph: AdjacencyGraph,
    spec: ExposureSpec,
    propensities: PropensityTable,
    weights,
    x_observed: np.ndarray,
    budget: MomentBudget | None = None,
    engine: ExposureMomentEngine | None = None,
) -> MomentMatrix:
    """Assemble E[u_i u_j | X_i, X_j] at the observed treatment vector.

    Exact entries wherever enumeration fits the budget, Monte Carlo beyond
    it; excluded units contribute zero rows and columns.  A vectorized path
    covers non-interacting pairs under single-stratum unit-level designs.
    """
    budget = budget or MomentBudget()
    engine = engine or ExposureMomentEngine(design, graph, spec)
    x = np.asarray(x_observed, dtype=np.int64)
    n = design.n_units
    q = np.zeros((n, n))
    active = ~weights.mask
    mc_ses: dict = {}

    unit_level = design.n_strata == 1 and design.n_groups == design.n_units
    near_mask = None
    if unit_level and n > 1:
        near_mask = _fast_far_pairs(engine, graph, spec, weights, x, q, active)

    n_mc = 0
    n_near_exact = 0
    uvx = weights.values[np.arange(n), x]  # (n, 2): u_i(x_i, w)
    for i in range(n):
        if not active[i]:
            continue
        q[i, i] = exact_diagonal_moment(propensities, weights, i, int(x[i]))
        if near_mask is not None:
            js = np.flatnonzero(near_mask[i, i + 1 :]) + i + 1
        else:
            js = np.arange(i + 1, n)
        for j in js:
            j = int(j)
            if not active[j]:
                continue
            try:
                table = engine.joint_table(i, j, budget.pair_union_cap, budget.pair_enum_cap)
                cell = table[x[i], x[j]]
                val = float(
                    cell[0, 0] * uvx[i, 0] * uvx[j, 0]
                    + cell[0, 1] * uvx[i, 0] * uvx[j, 1]
                    + cell[1, 0] * uvx[i, 1] * uvx[j, 0]
                    + cell[1, 1] * uvx[i, 1] * uvx[j, 1]
                )
                n_near_exact += 1
            except counting.EnumerationCapExceeded:
                val, se = mc_pair_moment(
                    design, graph, spec, weights, i, j, int(x[i]), int(x[j]),
                    budget.mc_replications, budget.seed,
                )
                n_mc += 1
                mc_ses[(i, j)] = se
            q[i, j] = val
            q[j, i] = val

    n_active = int(active.sum())
    total_upper = n * (n + 1) // 2
    active_upper = n_active * (n_active + 1) // 2
    counts = {
        "exact": active_upper - n_mc,
        "monte_carlo": n_mc,
        "excluded": total_upper - active_upper,
    }
    return MomentMatrix(q=q, method_counts=counts, mc_standard_errors=mc_ses)


def _fast_far_pairs(engine, graph, spec, weights, x, q, active) -> np.ndarray:
    """Fill far-pair entries of q in place; return the near-pair mask.

    Far pairs under a single-stratum unit-level design: no edge in either
    direction and no shared neighbor.  Their joint law depends only on each
    unit's (degree, threshold) profile, so one table per profile pair covers
    all of them.
    """
    from scipy import sparse

    n = graph.n_units
    a = graph.to_csr()
    interact = (a + a.T + a @ a.T).astype(bool)
    near = np.asarray(interact.todense())
    np.fill_diagonal(near, True)

    d = engine.design
    n_s = len(d.groups_by_stratum[0])
    t_s = int(d.n_treated_per_stratum[0])
    degrees = np.array([graph.out_degree(i) for i in range(n)])
    thresholds = np.array(
        [spec.count_threshold(i, max(int(degrees[i]), 1)) for i in range(n)]
    )
    profiles = {}
    profile_idx = np.zeros(n, dtype=np.int64)
    for i in range(n):
        prof = (int(degrees[i]), int(thresholds[i]))
        profile_idx[i] = profiles.setdefault(prof, len(profiles))
    inv = {v: k for k, v in profiles.items()}
    n_prof = len(profiles)
    tables = np.zeros((n_prof, n_prof, 2, 2, 2, 2))
    for pi in range(n_prof):
        d_i, thr_i = inv[pi]
        for pj in range(n_prof):
            d_j, thr_j = inv[pj]
            classes = tuple(
                c for c in ((1, 0, d_i), (0, 1, d_j)) if c[2] > 0
            )
            key = (
                False, 0, 0, 0, 0, thr_i, thr_j,
                (("ij", n_s, t_s, classes),),
            )
            tables[pi, pj] = engine.table_from_key(key)

    uvx = weights.values[np.arange(n), x]  # (n, 2)
    chunk = max(1, min(n, 2 ** 22 // max(n, 1)))
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        g = tables[profile_idx[start:stop][:, None], profile_idx[None, :],
                   x[start:stop][:, None], x[None, :]]  # (chunk, n, 2, 2)
        block = np.einsum("ijab,ia,jb->ij", g, uvx[start:stop], uvx)
        block[near[start:stop]] = 0.0
        inactive = ~active
        block[inactive[start:stop], :] = 0.0
        block[:, inactive] = 0.0
        q[start:stop] = block
    return near
