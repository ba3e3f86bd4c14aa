import numpy as np
import pytest

from spillprev.counting import EnumerationCapExceeded
from spillprev.design import Design, InfeasibleConditioningError, enumerate_assignments
from spillprev.exposure import ExposureSpec, compute_exposure
from spillprev.graph import build_graph
from spillprev.propensity import (
    ExposureMomentEngine,
    MomentBudget,
    build_moment_matrix,
    build_propensities,
    exact_diagonal_moment,
    exact_pair_moment,
    exact_propensity,
    mc_pair_moment,
    mc_propensity,
)
from spillprev.oracle import exact_exposure_law, exact_pair_law
from spillprev.statistic import build_weights
from spillprev.synthetic import random_small_instance, ring_graph


def worked_example():
    """Complete N=4 T=2; unit 0 watches unit 2, unit 1 watches unit 3."""
    g = build_graph([(0, 2), (1, 3)], 4)
    d = Design.complete(4, 2)
    spec = ExposureSpec.count(np.ones(4))
    return d, g, spec


def test_exact_propensity_single_neighbor():
    d = Design.complete(4, 2)
    g = build_graph([(0, 1)], 4)
    spec = ExposureSpec.count(np.ones(4))
    assert exact_propensity(d, g, spec, 0, 1) == pytest.approx(1 / 3, abs=1e-12)
    assert exact_propensity(d, g, spec, 0, 0) == pytest.approx(2 / 3, abs=1e-12)


def test_exact_propensity_zero_threshold():
    d = Design.complete(4, 2)
    g = build_graph([(0, 1)], 4)
    spec = ExposureSpec.count(np.zeros(4))
    assert exact_propensity(d, g, spec, 0, 1) == 1.0
    assert exact_propensity(d, g, spec, 0, 0) == 1.0


def test_mc_propensity_agrees_with_exact():
    d, g, spec = worked_example()
    est, se = mc_propensity(d, g, spec, 0, 1, replications=20_000, seed=1)
    assert abs(est - 1 / 3) <= 3 * max(se, 1e-4)


def test_mc_propensity_impossible_threshold():
    d = Design.complete(4, 2)
    g = build_graph([(0, 1)], 4)
    spec = ExposureSpec.count(np.full(4, 2.0))  # one neighbor can never reach 2
    est, se = mc_propensity(d, g, spec, 0, 1, replications=200, seed=0)
    assert est == 0.0


def test_mc_propensity_zero_replications_rejected():
    d, g, spec = worked_example()
    with pytest.raises(ValueError):
        mc_propensity(d, g, spec, 0, 1, replications=0, seed=0)


def test_pair_moment_worked_example():
    d, g, spec = worked_example()
    table = build_propensities(d, g, spec)
    x = np.array([1, 0, 0, 1])
    w = compute_exposure(g, spec, x)
    weights = build_weights("ipw", w, table, x)
    m = exact_pair_moment(d, g, spec, weights, 0, 1, 1, 0)
    # conditioning leaves one of units {2,3} treated w.p. 1/2;
    # u_0 in {3, -1.5}, u_1 in {1.5, -3}: mean of -9 and -2.25
    assert m == pytest.approx(-5.625, abs=1e-10)


def test_pair_moment_excluded_unit_is_zero():
    d = Design.complete(4, 2)
    g = build_graph([(1, 3)], 4)  # unit 0 isolated
    spec = ExposureSpec.count(np.ones(4))
    table = build_propensities(d, g, spec)
    x = np.array([1, 0, 0, 1])
    w = compute_exposure(g, spec, x)
    weights = build_weights("ipw", w, table, x)
    assert weights.mask[0]
    assert exact_pair_moment(d, g, spec, weights, 0, 1, 1, 0) == 0.0


def test_diagonal_moment_worked_example():
    d, g, spec = worked_example()
    table = build_propensities(d, g, spec)
    x = np.array([1, 0, 0, 1])
    w = compute_exposure(g, spec, x)
    weights = build_weights("ipw", w, table, x)
    assert exact_diagonal_moment(table, weights, 0, 1) == pytest.approx(4.5, abs=1e-10)


def test_pair_moment_infeasible_conditioning():
    d = Design.cluster([0, 0, 1, 1], [0, 0], [1])
    g = build_graph([(0, 2), (1, 3), (2, 0), (3, 1)], 4)
    spec = ExposureSpec.count(np.ones(4))
    table = build_propensities(d, g, spec)
    x = np.array([1, 1, 0, 0])
    w = compute_exposure(g, spec, x)
    weights = build_weights("ipw", w, table, x)
    with pytest.raises(InfeasibleConditioningError):
        exact_pair_moment(d, g, spec, weights, 0, 1, 1, 0)  # same cluster, opposite values


def test_pair_cap_falls_back():
    d = Design.complete(30, 15)
    g = ring_graph(30, 4)
    spec = ExposureSpec.count(np.full(30, 2.0))
    table = build_propensities(d, g, spec)
    x = np.zeros(30, dtype=int)
    x[:15] = 1
    w = compute_exposure(g, spec, x)
    weights = build_weights("ipw", w, table, x)
    budget = MomentBudget(pair_union_cap=3)
    with pytest.raises(EnumerationCapExceeded):
        exact_pair_moment(d, g, spec, weights, 0, 1, int(x[0]), int(x[1]), budget=budget)
    mm = build_moment_matrix(d, g, spec, table, weights, x, budget=budget)
    assert mm.method_counts["monte_carlo"] > 0
    assert mm.mc_standard_errors


def test_all_units_excluded_gives_zero_matrix():
    d = Design.complete(4, 2)
    g = build_graph([], 4)
    spec = ExposureSpec.count(np.ones(4))
    table = build_propensities(d, g, spec)
    x = np.array([1, 1, 0, 0])
    w = compute_exposure(g, spec, x)
    weights = build_weights("ipw", w, table, x)
    mm = build_moment_matrix(d, g, spec, table, weights, x)
    assert (mm.q == 0).all()
    assert mm.method_counts["excluded"] == 10  # upper triangle incl. diagonal


def test_moment_matrix_symmetric():
    design, graph, spec, model = random_small_instance(seed=3, n=10, n_treated=5)
    table = build_propensities(design, graph, spec)
    x = model.outcomes(np.zeros(10, dtype=int)) * 0
    x = np.array([1] * 5 + [0] * 5)
    w = compute_exposure(graph, spec, x)
    weights = build_weights("ipw", w, table, x)
    mm = build_moment_matrix(design, graph, spec, table, weights, x)
    assert np.abs(mm.q - mm.q.T).max() == 0.0


def test_moment_matrix_matches_enumeration_oracle():
    # N=10 complete T=5 d<=3: every entry vs the 252-assignment average
    design, graph, spec, model = random_small_instance(seed=17, n=10, n_treated=5, d_max=3)
    engine = ExposureMomentEngine(design, graph, spec)
    table = build_propensities(design, graph, spec, engine=engine)
    x = next(iter(enumerate_assignments(design, 300)))
    w = compute_exposure(graph, spec, x)
    weights = build_weights("ipw", w, table, x)
    mm = build_moment_matrix(design, graph, spec, table, weights, x, engine=engine)
    for i in range(10):
        for j in range(i, 10):
            if weights.mask[i] or weights.mask[j]:
                assert mm.q[i, j] == 0.0
                continue
            ref = exact_pair_law(design, graph, spec, weights.values, i, j, int(x[i]), int(x[j]))
            assert mm.q[i, j] == pytest.approx(ref, abs=1e-10)


def test_propensity_matches_enumeration_oracle():
    design, graph, spec, _ = random_small_instance(seed=29, n=10, n_treated=5, d_max=3)
    engine = ExposureMomentEngine(design, graph, spec)
    table = build_propensities(design, graph, spec, engine=engine)
    for i in range(10):
        if table.excluded[i]:
            continue
        for x_val in (0, 1):
            ref = exact_exposure_law(design, graph, spec, i, x_val)
            assert table.p[i, x_val] == pytest.approx(ref, abs=1e-10)


def test_mean_zero_under_exact_engine():
    design, graph, spec, _ = random_small_instance(seed=31, n=8, n_treated=4, d_max=3)
    table = build_propensities(design, graph, spec)
    support = list(enumerate_assignments(design, 1000))
    for variant in ("ipw", "balanced"):
        from spillprev.statistic import weight_value_table

        values = weight_value_table(variant, table)
        for i in range(8):
            if table.excluded[i]:
                continue
            for x_val in (0, 1):
                terms = [
                    values[i, x_val, int(compute_exposure(graph, spec, a)[i])]
                    for a in support
                    if int(a[i]) == x_val
                ]
                assert abs(np.mean(terms)) <= 1e-10


def test_exact_vs_mc_pair_moment():
    d, g, spec = worked_example()
    table = build_propensities(d, g, spec)
    x = np.array([1, 0, 0, 1])
    w = compute_exposure(g, spec, x)
    weights = build_weights("ipw", w, table, x)
    est, se = mc_pair_moment(d, g, spec, weights, 0, 1, 1, 0, replications=20_000, seed=4)
    assert abs(est - (-5.625)) <= 3 * se


def test_pair_moment_decays_with_population():
    # non-interacting pairs have |Q_ij| = O(1/N): doubling N halves it
    mags = {}
    for n in (40, 80):
        g = ring_graph(n, 2)
        d = Design.complete(n, n // 2)
        spec = ExposureSpec.count(np.ones(n))
        engine = ExposureMomentEngine(d, g, spec)
        table = build_propensities(d, g, spec, engine=engine)
        x = np.zeros(n, dtype=int)
        x[::2] = 1
        w = compute_exposure(g, spec, x)
        weights = build_weights("ipw", w, table, x)
        mm = build_moment_matrix(d, g, spec, table, weights, x, engine=engine)
        i, j = 0, n // 2  # diametrically opposite on the ring: fully separated
        mags[n] = abs(mm.q[i, j])
    ratio = mags[40] / mags[80]
    assert 1.5 <= ratio <= 3.0


def test_cluster_design_pair_moments_match_enumeration():
    d = Design.cluster([0, 0, 1, 1, 2, 2, 3, 3], [0, 0, 0, 0], [2])
    edges = []
    for i in range(8):
        for j in range(8):
            if i // 2 != j // 2 and (i + j) % 3 == 0 and i != j:
                edges.append((i, j))
    g = build_graph(edges, 8)
    spec = ExposureSpec.count(np.ones(8))
    engine = ExposureMomentEngine(d, g, spec)
    table = build_propensities(d, g, spec, engine=engine)
    x = next(iter(enumerate_assignments(d, 100)))
    w = compute_exposure(g, spec, x)
    weights = build_weights("ipw", w, table, x)
    mm = build_moment_matrix(d, g, spec, table, weights, x, engine=engine)
    for i in range(8):
        if table.excluded[i]:
            continue
        for x_val in (0, 1):
            ref = exact_exposure_law(d, g, spec, i, x_val)
            assert table.p[i, x_val] == pytest.approx(ref, abs=1e-10)
        for j in range(i, 8):
            if weights.mask[i] or weights.mask[j]:
                continue
            ref = exact_pair_law(d, g, spec, weights.values, i, j, int(x[i]), int(x[j]))
            assert mm.q[i, j] == pytest.approx(ref, abs=1e-10)


def test_positivity_exclusion():
    d = Design.complete(10, 5)
    g = build_graph([(0, 1)], 10)
    spec = ExposureSpec.count(np.zeros(10))  # threshold 0: exposure certain
    table = build_propensities(d, g, spec)
    assert table.excluded[0]
    assert table.method[0] == "excluded"
