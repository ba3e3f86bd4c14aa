import numpy as np
import pytest

from spillprev.design import Design, enumerate_assignments, sample_assignment
from spillprev.exposure import ExposureSpec, compute_exposure
from spillprev.graph import build_graph
from spillprev.oracle import exact_contrast_variance, isolated_outcomes
from spillprev.propensity import ExposureMomentEngine, build_moment_matrix, build_propensities
from spillprev.statistic import (
    affected_count,
    build_weights,
    contrast,
    holder_bound,
    point_estimate,
    sqrt_plus,
    variance_estimate,
)
from spillprev.synthetic import random_small_instance


def small_table(p_values, excluded=None):
    """Hand-built propensity table for formula tests."""
    from spillprev.propensity import PropensityTable

    p = np.asarray(p_values, dtype=float)
    n = len(p)
    excl = np.zeros(n, dtype=bool) if excluded is None else np.asarray(excluded)
    return PropensityTable(
        p=np.column_stack([p, p]),
        method=["exact"] * n,
        std_error=np.full((n, 2), np.nan),
        excluded=excl,
        positivity_floor=0.01,
    )


def test_ipw_weight_formula():
    table = small_table([0.5])
    wv = build_weights("ipw", np.array([1]), table, np.array([0]))
    assert wv.u[0] == pytest.approx(2.0)
    wv0 = build_weights("ipw", np.array([0]), table, np.array([0]))
    assert wv0.u[0] == pytest.approx(-2.0)


def test_balanced_weight_formula():
    table = small_table([0.25])
    wv = build_weights("balanced", np.array([1]), table, np.array([1]))
    assert wv.u[0] == pytest.approx(1.0)  # odds capped at 1
    wv0 = build_weights("balanced", np.array([0]), table, np.array([1]))
    assert wv0.u[0] == pytest.approx(-1 / 3)
    # "alt" is accepted as an alias
    wv_alias = build_weights("alt", np.array([1]), table, np.array([1]))
    assert wv_alias.variant == "balanced"
    assert wv_alias.u[0] == wv.u[0]


def test_masked_unit_zeroed():
    table = small_table([0.5, 0.5], excluded=[False, True])
    wv = build_weights("ipw", np.array([1, 1]), table, np.array([0, 0]))
    assert wv.u[1] == 0.0


def test_degenerate_propensity_rejected():
    table = small_table([1.0])
    with pytest.raises(ValueError, match="degenerate propensity"):
        build_weights("ipw", np.array([1]), table, np.array([0]))


def test_balanced_weights_bounded_by_one():
    rng = np.random.default_rng(1)
    p = rng.uniform(0.05, 0.95, size=50)
    table = small_table(p)
    w = rng.integers(0, 2, size=50)
    wv = build_weights("balanced", w, table, np.zeros(50, dtype=int))
    assert np.abs(wv.u).max() <= 1.0 + 1e-12


def test_ipw_weights_bounded_by_positivity():
    rng = np.random.default_rng(2)
    eps = 0.1
    p = rng.uniform(eps, 1 - eps, size=50)
    table = small_table(p)
    w = rng.integers(0, 2, size=50)
    wv = build_weights("ipw", w, table, np.zeros(50, dtype=int))
    assert np.abs(wv.u).max() <= 1 / eps + 1e-9


def test_contrast_inner_product():
    table = small_table([0.5, 0.5, 0.5])
    wv = build_weights("ipw", np.array([1, 0, 1]), table, np.zeros(3, dtype=int))
    assert contrast(wv, np.array([1.0, 0.0, 1.0])) == pytest.approx(4.0)
    assert contrast(wv, np.zeros(3)) == 0.0
    with pytest.raises(ValueError):
        contrast(wv, np.zeros(4))


def test_contrast_mean_zero_over_design():
    d = Design.complete(4, 2)
    g = build_graph([(0, 2), (1, 3)], 4)
    spec = ExposureSpec.count(np.ones(4))
    table = build_propensities(d, g, spec)
    theta = np.ones(4)
    taus = []
    for x in enumerate_assignments(d):
        w = compute_exposure(g, spec, x)
        wv = build_weights("ipw", w, table, x)
        taus.append(contrast(wv, theta))
    assert abs(np.mean(taus)) <= 1e-12


def test_variance_estimate_quadratic_form():
    q = np.diag([1.0, 1.0, 2.0])
    assert variance_estimate(q, np.array([1.0, 1.0, 0.0])) == pytest.approx(2.0)
    assert variance_estimate(q, np.zeros(3)) == 0.0
    with pytest.raises(ValueError):
        variance_estimate(q, np.zeros(4))


def test_variance_identity_by_enumeration():
    # mean of the estimator over the support equals the true variance
    design, graph, spec, model = random_small_instance(seed=41, n=10, n_treated=5, d_max=3)
    engine = ExposureMomentEngine(design, graph, spec)
    table = build_propensities(design, graph, spec, engine=engine)

    def wb(x, w):
        return build_weights("ipw", w, table, x).u

    var_true = exact_contrast_variance(design, graph, spec, wb, model)
    values = []
    for x in enumerate_assignments(design, 300):
        w = compute_exposure(graph, spec, x)
        wv = build_weights("ipw", w, table, x)
        mm = build_moment_matrix(design, graph, spec, table, wv, x, engine=engine)
        theta = isolated_outcomes(model, x)
        values.append(variance_estimate(mm.q, theta))
    assert np.mean(values) == pytest.approx(var_true, abs=1e-8)


def test_sqrt_plus():
    assert sqrt_plus(4.0) == 2.0
    assert sqrt_plus(0.0) == 0.0
    assert sqrt_plus(-1.0) == float("-inf")


def test_point_estimate_hand_value():
    table = small_table([0.5, 0.5])
    wv = build_weights("ipw", np.array([1, 0]), table, np.zeros(2, dtype=int))
    assert wv.u.tolist() == [2.0, -2.0]
    est = point_estimate(wv, np.array([1.0, 0.0]))
    assert est["units"] == pytest.approx(1.0)
    assert est["fraction"] == pytest.approx(0.5)


def test_point_estimate_cancellation():
    table = small_table([0.5, 0.5])
    wv = build_weights("ipw", np.array([1, 0]), table, np.zeros(2, dtype=int))
    est = point_estimate(wv, np.array([1.0, 1.0]))
    assert est["units"] == pytest.approx(0.0)


def test_point_estimate_rejects_all_zero_weights():
    table = small_table([0.5], excluded=[True])
    wv = build_weights("ipw", np.array([1]), table, np.array([0]))
    with pytest.raises(ValueError, match="no informative"):
        point_estimate(wv, np.array([1.0]))


def test_holder_bound_examples():
    table = small_table([0.5, 0.5])
    wv = build_weights("ipw", np.array([1, 1]), table, np.zeros(2, dtype=int))
    wv.u = np.array([1.0, 1.0])
    y = np.array([1.0, 1.0])
    assert holder_bound(wv, y, np.array([1.0, 1.0])) == 0.0
    assert holder_bound(wv, y, np.array([0.0, 0.0])) == pytest.approx(2.0)
    wv.u = np.array([2.0, 1.0])
    assert holder_bound(wv, y, np.array([0.0, 0.0])) == pytest.approx(1.5)


def test_affected_count():
    assert affected_count(np.array([1, 0, 1]), np.array([1, 0, 1])) == 0
    assert affected_count(np.array([1, 0, 1]), np.array([0, 0, 1])) == 1
    assert affected_count(np.ones(5, dtype=int), np.zeros(5, dtype=int)) == 5
    with pytest.raises(ValueError):
        affected_count(np.array([2, 0]), np.array([0, 0]))


def test_holder_bound_below_affected_count_fuzz():
    rng = np.random.default_rng(55)

    class Stub:
        pass

    for _ in range(300):
        n = int(rng.integers(2, 30))
        wv = Stub()
        wv.u = rng.normal(size=n)
        wv.sup_norm = lambda u=wv: float(np.abs(u.u).max())
        y = rng.integers(0, 2, size=n).astype(float)
        theta = rng.integers(0, 2, size=n).astype(float)
        if np.abs(wv.u).max() == 0:
            continue
        assert holder_bound(wv, y, theta) <= affected_count(y.astype(int), theta.astype(int)) + 1e-12


def test_holder_tightness_conditions():
    # constant |u| and signs aligned with y - theta make the bound exact
    rng = np.random.default_rng(56)

    class Stub:
        pass

    for _ in range(100):
        n = int(rng.integers(2, 25))
        y = rng.integers(0, 2, size=n).astype(float)
        theta = rng.integers(0, 2, size=n).astype(float)
        signs = np.where(y - theta != 0, np.sign(y - theta), rng.choice([-1.0, 1.0], size=n))
        wv = Stub()
        wv.u = signs
        wv.sup_norm = lambda u=wv: float(np.abs(u.u).max())
        assert holder_bound(wv, y, theta) == pytest.approx(
            affected_count(y.astype(int), theta.astype(int)), abs=1e-10
        )


def test_point_estimate_error_bounded_by_centering_term():
    # |estimate - oracle| <= |u @ (theta - 1/2)| / max|u|
    rng = np.random.default_rng(57)

    class Stub:
        pass

    for _ in range(200):
        n = int(rng.integers(2, 30))
        u = rng.normal(size=n)
        if np.abs(u).max() == 0:
            continue
        wv = Stub()
        wv.u = u
        wv.sup_norm = lambda w=wv: float(np.abs(w.u).max())
        y = rng.integers(0, 2, size=n).astype(float)
        theta = rng.integers(0, 2, size=n).astype(float)
        est = point_estimate(wv, y)["units"]
        oracle = holder_bound(wv, y, theta)
        cap = abs(u @ (theta - 0.5)) / np.abs(u).max()
        assert abs(est - oracle) <= cap + 1e-10
