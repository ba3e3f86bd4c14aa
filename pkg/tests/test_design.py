import math

import numpy as np
import pytest

from spillprev.design import (
    Design,
    InfeasibleConditioningError,
    SupportTooLargeError,
    enumerate_assignments,
    sample_assignment,
    sample_conditional,
    support_size,
    validate_assignment,
)


def test_complete_sampler_exact_counts():
    d = Design.complete(4, 2)
    for seed in range(20):
        x = sample_assignment(d, seed)
        assert x.sum() == 2


def test_complete_sampler_uniform_over_support():
    # 60k draws over the C(4,2)=6 supports: each frequency within 3 binomial SEs
    d = Design.complete(4, 2)
    rng = np.random.default_rng(123)
    counts = {}
    draws = 60_000
    for _ in range(draws):
        x = tuple(sample_assignment(d, rng))
        counts[x] = counts.get(x, 0) + 1
    assert len(counts) == 6
    p = 1 / 6
    se = math.sqrt(p * (1 - p) / draws)
    for c in counts.values():
        assert abs(c / draws - p) <= 3 * se


def test_cluster_sampler_constant_within_cluster():
    d = Design.cluster([0, 0, 1, 1], [0, 0], [1])
    seen = set()
    for seed in range(40):
        x = tuple(sample_assignment(d, seed))
        seen.add(x)
        assert x in {(1, 1, 0, 0), (0, 0, 1, 1)}
    assert seen == {(1, 1, 0, 0), (0, 0, 1, 1)}


def test_degenerate_stratum_rejected():
    with pytest.raises(ValueError, match="degenerate"):
        Design.complete(4, 4)
    with pytest.raises(ValueError, match="degenerate"):
        Design.complete(4, 0)


def test_balance_warning():
    with pytest.warns(UserWarning, match="treated share"):
        Design.complete(20, 1, balance_fraction=0.2)


def test_conditional_one_coordinate():
    # Complete N=4 T=2, fix X_0=1: exactly one of {1,2,3} treated, uniformly
    d = Design.complete(4, 2)
    rng = np.random.default_rng(5)
    counts = np.zeros(4)
    draws = 30_000
    for _ in range(draws):
        x = sample_conditional(d, {0: 1}, rng)
        assert x[0] == 1 and x.sum() == 2
        counts += x
    freq = counts[1:] / draws
    se = math.sqrt((1 / 3) * (2 / 3) / draws)
    assert np.all(np.abs(freq - 1 / 3) <= 4 * se)


def test_conditional_two_coordinates():
    d = Design.complete(4, 2)
    rng = np.random.default_rng(6)
    ones = np.zeros(4)
    draws = 20_000
    for _ in range(draws):
        x = sample_conditional(d, {0: 1, 1: 0}, rng)
        assert x[0] == 1 and x[1] == 0 and x.sum() == 2
        ones += x
    freq = ones[2:] / draws
    se = math.sqrt(0.25 / draws)
    assert np.all(np.abs(freq - 0.5) <= 4 * se)


def test_conditional_infeasible_rejected():
    d = Design.complete(4, 1)
    with pytest.raises(InfeasibleConditioningError):
        sample_conditional(d, {0: 1, 1: 1}, 0)


def test_conditional_cluster_conflict_rejected():
    d = Design.cluster([0, 0, 1, 1], [0, 0], [1])
    with pytest.raises(InfeasibleConditioningError):
        sample_conditional(d, {0: 1, 1: 0}, 0)


def test_conditional_without_fixed_matches_marginal():
    # distribution-identical to the unconditional sampler
    d = Design.stratified([0, 0, 0, 1, 1, 1], [1, 2])
    rng = np.random.default_rng(11)
    m1 = np.zeros(6)
    m2 = np.zeros(6)
    draws = 20_000
    for _ in range(draws):
        m1 += sample_assignment(d, rng)
        m2 += sample_conditional(d, {}, rng)
    se = math.sqrt(0.25 / draws)
    assert np.all(np.abs(m1 - m2) / draws <= 5 * se)


def test_marginal_probability_matches_design():
    d = Design.stratified([0, 0, 0, 0, 1, 1], [1, 1])
    rng = np.random.default_rng(3)
    totals = np.zeros(6)
    draws = 40_000
    for _ in range(draws):
        totals += sample_assignment(d, rng)
    freq = totals / draws
    expected = np.array([0.25] * 4 + [0.5] * 2)
    se = np.sqrt(expected * (1 - expected) / draws)
    assert np.all(np.abs(freq - expected) <= 3.5 * se)


def test_enumeration_complete():
    d = Design.complete(4, 2)
    xs = list(enumerate_assignments(d))
    assert len(xs) == 6
    assert len({tuple(x) for x in xs}) == 6
    for x in xs:
        validate_assignment(d, x)


def test_enumeration_stratified():
    d = Design.stratified([0, 0, 1, 1], [1, 1])
    xs = list(enumerate_assignments(d))
    assert len(xs) == 4


def test_enumeration_cap_reports_exact_count():
    d = Design.complete(40, 20)
    with pytest.raises(SupportTooLargeError) as err:
        list(enumerate_assignments(d, cap=10**6))
    assert err.value.support_size == math.comb(40, 20)


def test_support_size_values():
    assert support_size(Design.complete(4, 2)) == 6
    assert support_size(Design.complete(50, 25)) == 126410606437752
    assert support_size(Design.cluster(list(range(5)), [0] * 5, [2])) == 10


def test_enumeration_count_equals_support_size():
    for d in (
        Design.complete(6, 2),
        Design.stratified([0, 0, 0, 1, 1], [1, 1]),
        Design.cluster([0, 0, 1, 1, 2, 2], [0, 0, 0], [1]),
    ):
        assert len(list(enumerate_assignments(d))) == support_size(d)


def test_validate_assignment_rejects_wrong_counts():
    d = Design.complete(4, 2)
    with pytest.raises(ValueError, match="treated"):
        validate_assignment(d, np.array([1, 1, 1, 0]))


def test_validate_assignment_rejects_mixed_cluster():
    d = Design.cluster([0, 0, 1, 1], [0, 0], [1])
    with pytest.raises(ValueError, match="mixed"):
        validate_assignment(d, np.array([1, 0, 0, 1]))
