import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cardset.core import InvalidInputError
from cardset.gradcheck import central_difference, check_kind, relative_error
from cardset.losses import (
    CSTND_EXP, HINGE, LOGISTIC, MAE, SQ_HINGE, SUM_EXPONENTIAL, CompSumKind, ConstrainedKind,
    all_kinds, comp_sum_grad, comp_sum_loss, constrained_grad, constrained_loss,
    cost_sensitive_batch, cost_sensitive_comp_sum, cost_sensitive_constrained, cost_sensitive_grad,
    cost_sensitive_loss, kink_distance, parse_kind, surrogate_loss,
)

GCE = CompSumKind("gce", 0.5)
RHO = ConstrainedKind("rho_margin", 1.0)
COMP = [LOGISTIC, SUM_EXPONENTIAL, GCE, MAE]
CSTND = [CSTND_EXP, HINGE, SQ_HINGE, RHO]


# naive oracles written straight from the defining formulas

def naive_comp(s, y, kind):
    u = sum(math.exp(s[j] - s[y]) for j in range(len(s)) if j != y)
    if kind.name == "logistic":
        return math.log1p(u)
    if kind.name == "sum_exponential":
        return u
    if kind.name == "mae":
        return 1 - 1 / (1 + u)
    q = kind.q
    return (1 - (1 + u) ** (-q)) / q


def naive_Phi(kind, u):
    if kind.name == "exponential":
        return math.exp(-u)
    if kind.name == "hinge":
        return max(0.0, 1 - u)
    if kind.name == "squared_hinge":
        return max(0.0, 1 - u) ** 2
    return min(max(0.0, 1 - u / kind.rho), 1.0)


def naive_cstnd(s, y, kind):
    m = sum(s) / len(s)
    return sum(naive_Phi(kind, -(s[j] - m)) for j in range(len(s)) if j != y)


def test_spec_examples_comp_sum():
    assert comp_sum_loss([0.0, 0.0], 0, LOGISTIC) == pytest.approx(math.log(2), abs=1e-15)
    assert comp_sum_loss([0.0, 0.0, 0.0], 1, SUM_EXPONENTIAL) == pytest.approx(2.0, abs=1e-15)
    assert comp_sum_loss([0.0, 0.0], 0, GCE) == pytest.approx(0.585786, abs=1e-6)
    assert comp_sum_loss([0.0, 0.0], 0, GCE) == pytest.approx(2 * (1 - math.sqrt(0.5)), abs=1e-15)
    # perfect-score limit
    assert comp_sum_loss([800.0, 0.0], 0, MAE) == 0.0
    assert comp_sum_loss([800.0, 0.0], 0, GCE) == 0.0


def test_spec_examples_constrained():
    assert constrained_loss([0.0, 0.0, 0.0], 0, CSTND_EXP) == pytest.approx(2.0)
    assert constrained_loss([2.0, -1.0, -1.0], 0, HINGE) == 0.0
    assert constrained_loss([0.0, 0.0], 0, RHO) == 1.0


def test_spec_examples_gradients():
    assert np.allclose(comp_sum_grad([0.0, 0.0], 0, LOGISTIC), [-0.5, 0.5])
    assert np.array_equal(constrained_grad([5.0, -2.5, -2.5], 0, HINGE), np.zeros(3))
    g, flagged = constrained_grad([2.0, -1.0, -1.0], 0, RHO, return_flag=True)
    assert flagged and np.all(np.isfinite(g))
    # right-derivative at the hinge corner: phi(v)=max(0,1+v) has slope 1 just right of -1
    g = constrained_grad([2.0, -1.0, -1.0], 0, HINGE)
    assert np.allclose(g, np.array([0.0, 1.0, 1.0]) - 2.0 / 3.0)


@pytest.mark.parametrize("kind", COMP)
def test_comp_sum_matches_naive(kind):
    rng = np.random.default_rng(1)
    for _ in range(300):
        n = int(rng.integers(2, 7))
        s = rng.normal(scale=2, size=n)
        y = int(rng.integers(n))
        assert comp_sum_loss(s, y, kind) == pytest.approx(naive_comp(s, y, kind), rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("kind", CSTND)
def test_constrained_matches_naive(kind):
    rng = np.random.default_rng(2)
    for _ in range(300):
        n = int(rng.integers(2, 7))
        s = rng.normal(scale=2, size=n)
        y = int(rng.integers(n))
        assert constrained_loss(s, y, kind) == pytest.approx(naive_cstnd(s, y, kind), rel=1e-12, abs=1e-12)


def test_cost_sensitive_examples():
    rng = np.random.default_rng(0)
    for kind in all_kinds():
        s = rng.normal(size=3)
        if kind in COMP:
            assert cost_sensitive_loss(s, np.ones(3), kind) == 0.0
    assert cost_sensitive_comp_sum([0.0, 0.0], [0.0, 0.0], LOGISTIC) == pytest.approx(2 * math.log(2))
    assert cost_sensitive_comp_sum([0.0, 0.0], [0.2, 0.8], LOGISTIC) == pytest.approx(math.log(2))
    for kind in CSTND:
        assert cost_sensitive_constrained(rng.normal(size=4), np.zeros(4), kind) == 0.0
    assert cost_sensitive_constrained([0.0, 0.0], [1.0, 1.0], CSTND_EXP) == pytest.approx(2.0)
    a = math.log(math.sqrt(2))
    assert cost_sensitive_constrained([a, -a], [0.5, 1.0], CSTND_EXP) == pytest.approx(1.414214, abs=1e-6)


def test_cost_sensitive_matches_weighted_sum_oracle():
    rng = np.random.default_rng(4)
    for _ in range(200):
        n = int(rng.integers(2, 6))
        s, c = rng.normal(size=n), rng.uniform(size=n)
        for kind in COMP:
            ref = sum((1 - c[k]) * naive_comp(s, k, kind) for k in range(n))
            assert cost_sensitive_loss(s, c, kind) == pytest.approx(ref, rel=1e-10, abs=1e-12)
        for kind in CSTND:
            m = s.mean()
            ref = sum(c[k] * naive_Phi(kind, -(s[k] - m)) for k in range(n))
            assert cost_sensitive_loss(s, c, kind) == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_top_k_surrogate_is_cost_sensitive_with_one_hot_complement():
    # with the cost row 1 - e_y both cost-sensitive forms reduce to the label-y loss
    rng = np.random.default_rng(5)
    for kind in all_kinds():
        s = rng.normal(size=5)
        c = np.ones(5)
        c[2] = 0.0
        assert cost_sensitive_loss(s, c, kind) == pytest.approx(
            surrogate_loss(s, 2, kind), rel=1e-12)


@pytest.mark.parametrize("kind", all_kinds(), ids=str)
def test_gradients_finite_differences(kind):
    assert check_kind(kind, 1000, seed=11).ok


@pytest.mark.parametrize("kind", all_kinds(), ids=str)
def test_cost_sensitive_gradients_finite_differences(kind):
    assert check_kind(kind, 300, seed=12, cost_sensitive=True).ok


def test_batch_agrees_with_rows():
    rng = np.random.default_rng(6)
    S, C = rng.normal(size=(20, 4)), rng.uniform(size=(20, 4))
    for kind in all_kinds():
        v, g = cost_sensitive_batch(S, C, kind)
        for i in range(20):
            assert v[i] == pytest.approx(cost_sensitive_loss(S[i], C[i], kind), rel=1e-14)
            assert np.allclose(g[i], cost_sensitive_grad(S[i], C[i], kind), atol=1e-15)


def test_gradient_at_kink_is_right_derivative():
    # centered score exactly at -rho: right-derivative of min(max(0,1+v),1) is 1
    s = np.array([1.0, -1.0, 0.0])
    c = np.array([0.0, 1.0, 0.0])
    g = cost_sensitive_grad(s, c, RHO)
    assert np.allclose(g, np.array([0.0, 1.0, 0.0]) - 1.0 / 3.0)
    assert kink_distance(s, RHO) == 0.0


finite_vec = arrays(np.float64, st.integers(2, 8), elements=st.floats(-20, 20))


@given(finite_vec, st.floats(-50, 50), st.data())
def test_translation_invariance(s, shift, data):
    y = data.draw(st.integers(0, len(s) - 1))
    c = data.draw(arrays(np.float64, len(s), elements=st.floats(0, 1)))
    for kind in (LOGISTIC, MAE, GCE):
        assert abs(comp_sum_loss(s + shift, y, kind) - comp_sum_loss(s, y, kind)) < 1e-10
        assert abs(cost_sensitive_loss(s + shift, c, kind) - cost_sensitive_loss(s, c, kind)) < 1e-9


@given(finite_vec, st.data())
def test_logistic_gradient_sums_to_zero(s, data):
    y = data.draw(st.integers(0, len(s) - 1))
    assert abs(comp_sum_grad(s, y, LOGISTIC).sum()) < 1e-12


def test_nonnegativity_10k():
    rng = np.random.default_rng(8)
    kinds = all_kinds()
    for _ in range(10_000):
        n = int(rng.integers(2, 9))
        s = rng.normal(scale=float(rng.choice([0.1, 3.0, 30.0])), size=n)
        kind = kinds[int(rng.integers(len(kinds)))]
        assert surrogate_loss(s, int(rng.integers(n)), kind) >= 0
        assert cost_sensitive_loss(s, rng.uniform(size=n), kind) >= 0


def test_rho_margin_bounded_by_n_minus_one():
    rng = np.random.default_rng(9)
    for _ in range(500):
        n = int(rng.integers(2, 8))
        assert constrained_loss(rng.normal(scale=10, size=n), 0, RHO) <= n - 1


def test_monotone_penalty_logistic():
    rng = np.random.default_rng(10)
    checked = 0
    for _ in range(2000):
        n = int(rng.integers(2, 6))
        s, c = rng.normal(size=n), rng.uniform(size=n)
        k = int(np.argmin(c))
        bumped = s.copy()
        bumped[k] += 0.01
        # the k-th weighted term always drops
        assert (1 - c[k]) * comp_sum_loss(bumped, k, LOGISTIC) < (1 - c[k]) * comp_sum_loss(s, k, LOGISTIC)
        # the total drops whenever softmax_k <= 1/n: d/ds_k = W softmax_k - (1 - c_k) < 0
        # because 1 - c_k is the largest weight, hence above the mean W/n
        p = np.exp(s - s.max())
        if p[k] / p.sum() <= 1.0 / n:
            checked += 1
            assert cost_sensitive_loss(bumped, c, LOGISTIC) < cost_sensitive_loss(s, c, LOGISTIC)
    assert checked > 300


def test_total_loss_need_not_drop_when_score_already_high():
    # the minimizer has softmax proportional to 1 - c, so pushing the cheapest
    # entry beyond that share raises the total loss
    s = np.array([-0.81481411, -0.34385486, -0.05138009, -0.97227368, -1.13448753])
    c = np.array([0.14499469, 0.74558021, 0.13935139, 0.90652876, 0.22611443])
    bumped = s.copy()
    bumped[2] += 0.1
    assert cost_sensitive_loss(bumped, c, LOGISTIC) > cost_sensitive_loss(s, c, LOGISTIC)


def test_large_score_gaps_stay_finite():
    s = np.array([900.0, -900.0, 0.0])
    for kind in (LOGISTIC, GCE, MAE):
        assert math.isfinite(comp_sum_loss(s, 1, kind))
        assert np.all(np.isfinite(comp_sum_grad(s, 1, kind)))


def test_errors():
    with pytest.raises(InvalidInputError):
        comp_sum_loss([0.0, 1.0], 2, LOGISTIC)
    with pytest.raises(InvalidInputError):
        CompSumKind("gce", 1.0)
    with pytest.raises(InvalidInputError):
        ConstrainedKind("rho_margin", 0.0)
    with pytest.raises(InvalidInputError):
        cost_sensitive_loss([0.0, 1.0], [0.5], LOGISTIC)
    with pytest.raises(InvalidInputError):
        cost_sensitive_loss([0.0, 1.0], [0.5, 1.5], LOGISTIC)


def test_parse_kind_round_trip():
    for kind in all_kinds(q=0.7, rho=2.0):
        assert parse_kind(str(kind)) == kind
    with pytest.raises(InvalidInputError):
        parse_kind("max")
