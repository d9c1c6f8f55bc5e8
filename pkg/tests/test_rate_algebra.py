import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from taurates.rate_algebra import (
    PRESETS, STRICT_PRESETS, HypothesisProfile, RateInverter, RateSpec, RateSpecError,
    UnboundedSearchError, c_alpha_beta, check_hypotheses, constant, double_exp, evaluate,
    exp_power, iterated_log, k_m_transform, l_tilde, log_eval, log_power, m_log, m_sub_k,
    max_with_one, parse_short, pointwise_max, positive_increase_estimate, power, product,
    right_inverse, right_inverse_log, running_sup, shift,
)

# ---------------------------------------------------------------------------
# random monotone trees

leaf = st.one_of(
    st.floats(0.1, 10).map(constant),
    st.floats(0, 3).map(lambda a: max_with_one(power(a))),
    st.floats(0, 3).map(log_power),
    st.tuples(st.floats(0.05, 2), st.floats(0.1, 1)).map(lambda p: exp_power(*p)),
)
specs = st.recursive(
    leaf,
    lambda kids: st.one_of(
        st.lists(kids, min_size=2, max_size=3).map(lambda c: product(*c)),
        st.lists(kids, min_size=2, max_size=3).map(lambda c: pointwise_max(*c)),
        kids.map(max_with_one),
        st.tuples(kids, st.floats(0, 5)).map(lambda p: shift(*p)),
    ),
    max_leaves=5,
)
S_GRID = np.concatenate(([0.0], np.geomspace(1e-3, 1e6, 200)))


@settings(max_examples=60, deadline=None)
@given(specs)
def test_monotone_and_positive(spec):
    v, lv = evaluate(spec, S_GRID)
    assert np.all(np.diff(lv) >= -1e-12 * np.maximum(1, np.abs(lv[1:])))
    assert np.all(v > 0)
    ok = v < 1e300
    np.testing.assert_allclose(np.exp(lv[ok]), v[ok], rtol=1e-12)


@settings(max_examples=60, deadline=None)
@given(specs)
def test_json_round_trip(spec):
    again = RateSpec.from_json(spec.to_json())
    assert again == spec
    np.testing.assert_array_equal(evaluate(again, S_GRID)[1], evaluate(spec, S_GRID)[1])


@settings(max_examples=40, deadline=None)
@given(specs, specs)
def test_m_sub_k_identity(M, K):
    v = evaluate(m_sub_k(M, K), S_GRID)[0]
    vm, _ = evaluate(M, S_GRID)
    _, lk = evaluate(K, S_GRID)
    with np.errstate(over="ignore"):
        direct = vm * np.maximum(1.0, lk)
    ok = np.isfinite(direct) & (direct < 1e300)
    np.testing.assert_allclose(v[ok], direct[ok], rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(specs, st.integers(1, 3))
def test_k_m_log_dominates(K, m):
    a = evaluate(k_m_transform(K, m, True), S_GRID)[1]
    b = evaluate(k_m_transform(K, m, False), S_GRID)[1]
    assert np.all(a >= b - 1e-12 * np.maximum(1, np.abs(b)))


# ---------------------------------------------------------------------------
# evaluation examples

def test_double_exp_log_value():
    assert log_eval(double_exp(1.0, 1.0), math.log(10.0)) == pytest.approx(math.exp(10), rel=1e-12)
    v, lv = evaluate(double_exp(1.0, 1.0), 500.0)
    assert v == math.inf and lv == pytest.approx(math.exp(500.0), rel=1e-12)


def test_constant_eval():
    v, lv = evaluate(constant(2.0), 5.0)
    assert v == 2.0 and lv == pytest.approx(math.log(2.0))


def test_product_eval():
    v, _ = evaluate(product(max_with_one(power(2.0)), log_power(1.0)), 100.0)
    assert v == pytest.approx(10000 * math.log(100), rel=1e-12)


def test_malformed():
    with pytest.raises(RateSpecError):
        constant(-1.0)
    with pytest.raises(RateSpecError):
        RateSpec.from_dict({"kind": "nope", "params": {}, "children": []})
    with pytest.raises(RateSpecError):
        evaluate(power(-1.0), 1.0)
    with pytest.raises(RateSpecError):
        evaluate(constant(1.0), -1.0)


# ---------------------------------------------------------------------------
# transforms

def test_k_m_transform_examples():
    K = k_m_transform(constant(1.0), 2, with_log=True)
    assert K(10.0) == pytest.approx(100 * math.log(10), rel=1e-12)
    assert K(1.0) == pytest.approx(1.0)
    assert k_m_transform(exp_power(1.0, 1.0), 1)(2.0) == pytest.approx(2 * math.e ** 2, rel=1e-12)
    K = k_m_transform(max_with_one(power(2.0)), 1, with_log=True)
    assert K(10.0) == pytest.approx(1000 * math.log(10), rel=1e-12)
    with pytest.raises(RateSpecError):
        k_m_transform(constant(1.0), 0)


def test_m_sub_k_examples():
    F = m_sub_k(constant(1.0), exp_power(1.0, 1.0))
    for s in (0.0, 0.5, 3.0, 50.0):
        assert F(s) == pytest.approx(max(1.0, s), rel=1e-12)
    assert m_sub_k(constant(2.0), constant(5.0))(7.0) == pytest.approx(2 * math.log(5), rel=1e-12)
    F = m_sub_k(max_with_one(power(1.0)), exp_power(1.0, 1.0))
    assert F(100.0) == pytest.approx(1e4, rel=1e-12)


def test_m_log_definition():
    M = log_power(1.0)
    for s in (0.5, 3.0, 1e3):
        Ms = M(s)
        assert m_log(M)(s) == pytest.approx(Ms * math.log(max(math.e, s * Ms)), rel=1e-12)


def test_running_sup_makes_monotone():
    # exp(s^a) with a dip is not constructible directly; running sup of a
    # monotone tree must come back unchanged
    spec = product(max_with_one(power(1.5)), log_power(2.0))
    v = evaluate(running_sup(spec), S_GRID)[1]
    np.testing.assert_allclose(v, evaluate(spec, S_GRID)[1], atol=1e-12)


# ---------------------------------------------------------------------------
# inverse

def test_inverse_examples():
    assert right_inverse(power(1.0), 7.0) == pytest.approx(7.0, rel=1e-9)
    assert right_inverse(PRESETS["flat"], 1.0) == 2.0
    s, flag = right_inverse(constant(3.0), 1.0, return_flag=True)
    assert s == 0.0 and flag


def test_inverse_case_a():
    # M = 1, K = 1 v s^2, K~ = K_1 -> M_K~(s) = log(e v s^3): inverse e^{t/3}
    F = m_sub_k(constant(1.0), k_m_transform(max_with_one(power(2.0)), 1))
    for t in (1e2, 1e3, 1e4):
        ls, _ = right_inverse_log(F, math.log(t))
        assert ls == pytest.approx(t / 3, rel=1e-9)


@pytest.mark.parametrize("name", STRICT_PRESETS)
def test_round_trip(name):
    F = PRESETS[name]
    lt = np.linspace(log_eval(F, 0.0), log_eval(F, math.log(1e6)), 300)
    ls, _ = right_inverse_log(F, lt)
    assert np.max(np.abs(np.expm1(log_eval(F, ls) - lt))) <= 10 * 1e-9


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 50), min_size=2, max_size=20))
def test_inverse_non_decreasing(ts):
    ts = np.sort(np.asarray(ts))
    s = right_inverse(PRESETS["flat"], ts)
    assert np.all(np.diff(s) >= 0)


def test_unbounded_and_tolerance():
    with pytest.raises(UnboundedSearchError):
        right_inverse_log(constant(2.0), math.log(3.0))
    with pytest.raises(RateSpecError):
        right_inverse(power(1.0), 1.0, rel_tol=0.1)


def test_estimator():
    est = RateInverter(constant(1.0), max_with_one(power(2.0)), m=1).fit()
    assert est.used_positive_increase_
    out = est.transform([30.0, 60.0])
    np.testing.assert_allclose(out.ravel(), np.exp([10.0, 20.0]), rtol=1e-8)


# ---------------------------------------------------------------------------
# positive increase and hypotheses

def test_positive_increase():
    g = np.geomspace(1.0, 1e8, 129)
    assert positive_increase_estimate(max_with_one(power(2.0)), g).a == pytest.approx(2, abs=0.05)
    assert positive_increase_estimate(log_power(1.0), g).a == 0
    w = positive_increase_estimate(product(max_with_one(power(1.0)), log_power(1.0)), g)
    assert w.a == pytest.approx(1.0, abs=0.1)
    assert w.C_a >= 1
    with pytest.raises(RateSpecError):
        positive_increase_estimate(power(1.0), np.geomspace(1, 10, 20))


def test_check_hypotheses_examples():
    g = np.geomspace(1.0, 1e4, 64)
    r = check_hypotheses(constant(1.0), exp_power(1.0, 0.5), HypothesisProfile(eps=0.4), g)
    assert r["i"]["passed"]
    r = check_hypotheses(constant(1.0), double_exp(1.0, 1.0), HypothesisProfile(eps=0.1), g)
    assert not r["i"]["passed"]
    r = check_hypotheses(max_with_one(power(1.0)), max_with_one(power(2.0)), HypothesisProfile(), g)
    assert r["iv"]["passed"] and r["iv"]["a"] == pytest.approx(1.5, abs=0.05)
    r = check_hypotheses(constant(1.0), constant(1.0), HypothesisProfile(eps=0.0), g)
    assert not r["i"]["passed"]


def test_profile_validation():
    with pytest.raises(RateSpecError):
        HypothesisProfile(eps=1.0)
    with pytest.raises(RateSpecError):
        HypothesisProfile(r1=0.0)


def test_iterated_log():
    assert iterated_log(1, 0.0) == pytest.approx(math.log(2))
    assert iterated_log(2, 0.0) == pytest.approx(math.log(math.log(3)))
    s = np.array([0.0, 5.0, 1e6])
    np.testing.assert_allclose(l_tilde(1, 0.3, s), iterated_log(1, s) ** 1.3)
    np.testing.assert_allclose(l_tilde(2, 0.3, s), iterated_log(1, s) * iterated_log(2, s) ** 1.3)


def test_c_alpha_beta():
    assert c_alpha_beta(4, 1) == pytest.approx(2.0)
    assert c_alpha_beta(1, 10) == pytest.approx(0.5 + math.sqrt(1.25))
    assert c_alpha_beta(1e8, 1e8) == pytest.approx(1.0, abs=1e-3)
    with pytest.raises(RateSpecError):
        c_alpha_beta(1, 0.5)
    with pytest.raises(RateSpecError):
        c_alpha_beta(0, 2)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.05, 50), st.floats(0.51, 50), st.floats(1.0, 3.0))
def test_c_alpha_beta_monotone(a, b, f):
    c = c_alpha_beta(a, b)
    assert c > 1
    assert c_alpha_beta(a * f, b) <= c + 1e-12
    assert c_alpha_beta(a, b * f) <= c + 1e-12


def test_parse_short():
    assert parse_short("const:2") == constant(2.0)
    assert parse_short("pow:2") == max_with_one(power(2.0))
    assert parse_short("exp:0.5") == exp_power(1.0, 0.5)
    assert parse_short(log_power(1.0).to_json()) == log_power(1.0)
    with pytest.raises(RateSpecError):
        parse_short("foo:1")
