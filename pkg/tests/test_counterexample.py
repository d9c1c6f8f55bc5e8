import cmath
import math

import mpmath
import numpy as np
import pytest
from scipy import integrate

from taurates.counterexample import (
    LEMMA_DISPLAYS, CounterexampleBuilder, PoleError, ThresholdError, assemble_f,
    build_measure, cauchy_of_measure, choose_delta, k_tilde_doubleprime, l_of,
    laplace_of_measure, verify_lemma_bounds, verify_optimality,
)
from taurates.rate_algebra import (
    RateSpecError, constant, evaluate, log_power, max_with_one, power, product,
)

M1 = constant(1.0)
K2 = max_with_one(power(2.0))


# ---------------------------------------------------------------------------
# high-precision direct atom sums

def _atoms(p, dps):
    R = mpmath.mpf(p.R)
    w = mpmath.mpc(-p.delta, R)
    A = mpmath.mpf(p.A)
    qs = [mpmath.exp(2j * mpmath.pi * j / (p.k + 1)) for j in range(p.k + 1)]
    return w, A, qs, mpmath.exp(mpmath.mpf(p.log_tau)) / R ** p.m


def direct_laplace(p, t, order=0, dps=80):
    with mpmath.workdps(dps):
        w, A, qs, c = _atoms(p, dps)
        tot = 0
        for q in qs:
            z = w + q / A
            tot += q * (z if order else 1) * mpmath.exp(mpmath.mpf(t) * z)
        return complex(c * tot)


def direct_cauchy(p, z):
    extra = int((p.k + 1) * max(0.0, math.log10(abs(p.A * (z - p.w)) + 1e-300)))
    with mpmath.workdps(60 + extra):
        w, A, qs, c = _atoms(p, 60)
        zz = mpmath.mpc(z)
        return complex(c * sum(q / (zz - (w + q / A)) for q in qs))


def _rel(a, b):
    return abs(a - b) / abs(b)


# ---------------------------------------------------------------------------

def test_k1_hand_values():
    mu, p = build_measure(M1, K2, 1.0, 1)
    assert p.q == pytest.approx(-1)
    assert p.A == pytest.approx(l_of(1) / 1.0)
    assert p.A == pytest.approx(2.0)  # l(1) = 2
    assert p.log_tau == pytest.approx(math.log(p.A))
    np.testing.assert_allclose(sorted(mu.offsets.real), [-1 - 1 / p.A, -1 + 1 / p.A])


def test_parameter_identities():
    for k in (1, 5, 20, 80):
        _, p = build_measure(M1, K2, 0.7, k)
        assert p.delta * p.A == pytest.approx(k * p.l_k, rel=1e-12)
        assert p.log_tau == pytest.approx(-0.5 * math.log(k) + k * math.log(p.delta * p.A),
                                          rel=1e-12)
        assert abs(p.q ** (p.k + 1) - 1) < 1e-12


@pytest.mark.parametrize("k", [1, 3, 8, 20])
def test_weight_sum(k):
    mu, _ = build_measure(M1, K2, 0.5, k)
    assert mu.weight_sum_relative() < 1e-10
    assert np.all(mu.offsets.real < 0)


def test_m2_weights():
    _, p1 = build_measure(M1, K2, 0.5, 3, m=1)
    _, p2 = build_measure(M1, K2, 0.5, 3, m=2)
    assert p2.log_weight == pytest.approx(p1.log_weight - p1.log_R)


def test_k1_closed_forms():
    _, p = build_measure(M1, K2, 0.25, 1)
    tau = math.exp(p.log_tau)
    for t in (0.0, 0.3, 2.0, 50.0):
        cf = 2 * tau / p.R * cmath.exp(t * p.w) * math.sinh(t / p.A)
        assert abs(laplace_of_measure(p, t) - cf) <= 1e-12 * max(abs(cf), 1e-300) + 1e-300
    assert laplace_of_measure(p, 0.0, 1) == pytest.approx(2 * tau / (p.R * p.A), rel=1e-12)
    z = p.w + 2.0 / p.A
    assert cauchy_of_measure(p, z) == pytest.approx(tau / p.R * 2 * p.A / 3, rel=1e-12)


@pytest.mark.parametrize("k", [2, 5, 8, 10])
def test_laplace_oracle(k):
    _, p = build_measure(M1, K2, 0.25, k)
    rng = np.random.default_rng(k)
    for t in np.concatenate((rng.uniform(0, 4 * k / p.delta, 12), [k / p.delta])):
        for order in (0, 1):
            assert _rel(laplace_of_measure(p, t, order), direct_laplace(p, t, order)) < 1e-8


@pytest.mark.parametrize("k", [2, 5, 10])
def test_cauchy_oracle(k):
    _, p = build_measure(M1, K2, 0.25, k)
    rng = np.random.default_rng(100 + k)
    zs = 1j * rng.uniform(0, 2 * p.R, 12) + rng.uniform(0, 1, 12) * 0
    for z in np.concatenate((zs, [2.0 + 0j, 1e8 + 0j])):
        assert _rel(cauchy_of_measure(p, z), direct_cauchy(p, z)) < 1e-10


def test_cauchy_decay_real_axis():
    _, p = build_measure(M1, K2, 0.5, 4)
    x = np.geomspace(10, 1e9, 40)
    c = cauchy_of_measure(p, x + 0j)
    assert np.all(np.isfinite(np.abs(c) * x ** 2))
    # only powers (z - w)^{-n(k+1)} survive the root-of-unity sum
    lead = math.exp(p.log_tau) / p.R ** p.m * (p.k + 1) / p.A ** p.k / (x - p.w) ** (p.k + 1)
    np.testing.assert_allclose(c[-10:], lead[-10:], rtol=1e-6)


def test_pole_error():
    mu, p = build_measure(M1, K2, 0.5, 2)
    with pytest.raises(PoleError):
        cauchy_of_measure(p, mu.locations[0])


def test_laplace_quadrature_consistency():
    _, p = build_measure(M1, K2, 0.5, 3)
    z = 0.25 + 0.5j
    T = 60.0
    f = lambda t: laplace_of_measure(p, t) * cmath.exp(-z * t)
    re = integrate.quad(lambda t: f(t).real, 0, T, limit=2000)[0]
    im = integrate.quad(lambda t: f(t).imag, 0, T, limit=2000)[0]
    assert abs(complex(re, im) - cauchy_of_measure(p, z)) < 1e-4


@pytest.mark.parametrize("k", [20, 40, 80])
def test_lemma_bounds(k):
    d, _ = choose_delta(M1, K2)
    _, p = build_measure(M1, K2, d, k)
    rep = verify_lemma_bounds(p, M1, 0.1, K_tilde=K2)
    for key in LEMMA_DISPLAYS:
        assert rep[key]["passed"], (key, rep[key])


def test_lemma_constant_stable():
    d, _ = choose_delta(M1, K2)
    cs = []
    for k in (20, 40, 80):
        _, p = build_measure(M1, K2, d, k)
        cs.append(verify_lemma_bounds(p, M1, 0.1, K_tilde=K2)["peak_lower"]["c"])
    med = np.median(cs)
    assert all(abs(c / med - 1) <= 0.2 for c in cs)


def test_k_tilde_doubleprime():
    K = k_tilde_doubleprime(M1, K2, 2.0)
    s = np.geomspace(1e-2, 1e6, 50)
    np.testing.assert_allclose(evaluate(K, s)[0], np.maximum(1, s), rtol=1e-9)
    K = k_tilde_doubleprime(max_with_one(power(1.0)), K2, 1.5)
    s = np.geomspace(1, 1e6, 50)
    np.testing.assert_allclose(evaluate(K, s)[0], s, rtol=1e-9)
    # M^{-1/2} K dips on [1, e] for M = 1 v s^2, K = log(e v s)
    K = k_tilde_doubleprime(K2, product(log_power(1.0), constant(1.0)), 1.5)
    v = evaluate(K, np.linspace(0, 10, 200))[1]
    assert np.all(np.diff(v) >= -1e-12)


def test_threshold_error():
    with pytest.raises(ThresholdError) as exc:
        assemble_f(M1, K2, 1.0)
    assert "c_alpha_beta" in str(exc.value)
    assert exc.value.threshold > 1


@pytest.fixture(scope="module")
def assembled():
    return assemble_f(M1, K2, 1.5, 0.5, 6)


def test_assembly(assembled):
    f = assembled
    assert f.c_ab < 1.5
    Rs = [p.log_R for p in f.terms]
    assert np.all(np.diff(Rs) > 0)
    for a, b in zip(f.terms, f.terms[1:]):
        assert b.R - 2 * f.delta > a.R + 2 * f.delta
        assert b.window[0] > a.window[1]


def test_single_term():
    f = assemble_f(M1, K2, 1.5, 0.5, 1)
    p = f.terms[0]
    assert f.f(3.0) == pytest.approx(laplace_of_measure(p, 3.0), rel=1e-12)
    z = 0.5 + 2j
    assert f.fhat(z)[0] == pytest.approx(cauchy_of_measure(p, z), rel=1e-12)


def test_optimality_upper_and_probe(assembled):
    rep = verify_optimality(assembled, probe=(M1, 0.0))
    assert rep["C_hat"]["passed"]
    assert rep["C_hat"]["n_points"] >= 10_000
    assert rep["lower"]["positive"]
    assert rep["probe"]["passed"]


def test_estimator_api():
    est = CounterexampleBuilder(M1, K2, c1=1.5, n_terms=2).fit()
    v = est.predict([est.t_n_[0]])
    assert abs(v[0]) > 0
    with pytest.raises(RateSpecError):
        CounterexampleBuilder(None, K2).fit()
