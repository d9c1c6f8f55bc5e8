import math

import numpy as np
import pytest
from scipy.linalg import expm

from taurates.rate_algebra import RateSpecError, constant, log_power
from taurates.semigroup_lab import (
    SpectralPoleError, SpectrumModel, c_alpha, corollary_check, fit_resolvent_majorant,
    jordan_exponential, jordan_resolvent, log_orbit_norm, orbit_norm, preset, report_rows,
    resolvent_norm,
)


def _brute_curve_dist(alpha, x, y, rounds=8):
    """Nearest point on s -> (-1/max(1, log s)^alpha, +-s) by repeated 10^3-point scans."""
    def d2(s):
        M = np.maximum(1.0, np.log(np.maximum(s, 1e-300))) ** alpha
        return np.minimum((x + 1 / M) ** 2 + (y - s) ** 2, (x + 1 / M) ** 2 + (y + s) ** 2)
    lo, hi = 0.0, abs(y) + 2.0
    best = math.inf
    for _ in range(rounds):
        s = np.linspace(lo, hi, 1000)
        v = d2(s)
        i = int(np.argmin(v))
        best = min(best, float(v[i]))
        h = s[1] - s[0]
        lo, hi = max(0.0, s[i] - h), s[i] + h
    return math.sqrt(best)


# ---------------------------------------------------------------------------
# models and presets

def test_presets():
    nl = preset("normal_line(1)")
    assert nl.variant == "atomic" and np.any(nl.eigenvalues == -1 + 0j)
    assert nl.omega0 == -1.0 and nl.is_normal
    cv = preset("curve_log_alpha", 1.0)
    assert cv.M == log_power(1.0)
    jd = preset("jordan_dyadic(8)")
    assert [d for _, d in jd.blocks] == list(range(1, 9))
    assert [l for l, _ in jd.blocks] == [complex(-1, 2.0 ** n) for n in range(1, 9)]
    assert not jd.is_normal
    for bad in ("nope", "normal_line(-1)", "jordan_dyadic(2.5)", "curve_log_alpha(0)", "normal_line(x)"):
        with pytest.raises(RateSpecError):
            preset(bad)


def test_model_validation():
    with pytest.raises(RateSpecError):
        SpectrumModel.atomic([0.5 + 1j])
    with pytest.raises(RateSpecError):
        SpectrumModel.jordan([(-1, 0)])
    with pytest.raises(RateSpecError):
        SpectrumModel("weird")


def test_c_alpha():
    assert c_alpha(1.0) == pytest.approx(4.0)
    assert c_alpha(0.5) == pytest.approx(3 * math.sqrt(3) / 2)


# ---------------------------------------------------------------------------
# resolvent

def test_resolvent_examples():
    assert resolvent_norm(preset("normal_line(1)"), 5j) == pytest.approx(1.0, abs=1e-15)
    golden = (1 + math.sqrt(5)) / 2
    assert resolvent_norm(SpectrumModel.jordan([(-1, 2)]), 0) == pytest.approx(golden, rel=1e-14)
    # explicit inverse of -J with J = [[-1, 1], [0, -1]]
    np.testing.assert_allclose(jordan_resolvent(-1, 2, 0), [[1, 1], [0, 1]], atol=1e-15)


def test_curve_resolvent_log_growth():
    cv = preset("curve_log_alpha(1)")
    for s in (1e3, 1e6, 1e9):
        assert resolvent_norm(cv, 1j * s) / math.log(s) == pytest.approx(1.0, rel=1e-3)


def test_atomic_line_oracle():
    nl = preset("normal_line(1)")
    rng = np.random.default_rng(1)
    for _ in range(50):
        z = complex(rng.uniform(-3, 2), rng.uniform(-900, 900))
        sn = np.clip(np.round(4 * z.imag) / 4, -1000, 1000)
        dist = math.hypot(z.real + 1, z.imag - sn)
        assert resolvent_norm(nl, z) == pytest.approx(1 / dist, rel=1e-10)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
def test_curve_distance_oracle(alpha):
    cv = preset("curve_log_alpha", alpha)
    rng = np.random.default_rng(int(alpha * 10))
    pts = [complex(rng.uniform(-2, 2), rng.uniform(-200, 200)) for _ in range(25)]
    pts += [0j, 0.5 + 0j, complex(0, 50), complex(-0.3, 40.0)]
    for z in pts:
        ref = _brute_curve_dist(alpha, z.real, z.imag)
        assert resolvent_norm(cv, z) == pytest.approx(1 / ref, rel=1e-10), z


def test_pole_error():
    with pytest.raises(SpectralPoleError):
        resolvent_norm(preset("normal_line(1)"), -1 + 2j)
    with pytest.raises(SpectralPoleError):
        resolvent_norm(preset("curve_log_alpha(1)"), -1 + 0j)
    with pytest.raises(SpectralPoleError):
        resolvent_norm(SpectrumModel.jordan([(-1 + 1j, 3)]), -1 + 1j)


# ---------------------------------------------------------------------------
# orbits

def test_normal_line_orbit():
    nl = preset("normal_line(1)")
    for t in (0.0, 1.0, 5.0, 50.0, 300.0):
        assert orbit_norm(nl, t, 1) == pytest.approx(math.exp(-t), rel=1e-14)
    nl2 = preset("normal_line(0.5)")
    assert orbit_norm(nl2, 3.0, 1) == pytest.approx(2 * math.exp(-1.5), rel=1e-14)


@pytest.mark.parametrize("name", ["normal_line(1)", "curve_log_alpha(1)", "curve_log_alpha(0.5)"])
def test_time_zero_m0(name):
    assert orbit_norm(preset(name), 0.0, 0) == pytest.approx(1.0)


def test_curve_orbit_sqrt():
    cv = preset("curve_log_alpha(1)")
    for t in (1e4, 1e5, 1e6):
        # sup_u (-t/u - u) = -2 sqrt(t) for the log curve with m = 1 in log variables
        assert -log_orbit_norm(cv, t, 1) / math.sqrt(t) == pytest.approx(2.0, rel=1e-3)


@pytest.mark.parametrize("name", ["normal_line(1)", "curve_log_alpha(1)", "curve_log_alpha(0.5)"])
def test_monotone_decay(name):
    m = preset(name)
    t = np.geomspace(1e-2, 1e6, 60)
    for k in (1, 2):
        lo = np.array([log_orbit_norm(m, v, k) for v in t])
        assert np.all(np.diff(lo) <= 1e-12 * np.maximum(1, np.abs(lo[1:])))


def test_orbit_validation():
    with pytest.raises(RateSpecError):
        log_orbit_norm(preset("normal_line(1)"), -1.0)
    with pytest.raises(RateSpecError):
        log_orbit_norm(preset("normal_line(1)"), 1.0, -1)


# ---------------------------------------------------------------------------
# jordan blocks

@pytest.mark.parametrize("d", [1, 2, 4, 8])
def test_jordan_semigroup_law(d):
    rng = np.random.default_rng(d)
    lam = complex(-rng.uniform(0.1, 2), rng.uniform(-5, 5))
    for _ in range(5):
        t, s = rng.uniform(0, 4, 2)
        lhs = jordan_exponential(lam, d, t + s)
        rhs = jordan_exponential(lam, d, t) @ jordan_exponential(lam, d, s)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-10 * np.abs(lhs).max())
        x = rng.normal(size=d) + 1j * rng.normal(size=d)
        Tt = np.linalg.norm(jordan_exponential(lam, d, t), 2)
        assert np.linalg.norm(lhs @ x) <= Tt * np.linalg.norm(jordan_exponential(lam, d, s) @ x) * (1 + 1e-12)


@pytest.mark.parametrize("d", [1, 3, 6])
def test_jordan_exponential_vs_expm(d):
    lam = -0.7 + 3j
    J = lam * np.eye(d) + np.eye(d, k=1)
    for t in (0.5, 2.0, 7.0):
        np.testing.assert_allclose(jordan_exponential(lam, d, t), expm(t * J), rtol=1e-10, atol=1e-14)
        for m in (0, 1, 2):
            ref = np.linalg.norm(expm(t * J) @ np.linalg.matrix_power(np.linalg.inv(J), m), 2)
            model = SpectrumModel.jordan([(lam, d)])
            assert orbit_norm(model, t, m) == pytest.approx(ref, rel=1e-10)


def test_jordan_resolvent_inverse():
    lam, d, z = -1 + 2j, 5, 0.3 - 1j
    J = lam * np.eye(d) + np.eye(d, k=1)
    np.testing.assert_allclose(jordan_resolvent(lam, d, z) @ (z * np.eye(d) - J), np.eye(d),
                               atol=1e-13)


# ---------------------------------------------------------------------------
# majorant fits

def test_fit_normal_line():
    f = fit_resolvent_majorant(preset("normal_line(1)"))
    assert f.shape == "constant" and f.params["C"] == pytest.approx(1.0)
    assert np.all(f.M_emp == 1.0)


def test_fit_curve():
    f = fit_resolvent_majorant(preset("curve_log_alpha(1)"))
    assert f.shape == "log_power"
    assert f.params["a"] == pytest.approx(1.0, abs=0.05)


def test_fit_jordan_dyadic():
    f = fit_resolvent_majorant(preset("jordan_dyadic(8)"))
    assert f.M_emp[-1] > f.M_emp[0]
    assert np.all(np.diff(f.M_emp) >= 0)
    assert f.shape in ("constant", "log_power", "power", "exp")


def test_majorant_dominates():
    for name in ("curve_log_alpha(1)", "jordan_dyadic(6)"):
        f = fit_resolvent_majorant(preset(name))
        from taurates.rate_algebra import evaluate
        v, _ = evaluate(f.majorant, f.s)
        assert np.all(v >= f.M_emp * (1 - 1e-12))


# ---------------------------------------------------------------------------
# corollary

def test_normal_line_boundary():
    rep = corollary_check(preset("normal_line(1)"), t_grid=np.geomspace(1, 1000, 40),
                          c_grid=[0.5, 0.9, 1.0, 1.1, 1.5])
    assert rep.M_source == "fit"
    assert rep.verdicts[0.5] == rep.verdicts[0.9] == "bounded"
    assert rep.verdicts[1.1] == rep.verdicts[1.5] == "growing"
    assert rep.c_star == 1.0


@pytest.fixture(scope="module")
def curve_reports():
    return {a: corollary_check(preset("curve_log_alpha", a)) for a in (0.5, 1.0)}


def test_c_star_alpha_one(curve_reports):
    rep = curve_reports[1.0]
    assert rep.c_star == pytest.approx(4.0, abs=0.2)
    assert rep.bounded_below(0.9) and rep.monotone


def test_c_star_alpha_half(curve_reports):
    rep = curve_reports[0.5]
    ca = c_alpha(0.5)
    assert 0.9 * ca <= rep.c_star <= 1.1 * ca


def test_bounded_regime_all_presets():
    for name in ("normal_line(1)", "jordan_dyadic(8)"):
        rep = corollary_check(preset(name), t_grid=np.geomspace(1, 1000, 40))
        assert rep.bounded_below(0.9), name


def test_corollary_validation():
    cv = preset("curve_log_alpha(1)")
    with pytest.raises(RateSpecError):
        corollary_check(cv, t_grid=np.geomspace(1, 10, 10))
    with pytest.raises(RateSpecError):
        corollary_check(cv, m=0)
    with pytest.raises(RateSpecError):
        corollary_check(cv, c_grid=[-1.0])


def test_supplied_M_and_rows():
    rep = corollary_check(preset("normal_line(1)"), t_grid=np.geomspace(1, 100, 10),
                          c_grid=[0.5], M=constant(1.0))
    assert rep.M_source == "supplied"
    # M = 1: M_log^{-1}(ct) = e^{ct} once ct >= 1, so ln ratio = (c - 1) t
    t = rep.t
    big = 0.5 * t >= 1
    np.testing.assert_allclose(rep.log_ratio[0.5][big], -0.5 * t[big], rtol=1e-8)
    header, rows = report_rows(rep)
    assert header[:3] == ["t_time", "orbit_norm", "ln_orbit_norm"]
    assert len(rows) == 10 and all(len(r) == len(header) for r in rows)
    d = rep.to_dict()
    assert d["c_star"] == 0.5 and d["bounded_for_c_le_0.9"]
