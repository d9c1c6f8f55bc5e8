"""Roots-of-unity measures and the slowly decaying functions built from them.

A measure here is ``mu = tau R^{-m} sum_j q^j delta_{w + q^j / A}`` with
``q = exp(2 pi i / (k+1))`` and ``w = iR - delta``.  Its Laplace transform
``L mu(t) = int e^{t zeta} dmu`` cancels to about ``k log10 l(k)`` digits
near ``t = k / delta``, so it is never summed atom by atom here.  The
factored series

    L mu(t) = tau R^{-m} e^{tw} (k+1) sum_{n>=1} x^{n(k+1)-1} / (n(k+1)-1)!,
    x = t / A,

has only positive terms and is summed in log space.  ``R`` can be far
beyond double range (``R ~ e^{2500}`` is routine for six-term functions),
so magnitudes are carried as logs and the phase ``R t mod 2 pi`` falls
back to mpmath when ``R t`` is large.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import mpmath
import numpy as np
from scipy.special import gammaln, logsumexp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .rate_algebra import (
    RateSpec,
    RateSpecError,
    c_alpha_beta,
    classify_growth,
    compose,
    k_m_transform,
    log_eval,
    m_sub_k,
    power,
    product,
    right_inverse_log,
    running_sup,
)

__all__ = [
    "ThresholdError",
    "LEMMA_DISPLAYS",
    "PoleError",
    "LemmaParams",
    "AtomicMeasure",
    "CounterexampleFunction",
    "sample_rows",
    "l_of",
    "build_measure",
    "choose_delta",
    "laplace_log",
    "laplace_of_measure",
    "cauchy_log",
    "cauchy_of_measure",
    "verify_lemma_bounds",
    "k_tilde_doubleprime",
    "fit_alpha_beta",
    "assemble_f",
    "verify_optimality",
    "CounterexampleBuilder",
]

TWO_PI = 2.0 * math.pi
SERIES_RTOL = 1e-20
SERIES_CAP = 10_000


class ThresholdError(RateSpecError):
    """c1 does not exceed the computed threshold c_{alpha,beta}."""

    def __init__(self, c1: float, threshold: float):
        super().__init__(f"c1 = {c1:g} must exceed c_alpha_beta = {threshold:.6g}")
        self.c1 = c1
        self.threshold = threshold


class PoleError(ValueError):
    pass


def l_of(k: float) -> float:
    return 2.0 * math.log(max(math.e, k))


# ---------------------------------------------------------------------------
# parameters and measures

@dataclass(frozen=True)
class LemmaParams:
    delta: float
    k: int
    m: int
    log_R: float
    A: float
    log_tau: float
    warnings: tuple[str, ...] = ()

    @property
    def R(self) -> float:
        return math.exp(self.log_R) if self.log_R < 709.0 else math.inf

    @property
    def q(self) -> complex:
        return cmath.exp(2j * math.pi / (self.k + 1))

    @property
    def w(self) -> complex:
        if not math.isfinite(self.R):
            raise OverflowError("R is outside double range; use log-space evaluators")
        return complex(-self.delta, self.R)

    @property
    def l_k(self) -> float:
        return l_of(self.k)

    @property
    def log_weight(self) -> float:
        return self.log_tau - self.m * self.log_R

    @property
    def t_peak(self) -> float:
        return self.k / self.delta

    @property
    def window(self) -> tuple[float, float]:
        return self.k / (2.0 * self.delta), 2.0 * self.k / self.delta

    def to_dict(self) -> dict[str, Any]:
        return {"delta": self.delta, "k": self.k, "m": self.m, "log_R": self.log_R,
                "R": self.R, "A": self.A, "log_tau": self.log_tau,
                "warnings": list(self.warnings)}


@dataclass(frozen=True)
class AtomicMeasure:
    """Atoms as offsets from ``iR``; weights as (log-modulus, phase)."""

    log_R: float
    offsets: np.ndarray
    log_mod: np.ndarray
    phase: np.ndarray

    @property
    def locations(self) -> np.ndarray:
        R = math.exp(self.log_R) if self.log_R < 709.0 else math.inf
        if not math.isfinite(R):
            raise OverflowError("R is outside double range")
        return self.offsets + 1j * R

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_mod) * np.exp(1j * self.phase)

    def weight_sum_relative(self) -> float:
        """|sum of weights| / sum of |weights| (zero for the lemma measures)."""
        u = np.exp(1j * self.phase)
        return float(abs(u.sum()) / u.size)


def _mk(M: RateSpec, K_tilde: RateSpec) -> RateSpec:
    return m_sub_k(M, K_tilde)


def build_measure(M: RateSpec, K_tilde: RateSpec, delta: float, k: int, m: int = 1,
                  rel_tol: float = 1e-12):
    """Measure and parameters for given ``delta`` and ``k``."""
    if not (delta > 0 and math.isfinite(delta)):
        raise RateSpecError("delta must be positive")
    if int(k) != k or k < 1:
        raise RateSpecError("k must be a positive integer")
    if int(m) != m or m < 1:
        raise RateSpecError("m must be a positive integer")
    k, m = int(k), int(m)
    log_R, below = right_inverse_log(_mk(M, K_tilde), math.log(k / delta), rel_tol)
    if below or not math.isfinite(log_R):
        raise RateSpecError(f"M_K~ is not invertible at k/delta = {k / delta:g}")
    lk = l_of(k)
    dA = k * lk
    A = dA / delta
    log_tau = -0.5 * math.log(k) + k * math.log(dA)
    warns = []
    if log_R < 0:
        warns.append("R < 1")
    # rightmost atom must stay left of Omega_M at height R
    right = -delta + 1.0 / A
    lM = float(log_eval(M, log_R))
    if right >= -math.exp(-lM):
        warns.append("support meets the closure of Omega_M")
    p = LemmaParams(delta=float(delta), k=k, m=m, log_R=float(log_R), A=A,
                    log_tau=log_tau, warnings=tuple(warns))
    j = np.arange(k + 1)
    ph = TWO_PI * j / (k + 1)
    offsets = -delta + np.exp(1j * ph) / A
    mu = AtomicMeasure(log_R=p.log_R, offsets=offsets,
                       log_mod=np.full(k + 1, p.log_weight), phase=ph)
    return mu, p


def choose_delta(M: RateSpec, K_tilde: RateSpec, grid=None, floor: float = 1e-2,
                 gamma: float | None = None) -> tuple[float, dict[str, Any]]:
    """delta from the tail of log(s) / M_K~(s).

    Bounded M: 2 max(delta0, 1).  Unbounded M: min(1, delta0), floored.
    With ``gamma`` given and M bounded, delta is raised until
    -log(1-x)/x <= (1+gamma)/2 for x = 1/(delta M), which keeps the in-band
    Cauchy bound below K~(R)^gamma.
    """
    g = np.geomspace(1e4, 1e8, 64) if grid is None else np.asarray(grid, dtype=float)
    lg = np.log(g)
    lmk = log_eval(_mk(M, K_tilde), lg)
    delta0 = 4.0 * float(np.max(lg * np.exp(-lmk)))
    lM = log_eval(M, lg)
    bounded = classify_growth(lM) == "bounded" and float(lM[-1] - lM[0]) < 1e-6
    info: dict[str, Any] = {"delta0": delta0, "M_bounded": bool(bounded)}
    if bounded:
        delta = 2.0 * max(delta0, 1.0)
        info["rule"] = "2*max(delta0,1)"
        if gamma is not None:
            if not gamma > 1:
                raise RateSpecError("gamma must exceed 1")
            target = 0.5 * (1.0 + gamma)
            lo, hi = 1e-12, 1.0 - 1e-12
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if -math.log1p(-mid) / mid <= target:
                    lo = mid
                else:
                    hi = mid
            d_band = math.exp(-float(lM[0])) / lo
            if d_band > delta:
                delta = d_band
                info["rule"] = "band: -log(1-x)/x <= (1+gamma)/2"
            info["x_band"] = lo
    else:
        delta = max(floor, min(1.0, delta0))
        info["rule"] = "max(floor, min(1, delta0))"
    info["delta"] = delta
    return delta, info


# ---------------------------------------------------------------------------
# Laplace transform

def _log_series(k: int, x: float, a: int) -> float:
    """log sum_{n>=1} x^{N-a} / (N-a)!,  N = n (k+1)."""
    if x <= 0:
        return 0.0 if (k + 1 == a) else -math.inf
    lx = math.log(x)
    step = k + 1
    n_hi = int(math.ceil((x + 10.0 * math.sqrt(x) + 60.0) / step)) + 2
    if n_hi > SERIES_CAP:
        return math.nan
    n = np.arange(1, n_hi + 1)
    e = n * step - a
    terms = e * lx - gammaln(e + 1.0)
    total = float(logsumexp(terms))
    # the tail beyond n_hi is Poisson-like and far below the threshold
    assert terms[-1] - total < math.log(SERIES_RTOL)
    return total


def _phase_rt(p: LemmaParams, t: float) -> float:
    """(R t) mod 2 pi."""
    if t == 0:
        return 0.0
    R = p.R
    if math.isfinite(R) and R * t < 1e6:
        return math.fmod(R * t, TWO_PI)
    dps = int((p.log_R + math.log(max(t, 1.0))) / math.log(10)) + 30
    with mpmath.workdps(dps):
        Rm = mpmath.mpf(R) if math.isfinite(R) else mpmath.exp(mpmath.mpf(p.log_R))
        return float(mpmath.fmod(Rm * mpmath.mpf(t), 2 * mpmath.pi))


def _direct_log(p: LemmaParams, t: float, order: int) -> tuple[float, float]:
    # only used for t >> A, where the j = 0 atom dominates and nothing cancels
    k = p.k
    qj = np.exp(1j * TWO_PI * np.arange(k + 1) / (k + 1))
    e = np.exp(t * (qj - 1.0) / p.A)
    s0 = complex(np.sum(qj * e))
    base = p.log_weight + t * (1.0 / p.A - p.delta)
    phase = _phase_rt(p, t)
    if order == 0:
        return base + math.log(abs(s0)), math.remainder(phase + cmath.phase(s0), TWO_PI)
    c = -p.delta * s0 + complex(np.sum(qj * qj * e)) / p.A
    if p.log_R < 700:
        tot = 1j * p.R * s0 + c
        return base + math.log(abs(tot)), math.remainder(phase + cmath.phase(tot), TWO_PI)
    return (base + p.log_R + math.log(abs(s0)),
            math.remainder(phase + cmath.phase(s0) + math.pi / 2, TWO_PI))


def laplace_log(p: LemmaParams, t: float, order: int = 0) -> tuple[float, float]:
    """(log |L mu(t)|, arg) for order 0, or the same for L' mu(t)."""
    if order not in (0, 1):
        raise ValueError("order must be 0 or 1")
    t = float(t)
    if t < 0:
        raise ValueError("t must be non-negative")
    k = p.k
    if t == 0:
        if order == 0 or k != 1:
            return -math.inf, 0.0
        return p.log_weight + math.log(2.0 / p.A), 0.0
    x = t / p.A
    ls1 = _log_series(k, x, 1)
    if math.isnan(ls1):
        return _direct_log(p, t, order)
    base = p.log_weight - p.delta * t + math.log(k + 1)
    phase = _phase_rt(p, t)
    if order == 0:
        return base + ls1, math.remainder(phase, TWO_PI)
    # L' mu = base * (w S1 + S2 / A),  w = -delta + iR
    ls2 = _log_series(k, x, 2) - math.log(p.A)
    re = -p.delta + math.exp(ls2 - ls1)
    # |re + iR| and its argument with R possibly huge
    l_abs = 0.5 * float(np.logaddexp(2.0 * math.log(abs(re)) if re != 0 else -math.inf,
                                      2.0 * p.log_R))
    arg = math.pi / 2 - math.atan(re * math.exp(-p.log_R)) if p.log_R < 700 else math.pi / 2
    return base + ls1 + l_abs, math.remainder(phase + arg, TWO_PI)


def laplace_of_measure(p: LemmaParams, t, order: int = 0):
    """L mu(t) (order 0) or L' mu(t) (order 1); vectorized over t."""
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty(ts.shape, dtype=complex)
    for i, tv in enumerate(ts):
        lm, ph = laplace_log(p, tv, order)
        out[i] = cmath.rect(math.exp(lm), ph) if lm > -745 else 0j
    return complex(out[0]) if np.ndim(t) == 0 else out


# ---------------------------------------------------------------------------
# Cauchy transform

def _expm1c(L: np.ndarray) -> np.ndarray:
    x, y = L.real, L.imag
    re = np.expm1(x) * np.cos(y) - 2.0 * np.sin(0.5 * y) ** 2
    im = np.exp(x) * np.sin(y)
    return re + 1j * im


def _log_den(L: np.ndarray) -> np.ndarray:
    """log(e^L - 1) for complex L, without overflow."""
    out = np.empty(L.shape, dtype=complex)
    hi = L.real > math.log(10.0)
    lo = L.real < -math.log(10.0)
    mid = ~(hi | lo)
    out[hi] = L[hi] + np.log(1.0 - np.exp(-L[hi]))
    out[lo] = 1j * math.pi + np.log(1.0 - np.exp(L[lo]))
    if mid.any():
        out[mid] = np.log(_expm1c(L[mid]))
    return out


def _u_logpolar(A: float, re, im_sign, log_abs_im):
    """log |A (re + i im)| and its argument, with |im| given by its log."""
    re = np.asarray(re, dtype=float)
    im_sign = np.asarray(im_sign, dtype=float)
    log_abs_im = np.asarray(log_abs_im, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        lre = np.where(re != 0, np.log(np.abs(re)), -np.inf)
        lab = 0.5 * np.logaddexp(2.0 * lre, 2.0 * log_abs_im) + math.log(A)
        ratio = re * np.exp(-log_abs_im)
        arg = np.where(im_sign != 0, im_sign * (math.pi / 2 - np.arctan(ratio)),
                       np.where(re >= 0, 0.0, math.pi))
    return lab, arg


def _cauchy_from_u(p: LemmaParams, log_u, arg_u):
    log_u = np.asarray(log_u, dtype=float)
    arg_u = np.asarray(arg_u, dtype=float)
    k1 = p.k + 1
    # pole check: u close to a (k+1)-th root of unity
    near = np.abs(log_u) < 1e-9
    if near.any():
        d = np.remainder(arg_u[near] * k1 + math.pi, TWO_PI) - math.pi
        dist = np.hypot(log_u[near], d / k1)
        if np.any(dist < 1e-12 * p.A):
            raise PoleError("z coincides with an atom")
    L = k1 * log_u + 1j * np.remainder(k1 * arg_u, TWO_PI)
    lc = p.log_weight + math.log(k1) + math.log(p.A) - _log_den(np.atleast_1d(L))
    lc = lc.reshape(log_u.shape)
    return lc.real, np.remainder(lc.imag + math.pi, TWO_PI) - math.pi


def cauchy_log(p: LemmaParams, z=None, *, x=None, y=None):
    """(log |C mu|, arg) at ``z``, or at ``z = iR + x + i y`` given offsets."""
    if z is not None:
        z = np.asarray(z, dtype=complex)
        R = p.R
        if not math.isfinite(R):
            raise OverflowError("absolute z needs finite R; pass offsets x, y")
        x, y = z.real, z.imag - R
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore"):
        lu, au = _u_logpolar(p.A, x + p.delta, np.sign(y), np.log(np.abs(y)))
    return _cauchy_from_u(p, lu, au)


def cauchy_of_measure(p: LemmaParams, z):
    lm, ph = cauchy_log(p, z)
    with np.errstate(under="ignore"):
        out = np.exp(lm) * np.exp(1j * ph)
    return complex(out) if np.ndim(z) == 0 else out


# ---------------------------------------------------------------------------
# lemma bounds

def _default_t_grid(p: LemmaParams) -> np.ndarray:
    a, b = 1.0, 4.0 * p.k / p.delta
    core = np.linspace(a, b, 400)
    tail = np.geomspace(b, max(8.0 * p.A, 40.0 * p.k / p.delta), 120)[1:]
    return np.concatenate([core, tail])


def _default_offsets(p: LemmaParams, M: RateSpec):
    d = p.delta
    y = np.concatenate([np.linspace(-6 * d, 6 * d, 241),
                        np.geomspace(6 * d, 1e3 * d, 30), -np.geomspace(6 * d, 1e3 * d, 30)])
    if math.isfinite(p.R):
        y = y[p.R + y >= 0]
    lim = _left_edge(p, M, y)
    frac = np.array([0.0, 0.5, 0.9, 0.999])
    X = (lim[:, None] * frac[None, :]).ravel()
    Y = np.repeat(y, frac.size)
    return X, Y


def _left_edge(p: LemmaParams, M: RateSpec, y) -> np.ndarray:
    """-1 / M(|R + y|) from the log of R."""
    y = np.asarray(y, dtype=float)
    if math.isfinite(p.R):
        ly = np.log(np.maximum(np.abs(p.R + y), 1e-300))
    else:
        ly = np.full(y.shape, p.log_R)
    return -np.exp(-log_eval(M, ly))


LEMMA_DISPLAYS = ("cauchy_band", "cauchy_left_edge", "derivative_window", "laplace_window",
                  "peak_lower")


def verify_lemma_bounds(p: LemmaParams, M: RateSpec, eps: float, z_grid=None, t_grid=None,
                        K_tilde: RateSpec | None = None, gamma: float = 1.5) -> dict[str, Any]:
    """Measured constants for the five lemma displays.

    ``z_grid`` holds absolute points of Omega_M (finite R only); by default
    a band-relative grid around ``iR`` is used.  ``cauchy_band``,
    ``derivative_window`` and ``laplace_window`` pass when the part outside
    the band/window is below ``eps``; ``cauchy_left_edge`` and
    ``peak_lower`` pass when the measured constant is positive.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if K_tilde is None:
        raise RateSpecError("K_tilde is required")
    d, k, R_log = p.delta, p.k, p.log_R
    rate = _mk(M, K_tilde)
    lKR = float(log_eval(K_tilde, R_log))
    scale = -R_log - 0.5 * math.log(d) + 0.5 * math.log(k / d)
    rep: dict[str, Any] = {"k": k, "delta": d, "log_R": R_log, "eps": eps, "gamma": gamma}

    if z_grid is None:
        X, Y = _default_offsets(p, M)
    else:
        z = np.asarray(z_grid, dtype=complex).ravel()
        if not math.isfinite(p.R):
            raise OverflowError("absolute z_grid needs finite R")
        X, Y = z.real, z.imag - p.R
    lc, _ = cauchy_log(p, x=X, y=Y)
    band = np.abs(Y) <= 2 * d
    out_c = np.exp(lc[~band]) if (~band).any() else np.zeros(1)
    c41 = float(np.exp(np.max(lc[band]) - (scale + gamma * lKR))) if band.any() else 0.0
    i_out = int(np.argmax(out_c))
    rep["cauchy_band"] = {"C": c41, "outside_sup": float(out_c[i_out]),
                  "outside_at_y": float(Y[~band][i_out]) if (~band).any() else None,
                  "passed": bool(out_c[i_out] <= eps and math.isfinite(c41))}

    xr = -float(np.exp(-log_eval(M, R_log)))
    lc2, _ = cauchy_log(p, x=np.array([xr]), y=np.array([0.0]))
    c42 = float(np.exp(lc2[0] - (scale + lKR)))
    rep["cauchy_left_edge"] = {"c": c42, "passed": bool(c42 > 0 and math.isfinite(c42))}

    t = _default_t_grid(p) if t_grid is None else np.asarray(t_grid, dtype=float)
    lo, hi = p.window
    win = (t >= lo) & (t <= hi)
    l0 = np.array([laplace_log(p, tv, 0)[0] for tv in t])
    l1 = np.array([laplace_log(p, tv, 1)[0] for tv in t])
    with np.errstate(divide="ignore"):
        linv, _ = right_inverse_log(rate, np.log(t))
    linv = np.asarray(linv, dtype=float)
    weight = np.maximum(R_log, linv)

    C43 = float(np.exp(np.max(l1[win]))) if win.any() else 0.0
    o43 = np.exp(l1[~win]) if (~win).any() else np.zeros(1)
    j43 = int(np.argmax(o43))
    rep["derivative_window"] = {"C": C43, "outside_sup": float(o43[j43]),
                  "outside_at_t": float(t[~win][j43]) if (~win).any() else None,
                  "passed": bool(o43[j43] <= eps)}

    C44 = float(np.exp(np.max(l0[win]) + R_log)) if win.any() else 0.0
    o44 = np.exp(l0[~win] + weight[~win]) if (~win).any() else np.zeros(1)
    j44 = int(np.argmax(o44))
    rep["laplace_window"] = {"C": C44, "outside_sup": float(o44[j44]),
                  "outside_at_t": float(t[~win][j44]) if (~win).any() else None,
                  "passed": bool(o44[j44] <= eps)}

    c45 = float(np.exp(laplace_log(p, k / d, 0)[0] + R_log))
    rep["peak_lower"] = {"c": c45, "passed": bool(c45 > 0)}
    rep["passed"] = all(rep[key]["passed"] for key in LEMMA_DISPLAYS)
    return rep


# ---------------------------------------------------------------------------
# the assembled function

def k_tilde_doubleprime(M: RateSpec, K: RateSpec, gamma: float, grid=None,
                        return_factor: bool = False):
    """s -> sup_{s' <= s} (M(s')^{-1/2} K(s'))^{1/gamma}."""
    if not gamma > 1:
        raise RateSpecError("gamma must exceed 1")
    inner = compose(power(1.0 / gamma), product(compose(power(-0.5), M), K))
    spec = running_sup(inner)
    if not return_factor:
        return spec
    g = np.geomspace(1.0, 1e8, 257) if grid is None else np.asarray(grid, dtype=float)
    lg = np.log(g)
    factor = float(np.exp(np.max(log_eval(spec, lg) - log_eval(inner, lg))))
    return spec, factor


def fit_alpha_beta(M: RateSpec, K: RateSpec, grid=None, eta: float = 0.05,
                   alpha_cap: float = 1e6) -> dict[str, float]:
    """alpha, beta with liminf s^-alpha M^-beta K = inf, minimizing c_{alpha,beta}.

    Local log-log slopes on the upper half of the grid give the growth
    indices of K (least slope) and M (largest slope); ``eta`` is the margin
    that keeps the liminf infinite.
    """
    g = np.geomspace(1e2, 1e8, 129) if grid is None else np.asarray(grid, dtype=float)
    lg = np.log(g)
    up = lg >= 0.5 * (lg[0] + lg[-1])
    lK, lM = log_eval(K, lg[up]), log_eval(M, lg[up])
    dl = np.diff(lg[up])
    aK = float(min(np.min(np.diff(lK) / dl), alpha_cap))
    aM = float(max(0.0, np.max(np.diff(lM) / dl)))
    if aM < 1e-9:
        alpha = min(aK - eta, alpha_cap)
        if alpha <= 0:
            raise RateSpecError("K grows too slowly: no admissible alpha")
        return {"alpha": alpha, "beta": math.inf, "aK": aK, "aM": aM,
                "c_alpha_beta": c_alpha_beta(alpha, math.inf)}
    best = None
    beta_max = (aK - eta) / aM
    if beta_max <= 0.5:
        raise RateSpecError("no beta > 1/2 is admissible")
    for beta in np.geomspace(0.5 + 1e-6, beta_max, 2000)[:-1]:
        alpha = min(aK - beta * aM - eta, alpha_cap)
        if alpha <= 0:
            continue
        c = c_alpha_beta(alpha, beta)
        if best is None or c < best[0]:
            best = (c, alpha, beta)
    if best is None:
        raise RateSpecError("no admissible (alpha, beta)")
    return {"alpha": best[1], "beta": best[2], "aK": aK, "aM": aM, "c_alpha_beta": best[0]}


@dataclass
class CounterexampleFunction:
    terms: list[LemmaParams]
    eps0: float
    delta: float
    gamma: float
    c1: float
    c_ab: float
    alpha: float
    beta: float
    M: RateSpec
    K: RateSpec
    K_tilde: RateSpec
    info: dict[str, Any] = field(default_factory=dict)

    @property
    def eps(self) -> list[float]:
        return [self.eps0 * 2.0 ** -(n + 1) for n in range(len(self.terms))]

    @property
    def t_n(self) -> np.ndarray:
        return np.array([p.k / p.delta for p in self.terms])

    @property
    def rate(self) -> RateSpec:
        return _mk(self.M, self.K_tilde)

    def f_terms_log(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        lm, ph = zip(*(laplace_log(p, t, 0) for p in self.terms))
        return np.array(lm), np.array(ph)

    def f_log(self, t: float) -> tuple[float, float]:
        """(log |f(t)|, arg f(t))."""
        return _sum_logpolar(*self.f_terms_log(t))

    def f(self, t):
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.array([_rect(*self.f_log(tv)) for tv in ts])
        return complex(out[0]) if np.ndim(t) == 0 else out

    def f_prime(self, t):
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        out = []
        for tv in ts:
            lm, ph = zip(*(laplace_log(p, tv, 1) for p in self.terms))
            out.append(_rect(*_sum_logpolar(np.array(lm), np.array(ph))))
        out = np.array(out)
        return complex(out[0]) if np.ndim(t) == 0 else out

    def fhat_log_band(self, n: int, x, y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """log |f^(z)| at ``z = i R_n + x + i y``; also returns log |z|, log Im z."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        pn = self.terms[n]
        lms, phs = [], []
        for j, pj in enumerate(self.terms):
            if j == n:
                lc, pc = cauchy_log(pj, x=x, y=y)
            else:
                sign, lgap = _log_gap(pn.log_R, pj.log_R, y)
                lu, au = _u_logpolar(pj.A, x + pj.delta, sign, lgap)
                lc, pc = _cauchy_from_u(pj, lu, au)
            lms.append(lc)
            phs.append(pc)
        lf, _ = _sum_logpolar(np.array(lms), np.array(phs), axis=0)
        lim = _log_shift(pn.log_R, y)
        lz = 0.5 * np.logaddexp(2.0 * np.log(np.maximum(np.abs(x), 1e-300)), 2.0 * lim)
        return lf, lz, lim

    def fhat(self, z):
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        lms, phs = [], []
        for pj in self.terms:
            with np.errstate(divide="ignore"):
                if math.isfinite(pj.R):
                    lc, pc = cauchy_log(pj, z)
                else:
                    lgap = pj.log_R + np.log1p(-z.imag * math.exp(-pj.log_R))
                    lu, au = _u_logpolar(pj.A, z.real + pj.delta, -np.ones(z.shape), lgap)
                    lc, pc = _cauchy_from_u(pj, lu, au)
            lms.append(lc)
            phs.append(pc)
        lf, pf = _sum_logpolar(np.array(lms), np.array(phs), axis=0)
        with np.errstate(under="ignore"):
            return np.exp(lf) * np.exp(1j * pf)


def _rect(lm: float, ph: float) -> complex:
    return cmath.rect(math.exp(lm), ph) if lm > -745 else 0j


def _sum_logpolar(lm: np.ndarray, ph: np.ndarray, axis: int = 0):
    top = np.max(lm, axis=axis)
    safe = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(under="ignore", invalid="ignore"):
        s = np.sum(np.exp(lm - np.expand_dims(safe, axis)) * np.exp(1j * ph), axis=axis)
        out_l = np.where(np.isfinite(top), safe + np.log(np.abs(s)), -np.inf)
    out_p = np.angle(s)
    if np.ndim(out_l) == 0:
        return float(out_l), float(out_p)
    return out_l, out_p


def _log_shift(log_R: float, y) -> np.ndarray:
    """log(R + y) for y small against R (R possibly huge)."""
    y = np.asarray(y, dtype=float)
    if log_R < 700:
        return np.log(np.maximum(math.exp(log_R) + y, 1e-300))
    return log_R + np.log1p(y * math.exp(-log_R))


def _log_gap(log_Rn: float, log_Rj: float, y):
    """sign and log |(R_n + y) - R_j|."""
    y = np.asarray(y, dtype=float)
    if log_Rn < 700 and log_Rj < 700:
        d = math.exp(log_Rn) + y - math.exp(log_Rj)
        with np.errstate(divide="ignore"):
            return np.sign(d), np.log(np.abs(d))
    hi, lo = max(log_Rn, log_Rj), min(log_Rn, log_Rj)
    lg = hi + math.log1p(-math.exp(lo - hi))
    sign = 1.0 if log_Rn > log_Rj else -1.0
    return np.full(y.shape, sign), np.full(y.shape, lg)


def _windows_disjoint(prev: LemmaParams, k_new: int, delta: float) -> bool:
    return k_new / (2.0 * delta) > 2.0 * prev.k / delta


def _bands_disjoint(prev: LemmaParams, new: LemmaParams) -> bool:
    if new.log_R <= prev.log_R:
        return False
    sign, lg = _log_gap(new.log_R, prev.log_R, np.zeros(1))
    return bool(lg[0] > math.log(4.0 * prev.delta))


def assemble_f(M: RateSpec, K: RateSpec, c1: float, eps0: float = 0.5, N_terms: int = 6,
               k_start: int = 2, k_max: int = 2000, gamma_band: float = 1.5,
               fit_grid=None) -> CounterexampleFunction:
    """Build f = sum_n L mu_n for the threshold c1.

    k_1 is the smallest k passing the lemma checks at eps_1; each later
    k_n starts at k_{n-1} + 1 and doubles until its time window and
    frequency band are disjoint from the previous ones and the checks pass
    at eps_n.
    """
    if not (0 < eps0 < 1):
        raise RateSpecError("eps0 must lie in (0, 1)")
    if int(N_terms) != N_terms or N_terms < 1:
        raise RateSpecError("N_terms must be a positive integer")
    fit = fit_alpha_beta(M, K, fit_grid)
    cab = fit["c_alpha_beta"]
    if not c1 > cab:
        raise ThresholdError(c1, cab)
    gamma = 0.5 * (1.0 + c1 / cab)
    kdd, factor = k_tilde_doubleprime(M, K, gamma, return_factor=True)
    delta, dinfo = choose_delta(M, kdd, gamma=gamma)
    K_tilde = compose(kdd, None, 2.0 * delta)

    def ok(k, eps):
        _, p = build_measure(M, K_tilde, delta, k)
        return p, verify_lemma_bounds(p, M, eps, K_tilde=K_tilde, gamma=gamma_band)

    terms: list[LemmaParams] = []
    scans = []
    eps = [eps0 * 2.0 ** -(n + 1) for n in range(int(N_terms))]
    k = k_start
    while k <= k_max:
        try:
            p, rep = ok(k, eps[0])
        except RateSpecError:
            k += 1
            continue
        scans.append((k, rep["passed"]))
        if rep["passed"] and not p.warnings:
            terms.append(p)
            break
        k += 1
    if not terms:
        raise RateSpecError(f"no k <= {k_max} passes the lemma checks at eps = {eps[0]:g}")
    for n in range(1, int(N_terms)):
        prev = terms[-1]
        k = prev.k + 1
        while True:
            if _windows_disjoint(prev, k, delta):
                p, rep = ok(k, eps[n])
                if rep["passed"] and _bands_disjoint(prev, p) and not p.warnings:
                    terms.append(p)
                    break
            k *= 2
            if k > 10 ** 7:
                raise RateSpecError("k schedule diverged")
    info = {"fit": fit, "running_sup_factor": factor, "delta_rule": dinfo,
            "k_scan": scans, "k_n": [p.k for p in terms]}
    return CounterexampleFunction(terms=terms, eps0=eps0, delta=delta, gamma=gamma, c1=c1,
                                  c_ab=cab, alpha=fit["alpha"], beta=fit["beta"], M=M, K=K,
                                  K_tilde=K_tilde, info=info)


def _band_grid(f: CounterexampleFunction, n: int, ny: int = 121, nx: int = 8):
    p = f.terms[n]
    d = p.delta
    y = np.linspace(-4 * d, 4 * d, ny)
    if math.isfinite(p.R):
        y = y[p.R + y >= 0]
    lim = _left_edge(p, f.M, y)
    frac = np.linspace(0.0, 0.999, nx)
    return (lim[:, None] * frac[None, :]).ravel(), np.repeat(y, nx)


def _global_grid(f: CounterexampleFunction, n_im: int, n_re: int = 8) -> np.ndarray:
    finite = [p.R for p in f.terms if math.isfinite(p.R)]
    top = min(4.0 * max(finite) if finite else 1e6, 1e12)
    ims = np.concatenate([[0.0], np.geomspace(1e-2, top, n_im - 1)])
    lim = -np.exp(-log_eval(f.M, np.log(np.maximum(ims, 1e-300))))
    frac = np.linspace(0.0, 0.999, n_re)
    return ((lim[:, None] * frac[None, :]) + 1j * ims[:, None]).ravel()


def verify_optimality(f: CounterexampleFunction, c1: float | None = None, z_grid=None,
                      probe: tuple[RateSpec, float] | None = None, n_points: int = 10_000,
                      stability: float = 0.30) -> dict[str, Any]:
    """Upper bound on |z f^(z)| / K(|Im z|), lower bound along t_n, probe."""
    c1 = f.c1 if c1 is None else c1
    rep: dict[str, Any] = {"c1": c1, "k_n": [p.k for p in f.terms], "delta": f.delta,
                           "gamma": f.gamma, "c_alpha_beta": f.c_ab}
    # (i) C_hat on a grid of Omega_M
    n_band = len(f.terms) * 121 * 8
    ratios = []
    if z_grid is None:
        z_grid = _global_grid(f, max(2, -(-(n_points - n_band) // 8) + 32))
    z = np.asarray(z_grid, dtype=complex).ravel()
    with np.errstate(divide="ignore"):
        lf = np.log(np.maximum(np.abs(f.fhat(z)), 1e-300))
        lz = np.log(np.maximum(np.abs(z), 1e-300))
        lk = log_eval(f.K, np.log(np.abs(z.imag)))
    glob = lf + lz - lk
    ratios.append(glob)
    band_max = []
    for n in range(len(f.terms)):
        x, y = _band_grid(f, n)
        lfn, lzn, limn = f.fhat_log_band(n, x, y)
        r = lfn + lzn - log_eval(f.K, limn)
        band_max.append(float(np.max(r)))
        ratios.append(r)
    allr = np.concatenate(ratios)
    log_chat = float(np.max(allr))
    # a finite grid always gives a finite sup; growth from band to band is
    # what would make the true sup infinite
    trend = classify_growth(band_max) if len(band_max) >= 3 else "bounded"
    rep["C_hat"] = {"value": math.exp(log_chat) if log_chat < 709 else math.inf,
                    "log_value": log_chat, "n_points": int(allr.size),
                    "band_log_max": band_max, "band_trend": trend,
                    "passed": bool(math.isfinite(log_chat) and trend == "bounded")}
    # (ii) lower bound along t_n
    K1 = k_m_transform(f.K, 1)
    rate1 = _mk(f.M, K1)
    cs, contam = [], []
    for n, p in enumerate(f.terms):
        tn = p.k / p.delta
        lm, ph = f.f_terms_log(tn)
        lfn, _ = _sum_logpolar(lm, ph)
        others = np.delete(lm, n)
        contam.append(float(np.exp(logsumexp(others) - lm[n])) if others.size else 0.0)
        linv, _ = right_inverse_log(rate1, math.log(c1 * tn))
        cs.append(float(np.exp(linv + lfn)))
    cs_arr = np.array(cs)
    med = float(np.median(cs_arr))
    spread = float(np.max(np.abs(cs_arr / med - 1.0))) if med > 0 else math.inf
    rep["lower"] = {"c_n": cs, "c_min": float(cs_arr.min()), "median": med,
                    "spread": spread, "stability_tol": stability,
                    "contamination": contam,
                    "positive": bool(np.all(cs_arr > 0)),
                    "stable": bool(spread <= stability),
                    "passed": bool(np.all(cs_arr > 0) and spread <= stability)}
    # (iii) M~-probe
    if probe is not None:
        Mt, theta = probe
        if not (0 <= theta <= 1):
            raise ValueError("theta must lie in [0, 1]")
        rows = []
        for n, p in enumerate(f.terms):
            lMt = float(log_eval(Mt, p.log_R))
            x = np.array([theta * math.exp(-lMt)])
            lfn, lzn, _ = f.fhat_log_band(n, x, np.zeros(1))
            lhs = float(lfn[0] + lzn[0])
            lM = float(log_eval(f.M, p.log_R))
            expo = theta * math.exp(lM - lMt) / c1
            rhs = 0.5 * float(log_eval(rate1, p.log_R)) + expo * float(log_eval(K1, p.log_R))
            rows.append({"n": n, "log_R": p.log_R, "log_lhs": lhs, "log_envelope": rhs,
                         "log_ratio": lhs - rhs})
        lr = np.array([r["log_ratio"] for r in rows])
        rep["probe"] = {"theta": theta, "rows": rows, "c": float(np.exp(lr.min())),
                        "trend": classify_growth(-lr),
                        "passed": bool(np.all(np.isfinite(lr)) and classify_growth(-lr) == "bounded")}
    rep["passed"] = rep["C_hat"]["passed"] and rep["lower"]["passed"] and (
        rep.get("probe", {}).get("passed", True))
    return rep


def sample_rows(f: CounterexampleFunction, c1: float | None = None, n_t: int = 200,
                n_im: int = 400) -> tuple[list[tuple], list[tuple]]:
    """Rows ``(t, |f(t)|, M_{K_1}^{-1}(c1 t) |f(t)|)`` over the sampled windows and
    ``(Im z, Re z, |z f^(z)| / K(|Im z|))`` over an Omega_M grid.

    Magnitudes that leave double range are returned as ``inf`` / ``0``.
    """
    c1 = f.c1 if c1 is None else c1
    rate1 = _mk(f.M, k_m_transform(f.K, 1))
    tn = f.t_n
    ts = np.geomspace(tn[0] / 4.0, tn[-1] * 4.0, n_t)
    trows = []
    for t in ts:
        lf, _ = f.f_log(float(t))
        linv, _ = right_inverse_log(rate1, math.log(c1 * t))
        with np.errstate(over="ignore", under="ignore"):
            trows.append((float(t), float(np.exp(lf)), float(np.exp(linv + lf))))
    z = _global_grid(f, n_im)
    z = z[z.imag > 0]
    with np.errstate(divide="ignore", over="ignore", under="ignore"):
        r = np.abs(z * f.fhat(z)) / np.exp(log_eval(f.K, np.log(z.imag)))
    zrows = [(float(a.imag), float(a.real), float(b)) for a, b in zip(z, r)]
    return trows, zrows


class CounterexampleBuilder(BaseEstimator):
    """Estimator wrapper around :func:`assemble_f`.

    ``fit`` builds the function; ``predict`` returns f(t).
    """

    def __init__(self, M: RateSpec | None = None, K: RateSpec | None = None, c1: float = 1.5,
                 eps0: float = 0.5, n_terms: int = 6, gamma_band: float = 1.5):
        self.M = M
        self.K = K
        self.c1 = c1
        self.eps0 = eps0
        self.n_terms = n_terms
        self.gamma_band = gamma_band

    def fit(self, X=None, y=None):
        if not isinstance(self.M, RateSpec) or not isinstance(self.K, RateSpec):
            raise RateSpecError("M and K must be RateSpec instances")
        self.function_ = assemble_f(self.M.validate(), self.K.validate(), self.c1, self.eps0,
                                    self.n_terms, gamma_band=self.gamma_band)
        self.t_n_ = self.function_.t_n
        return self

    def predict(self, X):
        check_is_fitted(self, "function_")
        t = np.asarray(X, dtype=float).reshape(-1)
        if np.any(~np.isfinite(t)) or np.any(t < 0):
            raise ValueError("times must be finite and non-negative")
        return self.function_.f(t)

    def predict_log(self, X):
        check_is_fitted(self, "function_")
        t = np.asarray(X, dtype=float).reshape(-1)
        return np.array([self.function_.f_log(tv)[0] for tv in t])

    def score(self, X=None, y=None, z_grid=None):
        """Smallest measured lower-bound constant along t_n."""
        check_is_fitted(self, "function_")
        return verify_optimality(self.function_, z_grid=z_grid)["lower"]["c_min"]
