"""Fudge factors, the contour family and numerical reconstruction of f(t).

The fudge factor psi(z) = c_k exp(-exp((2/(1+z^2))^k)) with c_k = e^{e^{2^k}}
is never formed directly.  Writing ``log psi = -exp(E + i theta)`` keeps
every quantity in range: with v = -k log(1+z^p) and S = p^k expm1(v),

    log psi = -e^{p^k} expm1(S),   E + i theta = p^k + log expm1(S).

Near 0 this is accurate to full relative precision (psi - 1 ~ C z^p), and
near the poles E grows like the inner double exponential without overflow.

Reconstruction.  On the literal contours |psi(z/R)| reaches
exp(e^{2^k} - e) (at z = +-R) and exp(C_k / (R M(R))^2) on the left vertical
line, so the three integrals are astronomically large numbers that cancel.
Each I_j only depends on its endpoints +-iR and on which side of the
singularities it passes, so the default ``mode="deformed"`` integrates on
vertical lines Re z = +-rho hugging the imaginary axis, where
|psi(z/R)| <= e^budget.  ``mode="literal"`` follows the gamma_ij family itself and is
usable for k = 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy import integrate

from .rate_algebra import (HypothesisProfile, RateSpec, RateSpecError, check_hypotheses,
                           classify_growth, decay_kernel, evaluate, right_inverse_log)

__all__ = [
    "FudgeSingularityError", "RTooSmallError", "RefinementError",
    "FudgeFactor", "fudge_factor", "psi_m", "psi_m_minus_one", "generalized_fudge_factor",
    "verify_fudge_lemma", "fd_stencil", "flatness_check", "ContourPath", "y_R", "required_R0", "build_contours",
    "closure_defect", "loop", "fudge_bound_on_contours", "adaptive_quad", "ReconstructionResult",
    "reconstruct", "LogSingularity", "taylor_correction", "taylor_oracle", "TestCase",
    "testcase", "decay_estimate_check", "sandwich_check", "path_rows",
]

TWO_PI = 2.0 * math.pi
_UNDER = -745.0


class FudgeSingularityError(ValueError):
    """z sits on a pole of the inner rational map."""


class RTooSmallError(RateSpecError):
    def __init__(self, R: float, R0: float):
        super().__init__(f"R = {R:g} gives y_R <= r1; need R >= R0 = {R0:.6g}")
        self.R, self.R0 = R, R0


class RefinementError(RuntimeError):
    def __init__(self, msg: str, worst_panel: tuple[float, float]):
        super().__init__(f"{msg}; worst panel [{worst_panel[0]:.6g}, {worst_panel[1]:.6g}]")
        self.worst_panel = worst_panel


# ---------------------------------------------------------------------------
# complex helpers (numpy has no accurate complex log1p / expm1)

def _cplx(re, im):
    out = np.empty(np.shape(re), dtype=complex)
    out.real, out.imag = re, im
    return out


def _log1p_c(w):
    a, b = w.real, w.imag
    r2 = a * (2.0 + a) + b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        # near w = -1 the sum cancels; |1 + w|^2 from 1 + a is exact there
        re = np.where(r2 > -0.5, 0.5 * np.log1p(np.maximum(r2, -0.5)),
                      0.5 * np.log((1.0 + a) ** 2 + b * b))
    return _cplx(re, np.arctan2(b, 1.0 + a))


def _expm1_c(w):
    a, b = w.real, w.imag
    with np.errstate(over="ignore", invalid="ignore"):
        re = np.expm1(a) * np.cos(b) - 2.0 * np.sin(0.5 * b) ** 2
        sb = np.sin(b)
        im = np.where(sb == 0, 0.0, np.exp(a) * sb)
    return _cplx(re, im)


def _wrap(ph):
    with np.errstate(invalid="ignore"):
        return np.remainder(ph + math.pi, TWO_PI) - math.pi


def _psi_exponent(w, k: int, p: int, one_plus=None):
    """(E, theta) with log psi = -exp(E + i theta)."""
    w = np.asarray(w, dtype=complex)
    if one_plus is None:
        wp = w ** p
        if np.any(wp == -1.0):
            raise FudgeSingularityError("z is a pole of the inner map (1 + z^p = 0)")
        lg = _log1p_c(wp)
        v = _cplx(-k * lg.real, -k * lg.imag)
    else:
        one_plus = np.asarray(one_plus, dtype=complex)
        if np.any(one_plus == 0):
            raise FudgeSingularityError("z is a pole of the inner map (1 + z^p = 0)")
        with np.errstate(divide="ignore"):
            v = _cplx(-k * np.log(np.abs(one_plus)), -k * np.angle(one_plus))
    pk = float(p) ** k
    big = v.real > 700.0 - k * math.log(p)
    vv = np.where(big, 0.0, v)
    em = _expm1_c(vv)
    with np.errstate(invalid="ignore", over="ignore"):
        S = _cplx(pk * em.real, pk * em.imag)
    E = np.empty(w.shape)
    th = np.empty(w.shape)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        pos = S.real > 30.0
        lw_pos = S + _log1p_c(-np.exp(-S))
        lw_neg = np.log(_expm1_c(S))
        lw = np.where(pos, lw_pos, lw_neg)
        E[...] = pk + lw.real
        th[...] = lw.imag
        if np.any(big):
            # S itself overflows: only its argument decides
            logS = k * math.log(p) + v[big] + _log1p_c(-np.exp(-v[big]))
            down = np.cos(logS.imag) > 0
            E[big] = np.where(down, np.inf, pk)
            th[big] = np.where(down, 0.0, math.pi)
    return E, th


def _log_mod_phase(E, th):
    with np.errstate(over="ignore", invalid="ignore"):
        eE = np.exp(E)
        # theta = +-pi comes from log of a negative real; float sin(pi) != 0
        flip = np.abs(th) == math.pi
        lm = -eE * np.where(flip, -1.0, np.cos(th))
        s = np.where(flip, 0.0, np.sin(th))
        ph = np.where(s == 0, 0.0, -eE * s)
    ph = np.where(np.isfinite(ph), _wrap(ph), np.nan)
    lm = np.where(lm == 0, 0.0, lm)
    return lm, np.where(ph == 0, 0.0, ph)


def _out(x, like):
    return float(x) if np.ndim(like) == 0 else x


@dataclass(frozen=True)
class FudgeFactor:
    """psi (m = 1) or psi_m (m > 1, inner exponent 4m + 2).

    ``log_log_c`` is p^k, so log c = e^{p^k} is stored exactly through its log.
    """

    k: int
    m: int = 1

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1 or int(self.m) != self.m or self.m < 1:
            raise RateSpecError("k and m must be positive integers")

    @property
    def p(self) -> int:
        return 2 if self.m == 1 else 4 * self.m + 2

    @property
    def log_log_c(self) -> float:
        return float(self.p) ** self.k

    @property
    def log_c(self) -> float:
        return math.exp(self.log_log_c) if self.log_log_c < 709 else math.inf

    @property
    def curvature(self) -> float:
        """C with log psi(w) = C w^p + O(w^{2p}) at 0."""
        return math.exp(self.log_log_c + self.k * math.log(self.p) + math.log(self.k))

    def exponent(self, z, one_plus=None):
        return _psi_exponent(z, self.k, self.p, one_plus)

    def log_value(self, z):
        E, th = self.exponent(z)
        lm, ph = _log_mod_phase(E, th)
        return _out(lm, z), _out(ph, z)

    def value(self, z):
        lm, ph = self.log_value(z)
        with np.errstate(over="ignore", under="ignore"):
            v = np.exp(lm) * np.exp(1j * np.asarray(ph))
        return complex(v) if np.ndim(z) == 0 else v

    def minus_one(self, z):
        """psi(z) - 1 to full relative precision near 0."""
        E, th = self.exponent(z)
        with np.errstate(over="ignore", invalid="ignore"):
            L = -np.exp(E) * (np.cos(th) + 1j * np.sin(th))
        v = _expm1_c(L)
        return complex(v) if np.ndim(z) == 0 else v


def fudge_factor(z, k: int, m: int = 1):
    """(log|psi|, arg psi) for psi (m = 1) or psi_m (m > 1)."""
    return FudgeFactor(k, m).log_value(z)


@dataclass(frozen=True)
class _PsiM(FudgeFactor):
    @property
    def p(self) -> int:
        return 4 * self.m + 2


def psi_m(z, k: int, m: int):
    """(log|psi_m|, arg psi_m) with inner exponent 4m + 2 for every m >= 1."""
    return _PsiM(k, m).log_value(z)


def psi_m_minus_one(z, k: int, m: int):
    return _PsiM(k, m).minus_one(z)


def generalized_fudge_factor(z: complex, k: int, n: int, dps_cap: int = 20000):
    """(log|psi|, arg psi) for c_{nk} exp(-exp_{n+1}((2/(1+z^2))^k)).

    Formula level only: evaluated with mpmath, normalised so psi(0) = 1.
    n = 0 is the plain psi.
    """
    import mpmath
    if int(n) != n or n < 0:
        raise RateSpecError("n must be a non-negative integer")
    z = complex(z)
    if 1 + z * z == 0:
        raise FudgeSingularityError("z is a pole of the inner map")

    def iexp(x, j):
        for _ in range(j):
            x = mpmath.exp(x)
        return x

    with mpmath.workdps(50):
        top = iexp(mpmath.mpf(2) ** k, n)
        mag = mpmath.log10(abs(top)) if top != 0 else 0
    # exp(top) has ~ top/ln 10 digits; the difference needs that many
    digits = int(mpmath.mpf(top) / mpmath.log(10)) + 40 if n >= 0 else 40
    if not math.isfinite(float(mag)) or digits > dps_cap:
        raise OverflowError("normalisation constant needs more precision than dps_cap")
    with mpmath.workdps(max(50, digits)):
        u = (2 / (1 + mpmath.mpc(z) ** 2)) ** k
        a = iexp(mpmath.mpf(2) ** k, n + 1)
        b = iexp(u, n + 1)
        L = a - b
        return float(mpmath.re(L)), float(_wrap(float(mpmath.im(L) % (2 * mpmath.pi))))


def fd_stencil(d: int, N: int) -> np.ndarray:
    """Central weights w_j, |j| <= N, for the d-th derivative (exact to degree 2N)."""
    import mpmath
    if not (0 <= d <= 2 * N):
        raise RateSpecError("need 0 <= d <= 2N")
    with mpmath.workdps(30 + 4 * N):
        js = [mpmath.mpf(j) for j in range(-N, N + 1)]
        A = mpmath.matrix([[j ** r for j in js] for r in range(2 * N + 1)])
        b = mpmath.matrix([math.factorial(d) if r == d else 0 for r in range(2 * N + 1)])
        return np.array([float(x) for x in mpmath.lu_solve(A, b)])


def flatness_check(k: int = 1, m: int = 1, h: float = 1e-2, tol: float = 1e-6) -> dict[str, Any]:
    """Central differences of psi_m - 1 at 0 for orders 1..min(4m+1, 6).

    psi_m - 1 = C z^p + C^2 z^{2p}/2 + ... with p = 4m + 2 and C ~ e^{p^k};
    the stencil has half-width p so both leading terms are differentiated
    exactly and the estimate measures the true (zero) derivative.
    """
    p = 4 * m + 2
    N = p
    vals = psi_m_minus_one(np.arange(-N, N + 1) * h + 0j, k, m)
    # for k >= 2 the curvature e^{p^k} overflows psi_m - 1 on the stencil
    finite = bool(np.all(np.isfinite(vals)))
    est = {}
    for d in range(1, min(4 * m + 1, 6) + 1):
        est[d] = float(abs(np.dot(fd_stencil(d, N), vals)) / h ** d) if finite else math.nan
    return {"k": int(k), "m": int(m), "h": h, "half_width": N, "estimates": est,
            "stencil_finite": finite,
            "passed": bool(finite and all(v <= tol for v in est.values()))}


# ---------------------------------------------------------------------------
# lemma on psi near the poles

def _signed_add(s1, l1, s2, l2):
    """Signed-log sum s1 e^l1 + s2 e^l2 -> (sign, log magnitude)."""
    hi = np.maximum(l1, l2)
    lo = np.minimum(l1, l2)
    s_hi = np.where(l1 >= l2, s1, s2)
    s_lo = np.where(l1 >= l2, s2, s1)
    with np.errstate(invalid="ignore", over="ignore", under="ignore"):
        r = np.exp(lo - hi)
        same = s_hi == s_lo
        mag = np.where(same, hi + np.log1p(r), hi + np.log1p(-np.minimum(r, 1.0)))
    return s_hi, mag


def _one_plus_near_pole(d, p: int, upper: bool):
    """1 + (pole + d)^p at pole = +-i, summed binomially (i^p = -1)."""
    pole = 1j if upper else -1j
    out = np.zeros_like(d, dtype=complex)
    for j in range(1, p + 1):
        out = out + math.comb(p, j) * pole ** (p - j) * d ** j
    return out


def verify_fudge_lemma(k: int, eps: float, y_grid=None, m: int = 1) -> dict[str, Any]:
    """Measured sup of log|psi| + exp(|x|^{-(1-eps)}) on both branch families."""
    if not (0 < eps < 1):
        raise RateSpecError("eps must lie in (0, 1)")
    if int(k) != k or k < 1 or not k > 2.0 / eps - 2.0:
        raise RateSpecError(f"k = {k} violates k > 2/eps - 2 = {2.0 / eps - 2.0:g}")
    y = np.geomspace(1e-3, 0.9, 200) if y_grid is None else np.sort(np.asarray(y_grid, float))
    if np.any((y <= 0) | (y >= 1)):
        raise RateSpecError("y_grid must lie in (0, 1)")
    ff = FudgeFactor(k, m)
    x = y ** (k + 2)
    a = x ** (-(1.0 - eps))
    # values are s e^l in signed-log form: log C itself can be e^{10^4}
    S, L, lm_branch = [], [], []
    for upper in (True, False):
        for sx in (1.0, -1.0):
            d = sx * x - 1j * y if upper else sx * x + 1j * y
            z = (1j if upper else -1j) + d
            E, th = ff.exponent(z, _one_plus_near_pole(d, ff.p, upper))
            c = np.cos(th)
            s1 = -np.sign(c)
            with np.errstate(divide="ignore"):
                l1 = E + np.log(np.abs(c))
            sv, lv = _signed_add(s1, l1, np.ones_like(a), a)
            S.append(sv)
            L.append(lv)
            lm_branch.append((s1, l1))
    S, L = np.concatenate(S), np.concatenate(L)
    yy = np.tile(y, 4)
    if np.any(S > 0):
        cand = np.where(S > 0, L, -np.inf)
        i = int(np.argmax(cand))
    else:
        i = int(np.argmin(L))
    sign, log_abs = float(S[i]), float(L[i])
    with np.errstate(over="ignore"):
        logC = sign * math.exp(log_abs) if log_abs < 709 else sign * math.inf
    # log|psi| = s1 e^{l1} is eventually decreasing as y -> 0: s1 = -1 and
    # l1 increasing toward small y over the lower tenth of the grid
    n_tail = max(3, y.size // 10)
    mono = all(np.all(s[:n_tail] < 0) and np.all(np.diff(l[:n_tail]) <= 1e-9 * np.abs(l[1:n_tail]))
               for s, l in lm_branch)
    j = int(np.searchsorted(y, yy[i]))
    away = bool(j >= y.size // 10)
    finite = bool(math.isfinite(log_abs))
    return {"k": int(k), "eps": float(eps), "m": int(m), "log_C": logC,
            "log_C_sign": sign, "log_abs_log_C": log_abs, "finite": finite,
            "y_at_sup": float(yy[i]), "sup_away_from_pole": away, "tail_decreasing": bool(mono),
            "passed": bool(finite and away and mono)}


# ---------------------------------------------------------------------------
# contours

@dataclass
class ContourPath:
    """Parametrised curve z(s), s in (a, b), oriented from a to b."""

    name: str
    z: Callable[[np.ndarray], np.ndarray]
    dz: Callable[[np.ndarray], np.ndarray]
    a: float = 0.0
    b: float = 1.0
    breaks: tuple[float, ...] = ()
    nodes: np.ndarray | None = None
    weights: np.ndarray | None = None
    integrand_abs: np.ndarray | None = None
    log_psi: np.ndarray | None = None

    def start(self) -> complex:
        return complex(self.z(np.array([self.a]))[0])

    def end(self) -> complex:
        return complex(self.z(np.array([self.b]))[0])

    def sample(self, n: int = 200) -> np.ndarray:
        s = np.linspace(self.a, self.b, n + 2)[1:-1]
        return self.z(s)


def _segment(name, z0: complex, z1: complex, breaks=()) -> ContourPath:
    z0, z1 = complex(z0), complex(z1)
    return ContourPath(name, lambda s: z0 + s * (z1 - z0),
                       lambda s: np.full(np.shape(s), z1 - z0, dtype=complex), breaks=tuple(breaks))


def _mval(M: RateSpec, s: float) -> float:
    return float(evaluate(M, np.array([float(s)]))[0][0])


def y_R(M: RateSpec, R: float, k: int) -> float:
    return R - R * (R * _mval(M, R)) ** (-1.0 / (k + 2))


def required_R0(M: RateSpec, r1: float, k: int) -> float:
    lo, hi = 1e-6, 1.0
    while y_R(M, hi, k) <= r1:
        lo, hi = hi, 2 * hi
        if hi > 1e300:
            raise RateSpecError("no admissible R")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if y_R(M, mid, k) > r1:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-12 * hi:
            break
    return hi


def build_contours(M: RateSpec, R: float, r1: float, k: int,
                   variant: str = "analytic-at-zero", delta: float | None = None) -> list[ContourPath]:
    """The paths gamma_11 ... gamma_37 in integration order."""
    if variant not in ("with-singularity", "analytic-at-zero"):
        raise RateSpecError(f"unknown variant {variant!r}")
    if not (R > 0 and r1 > 0) or int(k) != k or k < 1:
        raise RateSpecError("R, r1 must be positive and k a positive integer")
    MR, Mr1 = _mval(M, R), _mval(M, r1)
    yR = y_R(M, R, k)
    if yR <= r1:
        raise RTooSmallError(R, required_R0(M, r1, k))
    q = 1.0 / (k + 2)
    xe = 1.0 / (R * MR)

    def g11(s):
        return R * (s - 1j * (1 - s ** q))

    def d11(s):
        return R * (1 + 1j * q * s ** (q - 1))

    def g12(s):
        return R * ((1 - s) + 1j * (1 - (1 - s) ** q))

    def d12(s):
        return R * (-1 + 1j * q * (1 - s) ** (q - 1))

    paths = [
        ContourPath("gamma11", g11, d11),
        ContourPath("gamma12", g12, d12),
        ContourPath("gamma21", lambda s: -g11(s), lambda s: -d11(s)),
        ContourPath("gamma22", lambda s: -g12(s), lambda s: -d12(s)),
        ContourPath("gamma31", lambda s: -g11(s), lambda s: -d11(s), 0.0, xe),
        ContourPath("gamma32", lambda s: -1 / MR + 1j * (yR - s),
                    lambda s: np.full(np.shape(s), -1j, dtype=complex), 0.0, yR - r1),
    ]
    if variant == "analytic-at-zero":
        paths.append(_segment("gamma33-35", -1 / MR + 1j * r1, -1 / MR - 1j * r1))
    else:
        d = 1e-3 * r1 if delta is None else float(delta)
        if not (0 < d < r1 and d < 1 / Mr1):
            raise RateSpecError("delta must lie in (0, min(r1, 1/M(r1)))")
        paths += [
            _segment("gamma33", 1j * r1 - 1 / MR, 1j * d - 1 / Mr1),
            _segment("gamma34a", -1 / Mr1 + 1j * d, 1j * d),
            ContourPath("gamma34b", lambda s: d * np.exp(-1j * s),
                        lambda s: -1j * d * np.exp(-1j * s), -math.pi / 2, math.pi / 2),
            _segment("gamma34c", -1j * d, -1 / Mr1 - 1j * d),
            _segment("gamma35", -1j * d - 1 / Mr1, -1j * r1 - 1 / MR),
        ]
    paths += [
        ContourPath("gamma36", lambda s: -1 / MR - 1j * s,
                    lambda s: np.full(np.shape(s), -1j, dtype=complex), r1, yR),
        ContourPath("gamma37", lambda s: -g12(s), lambda s: -d12(s), 1.0 - xe, 1.0),
    ]
    return paths


def loop(paths: Sequence[ContourPath], which: str = "13") -> list[ContourPath]:
    """gamma_1 + gamma_3 (``"13"``) or gamma_1 + gamma_2 (``"12"``) in order."""
    first = [p for p in paths if p.name.startswith("gamma1")]
    rest = [p for p in paths if p.name.startswith("gamma" + which[1])]
    return first + rest


def closure_defect(paths: Sequence[ContourPath], closed: bool = True) -> float:
    tot = 0.0
    for p, q in zip(paths[:-1], paths[1:]):
        tot += abs(p.end() - q.start())
    if closed:
        tot += abs(paths[-1].end() - paths[0].start())
    return tot


def fudge_bound_on_contours(M: RateSpec, k: int, R_grid=(10.0, 20.0, 40.0), r1: float = 1.0,
                            n: int = 2000) -> dict[str, Any]:
    """Measured log C = sup log|psi| on the R-free shapes gamma_1/R, gamma_2/R,
    and the largest log|psi(z/R)| on all paths for each R."""
    ff = FudgeFactor(k)
    s = np.unique(np.concatenate([np.geomspace(1e-12, 0.5, 20 * n),
                                  1.0 - np.geomspace(1e-12, 0.5, 20 * n)]))
    q = 1.0 / (k + 2)
    shapes = np.concatenate([s - 1j * (1 - s ** q), (1 - s) + 1j * (1 - (1 - s) ** q)])
    shapes = np.concatenate([shapes, -shapes, [1.0, -1.0]])
    lm, _ = ff.log_value(shapes)
    logC = float(np.max(lm))
    per_R = {}
    for R in R_grid:
        worst = -np.inf
        for p in build_contours(M, R, r1, k):
            zz = p.sample(n) / R
            worst = max(worst, float(np.max(ff.log_value(zz)[0])))
        per_R[str(R)] = worst
    return {"k": int(k), "log_C": logC, "per_R": per_R,
            "passed": bool(all(v <= logC + 1e-12 * abs(logC) for v in per_R.values()))}


# ---------------------------------------------------------------------------
# quadrature

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gl(n: int):
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


def _panel_nodes(a: np.ndarray, b: np.ndarray, n: int):
    x, w = _gl(n)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid[:, None] + half[:, None] * x[None, :], half[:, None] * w[None, :]


def _initial_breaks(a: float, b: float, breaks=(), cluster: int = 6) -> np.ndarray:
    """Panels clustered geometrically toward both ends."""
    L = b - a
    f = np.concatenate([[0.0], 0.5 * np.geomspace(1e-6, 1.0, cluster)])
    pts = np.concatenate([a + L * f, b - L * f, [x for x in breaks if a < x < b]])
    return np.unique(pts)


def adaptive_quad(fun: Callable[[np.ndarray], np.ndarray], a: float, b: float, tol: float,
                  breaks=(), n: int = 12, max_panels: int = 20000):
    """Adaptive Gauss-Legendre with panel bisection.

    ``fun`` takes an array of parameters and returns complex values.
    Returns (value, error_estimate, nodes, weights, values).
    """
    edges = _initial_breaks(a, b, breaks)
    lo, hi = edges[:-1], edges[1:]
    done_s, done_w, done_v, done_err = [], [], [], []
    total_len = b - a
    value = 0.0 + 0.0j
    while lo.size:
        mid = 0.5 * (lo + hi)
        s1, w1 = _panel_nodes(lo, hi, n)
        sL, wL = _panel_nodes(lo, mid, n)
        sR, wR = _panel_nodes(mid, hi, n)
        allv = fun(np.concatenate([s1.ravel(), sL.ravel(), sR.ravel()]))
        m = lo.size * n
        v1 = allv[:m].reshape(lo.size, n)
        vL = allv[m:2 * m].reshape(lo.size, n)
        vR = allv[2 * m:].reshape(lo.size, n)
        q1 = np.sum(v1 * w1, axis=1)
        q2 = np.sum(vL * wL, axis=1) + np.sum(vR * wR, axis=1)
        err = np.abs(q2 - q1)
        ok = err <= tol * (hi - lo) / total_len
        # panels too short to split further are accepted with their error
        tiny = (hi - lo) <= 1e-14 * max(1.0, abs(a), abs(b))
        acc = ok | tiny
        for arr_s, arr_w, arr_v in ((sL, wL, vL), (sR, wR, vR)):
            done_s.append(arr_s[acc].ravel())
            done_w.append(arr_w[acc].ravel())
            done_v.append(arr_v[acc].ravel())
        done_err.append(err[acc])
        value += np.sum(q2[acc])
        lo, hi = np.concatenate([lo[~acc], mid[~acc]]), np.concatenate([mid[~acc], hi[~acc]])
        n_done = sum(x.size for x in done_err)
        if n_done + lo.size > max_panels:
            j = int(np.argmax(err[~acc])) if np.any(~acc) else 0
            wl, wh = (lo[j], hi[j]) if lo.size else (a, b)
            raise RefinementError("quadrature did not converge", (float(wl), float(wh)))
    nodes = np.concatenate(done_s)
    order = np.argsort(nodes)
    return (complex(value), float(np.sum(np.concatenate(done_err))), nodes[order],
            np.concatenate(done_w)[order], np.concatenate(done_v)[order])


class _InnerIntegral:
    """J(z) = int_0^t e^{z(t-s)} g(s) ds, vectorised in z, g cached per grid."""

    def __init__(self, g_eval, t: float, tol: float):
        self.g, self.t, self.tol = g_eval, float(t), tol
        self._cache: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    def _grid(self, npan: int):
        if npan not in self._cache:
            e = np.linspace(0.0, self.t, npan + 1)
            s, w = _panel_nodes(e[:-1], e[1:], 16)
            s, w = s.ravel(), w.ravel()
            gv = np.asarray(self.g(s), dtype=complex)
            self._cache[npan] = (s, w, gv)
        return self._cache[npan]

    def _eval(self, z, npan):
        s, w, gv = self._grid(npan)
        out = np.empty(z.size, dtype=complex)
        for i in range(0, z.size, 256):
            zz = z[i:i + 256, None]
            out[i:i + 256] = np.exp(zz * (self.t - s[None, :])) @ (w * gv)
        return out

    def __call__(self, z):
        z = np.asarray(z, dtype=complex).ravel()
        if z.size == 0:
            return z
        freq = float(np.max(np.abs(z))) * self.t
        npan = max(4, int(math.ceil(freq / 8.0)))
        prev = self._eval(z, npan)
        for _ in range(12):
            npan *= 2
            cur = self._eval(z, npan)
            if np.max(np.abs(cur - prev)) <= 0.1 * self.tol * max(1.0, float(np.max(np.abs(cur)))):
                return cur
            prev = cur
        raise RefinementError("inner time integral did not converge", (0.0, self.t))


class _TailIntegral:
    """int_0^inf e^{-z u} g(t+u) du for Re z > 0, i.e. h_t(z) e^{zt}."""

    def __init__(self, g_eval, t: float, tol: float):
        self.g, self.t, self.tol = g_eval, float(t), tol

    def _eval(self, z, U, npan):
        e = np.unique(np.concatenate([[0.0], np.geomspace(1e-10 * U, U, 48),
                                      np.linspace(0.0, U, npan + 1)]))
        u, w = _panel_nodes(e[:-1], e[1:], 16)
        u, w = u.ravel(), w.ravel()
        gw = w * np.asarray(self.g(self.t + u), dtype=complex)
        out = np.empty(z.size, dtype=complex)
        for i in range(0, z.size, 128):
            out[i:i + 128] = np.exp(-z[i:i + 128, None] * u[None, :]) @ gw
        return out

    def __call__(self, z):
        z = np.asarray(z, dtype=complex).ravel()
        if z.size == 0:
            return z
        U = 50.0 / float(np.min(z.real))
        npan = max(8, int(math.ceil(float(np.max(np.abs(z.imag))) * U / 8.0)))
        prev = self._eval(z, U, npan)
        for _ in range(10):
            npan *= 2
            cur = self._eval(z, U, npan)
            if np.max(np.abs(cur - prev)) <= 0.1 * self.tol * max(1.0, float(np.max(np.abs(cur)))):
                return cur
            prev = cur
        raise RefinementError("tail time integral did not converge", (self.t, self.t + U))


# ---------------------------------------------------------------------------
# reconstruction

@dataclass
class LogSingularity:
    """Taylor data of f~ at 0 (f^ ~ f~(z) log z near 0)."""

    coeffs: tuple[complex, ...]
    r: float = 1.0
    sup_deriv: float | None = None
    f_tilde: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        self.coeffs = tuple(complex(c) for c in self.coeffs)
        if len(self.coeffs) < 1:
            raise RateSpecError("need at least one Taylor coefficient")
        if not self.r > 0:
            raise RateSpecError("radius r must be positive")

    def poly(self, x, n: int | None = None):
        n = len(self.coeffs) if n is None else n
        x = np.asarray(x, dtype=complex)
        out = np.zeros_like(x)
        for a in reversed(self.coeffs[:n]):
            out = out * x + a
        return out

    def value(self, x):
        if self.f_tilde is not None:
            return np.asarray(self.f_tilde(np.asarray(x, dtype=float)), dtype=complex)
        return self.poly(x)


def taylor_correction(sing: LogSingularity, n: int, t: float) -> complex:
    """f~_{n-1}(d/dt) t^{-1} = sum_j a_j j! (-1)^j t^{-j-1}."""
    if int(n) != n or n < 1 or n > len(sing.coeffs):
        raise RateSpecError(f"n must lie in 1..{len(sing.coeffs)}")
    if not t > 0:
        raise RateSpecError("t must be strictly positive")
    tot = 0j
    for j in range(int(n)):
        tot += sing.coeffs[j] * math.factorial(j) * (-1) ** j * t ** (-j - 1)
    return complex(tot)


def taylor_oracle(sing: LogSingularity, n: int, t: float) -> complex:
    """int_0^inf e^{-xt} f~_{n-1}(-x) dx by adaptive quadrature."""
    def part(fn):
        return integrate.quad(lambda x: fn(math.exp(-x * t) * complex(sing.poly(-x, n))),
                              0.0, np.inf, epsabs=1e-14, epsrel=1e-13, limit=400)[0]
    return complex(part(lambda v: v.real), part(lambda v: v.imag))


@dataclass
class ReconstructionResult:
    value: complex
    I1: complex
    I2: complex
    I3: complex
    error_estimate: float
    n_nodes: int
    mode: str
    variant: str
    rho: float | None
    Y: float | None
    paths: dict[str, list[ContourPath]] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        c = lambda z: [z.real, z.imag]
        return {"value": c(self.value), "I1": c(self.I1), "I2": c(self.I2), "I3": c(self.I3),
                "error_estimate": self.error_estimate, "n_nodes": self.n_nodes,
                "mode": self.mode, "variant": self.variant, "rho": self.rho, "Y": self.Y}


def _axis_cutoff(ff: FudgeFactor, level: float = 800.0) -> float:
    """eta in (0, 1) with log|psi(i eta)| = -level."""
    target = math.log(level)
    lo, hi = 0.0, 1.0 - 1e-15
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        E, _ = ff.exponent(np.array([1j * mid]))
        if E[0] > target:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-15:
            break
    return hi


def _deformed_paths(R: float, rho_r: float, rho_l: float, Y: float, sigma: float, singular: bool):
    """Upward right path for I1; downward left paths for I2 and I3."""
    br = tuple(np.clip(0.5 + np.arange(-8, 9) * sigma / (2 * Y), 0, 1))
    right = [
        _segment("axis_low", -1j * R, -1j * Y),
        _segment("corner_low", -1j * Y, rho_r - 1j * Y),
        _segment("line", rho_r - 1j * Y, rho_r + 1j * Y, br),
        _segment("corner_high", rho_r + 1j * Y, 1j * Y),
        _segment("axis_high", 1j * Y, 1j * R),
    ]
    left = [
        _segment("axis_high", 1j * R, 1j * Y),
        _segment("corner_high", 1j * Y, -rho_l + 1j * Y),
    ]
    if singular:
        brh = tuple(np.clip(np.arange(1, 9) * sigma / (2 * Y), 0, 1))
        left += [_segment("line_upper", -rho_l + 1j * Y, -rho_l + 0j, brh),
                 _segment("line_lower", -rho_l - 0j, -rho_l - 1j * Y, tuple(1 - np.array(brh)))]
    else:
        left += [_segment("line", -rho_l + 1j * Y, -rho_l - 1j * Y, br)]
    left += [_segment("corner_low", -rho_l - 1j * Y, -1j * Y),
             _segment("axis_low", -1j * Y, -1j * R)]
    return right, left


def reconstruct(g_eval, fhat_eval, t: float, R: float, M: RateSpec, k: int = 3,
                quad_tol: float = 1e-7, *, f0: complex | None = None, r1: float = 1.0,
                variant: str = "analytic-at-zero", sing: LogSingularity | None = None,
                mode: str = "deformed", budget: float = 1.0) -> ReconstructionResult:
    """f(t) = I1 + I2 + I3 with lambda = 0 and the fudge factor psi(z/R).

    ``g_eval`` is -f' on [0, inf), ``fhat_eval`` the Laplace transform of f
    on Omega_M and the right half plane.  ``f0 = f(0)``; when omitted it is
    int_0^inf g (assumes f(inf) = 0).
    """
    if not (t > 0 and R > 0):
        raise RateSpecError("t and R must be positive")
    if mode not in ("deformed", "literal"):
        raise RateSpecError(f"unknown mode {mode!r}")
    singular = variant == "with-singularity"
    if singular and sing is None:
        raise RateSpecError("with-singularity needs a LogSingularity")
    if f0 is None:
        f0 = integrate.quad(lambda s: float(np.real(g_eval(np.array([s]))[0])), 0, np.inf,
                            limit=400)[0]
    ff = FudgeFactor(k)
    inner = _InnerIntegral(g_eval, t, quad_tol)
    tail = _TailIntegral(g_eval, t, quad_tol)
    MR = _mval(M, R)
    Mr1 = _mval(M, r1)

    def psi_R(z):
        lm, ph = ff.log_value(z / R)
        return lm, ph

    def common(z, dz, which):
        """Integrand values; the 1/(2 pi i) is applied at the end."""
        lm, ph = psi_R(z)
        live = lm > _UNDER
        out = np.zeros(z.shape, dtype=complex)
        if not np.any(live):
            return out, lm
        zl = z[live]
        psi = np.exp(lm[live] + 1j * ph[live])
        if which == 1:
            H = np.empty(zl.shape, dtype=complex)
            # e^{zt} g^ - J cancels once Re z t is large
            far = zl.real * t > 1.0
            if np.any(~far):
                zn = zl[~far]
                H[~far] = np.exp(zn * t) * (f0 - zn * fhat_eval(zn)) - inner(zn)
            if np.any(far):
                H[far] = tail(zl[far])
        elif which == 2:
            H = -inner(zl)
        else:
            H = np.exp(zl * t) * (f0 - zl * fhat_eval(zl))
        out[live] = psi * H / zl * dz[live]
        return out, lm

    paths: dict[str, list[ContourPath]] = {"I1": [], "I2": [], "I3": []}
    totals = {"I1": 0j, "I2": 0j, "I3": 0j}
    err = 0.0
    nn = 0

    def run(key, path, which):
        nonlocal err, nn
        def fun(s):
            v, _ = common(path.z(s), path.dz(s), which)
            return v
        v, e, s, w, vals = adaptive_quad(fun, path.a, path.b, quad_tol, path.breaks)
        path.nodes, path.weights, path.integrand_abs = s, w, np.abs(vals)
        path.log_psi = psi_R(path.z(s))[0]
        totals[key] += v
        err += e
        nn += s.size
        paths[key].append(path)

    def jump_term(upper: float):
        """I34 in the delta -> 0 limit: -int_0^upper e^{-xt} psi(-x/R) f~(-x) dx."""
        nonlocal err, nn
        def fun(x):
            lm, ph = psi_R(-x + 0j)
            return -np.exp(-x * t) * np.exp(lm + 1j * ph) * sing.value(-x)
        v, e, s, w, vals = adaptive_quad(fun, 0.0, upper, quad_tol)
        p = _segment("gamma34-limit", 0.0, -upper)
        p.nodes, p.weights, p.integrand_abs = s, w, np.abs(vals)
        p.log_psi = psi_R(-s + 0j)[0]
        paths["I3"].append(p)
        err += e
        nn += s.size
        return v

    rho = Y = None
    I34 = 0j
    if mode == "deformed":
        C = ff.curvature
        rho = R * math.sqrt(budget / C)
        rho_l = min(rho, 1.0 / MR)
        if singular:
            rho_l = min(rho_l, sing.r, 1.0 / Mr1)
        Y = R * _axis_cutoff(ff)
        sigma = R / math.sqrt(2 * C)
        right, left = _deformed_paths(R, rho, rho_l, Y, sigma, singular)
        for p in right:
            run("I1", p, 1)
        for p in left:
            run("I2", _segment(p.name, p.start(), p.end(), p.breaks), 2)
        for p in left:
            run("I3", p, 3)
        if singular:
            I34 = jump_term(rho_l)
    else:
        lit = build_contours(M, R, r1, k, variant)
        worst = max(float(np.max(ff.log_value(p.sample(400) / R)[0])) for p in lit)
        if worst > 40.0:
            raise RateSpecError(f"literal contours reach log|psi| = {worst:.4g}; "
                                "use mode='deformed' or a smaller k")
        for p in lit:
            if p.name.startswith("gamma1"):
                run("I1", p, 1)
            elif p.name.startswith("gamma2"):
                run("I2", p, 2)
            elif p.name.startswith("gamma34"):
                continue
            elif singular and p.name in ("gamma33", "gamma35"):
                # delta -> 0 endpoints on the real axis
                a0, b0 = p.start(), p.end()
                a0 = a0 if p.name == "gamma33" else complex(a0.real, -0.0)
                b0 = complex(b0.real, 0.0) if p.name == "gamma33" else b0
                run("I3", _segment(p.name, a0, b0), 3)
            else:
                run("I3", p, 3)
        if singular:
            I34 = jump_term(1.0 / Mr1)
    scale = 1.0 / (2j * math.pi)
    I1, I2 = totals["I1"] * scale, totals["I2"] * scale
    I3 = totals["I3"] * scale + I34
    return ReconstructionResult(value=I1 + I2 + I3, I1=I1, I2=I2, I3=I3,
                                error_estimate=err / (2 * math.pi), n_nodes=nn, mode=mode,
                                variant=variant, rho=rho, Y=Y, paths=paths)


def path_rows(res: ReconstructionResult) -> list[dict[str, Any]]:
    """Per-node rows: integral, path, node, z, log|psi(z/R)|, integrand magnitude."""
    rows = []
    for key, plist in res.paths.items():
        for p in plist:
            zs = p.z(p.nodes) if p.nodes is not None else np.array([])
            for s, z, lp, ia in zip(p.nodes, zs, p.log_psi, p.integrand_abs):
                rows.append({"integral": key, "path": p.name, "node": float(s),
                             "z_re": float(z.real), "z_im": float(z.imag),
                             "log_abs_psi": float(lp), "integrand_abs": float(ia)})
    return rows


# ---------------------------------------------------------------------------
# test functions

@dataclass
class TestCase:
    """f with -f', f^, f(0) and optional log-singularity data."""

    __test__ = False

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    fhat: Callable[[np.ndarray], np.ndarray]
    f0: complex
    M: RateSpec
    K: RateSpec
    sing: LogSingularity | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def variant(self) -> str:
        return "with-singularity" if self.sing is not None else "analytic-at-zero"


def _logsing_g(s):
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    small = s < 0.5
    x = s[small]
    acc = np.zeros_like(x)
    for n in range(24, 0, -1):
        acc = acc * x + (-1) ** (n + 1) * n / math.factorial(n + 1)
    out[small] = acc
    y = s[~small]
    out[~small] = (-np.expm1(-y) - y * np.exp(-y)) / y ** 2
    return out


def _logsing_f(s):
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(s == 0, 1.0, -np.expm1(-s) / s)


def testcase(name: str, **kw) -> TestCase:
    """Preset test functions: ``exp``, ``log_singular``, ``measure``."""
    from .rate_algebra import constant, max_with_one, power
    if name == "exp":
        return TestCase("exp", lambda t: np.exp(-np.asarray(t, float)),
                        lambda t: np.exp(-np.asarray(t, float)),
                        lambda z: 1.0 / (1.0 + np.asarray(z, complex)), 1.0,
                        constant(2.0), constant(2.0))
    if name == "log_singular":
        sing = LogSingularity((-1.0,), r=1.0, sup_deriv=0.0,
                              f_tilde=lambda x: -np.ones_like(np.asarray(x, float)))
        return TestCase("log_singular", _logsing_f, _logsing_g,
                        lambda z: np.log1p(1.0 / np.asarray(z, complex)), 1.0,
                        constant(2.0), constant(2.0), sing)
    if name == "measure":
        from .counterexample import build_measure, cauchy_of_measure, laplace_of_measure
        k = int(kw.get("k", 6))
        delta = float(kw.get("delta", 1.5))
        M = constant(1.0)
        _, p = build_measure(M, max_with_one(power(2.0)), delta, k)
        return TestCase("measure", lambda t: laplace_of_measure(p, np.asarray(t, float)),
                        lambda t: -laplace_of_measure(p, np.asarray(t, float), 1),
                        lambda z: cauchy_of_measure(p, np.asarray(z, complex)),
                        complex(laplace_of_measure(p, 0.0)), M, max_with_one(power(2.0)),
                        meta={"params": p})
    raise RateSpecError(f"unknown test case {name!r}")


# ---------------------------------------------------------------------------
# decay estimate

def decay_estimate_check(case: TestCase, M: RateSpec | None = None, K: RateSpec | None = None,
                         profile: HypothesisProfile | None = None, t_grid=None,
                         hyp_grid=None) -> dict[str, Any]:
    """sup_t |f(t) + correction| min(M_K~^{-1}(t)^m, t^{n+1}) on a grid."""
    M = case.M if M is None else M
    K = case.K if K is None else K
    profile = HypothesisProfile() if profile is None else profile
    t = np.geomspace(1.0, 60.0, 80) if t_grid is None else np.asarray(t_grid, float)
    hyp_grid = np.geomspace(max(profile.r1, 1.0), 1e6, 64) if hyp_grid is None else hyp_grid
    hyp = check_hypotheses(M, K, profile, hyp_grid)
    kt, mk, used_pi = decay_kernel(M, K, profile.m)
    logR, _ = right_inverse_log(mk, np.log(t))
    fv = np.asarray(case.f(t), dtype=complex)
    if case.sing is not None:
        n = min(profile.n, len(case.sing.coeffs))
        fv = fv + np.array([taylor_correction(case.sing, n, ti) for ti in t])
        lw = np.minimum(profile.m * logR, (n + 1) * np.log(t))
    else:
        lw = profile.m * logR
    with np.errstate(divide="ignore"):
        lv = np.log(np.abs(fv)) + lw
    top = float(np.max(lv))
    # exact zeros: t below F(0) (inverse rate 0) or f + correction
    # cancelling below double resolution; neither informs the trend
    resolved = np.isfinite(lv)
    trend = classify_growth(lv[resolved]) if resolved.sum() >= 3 else "unresolved"
    return {"case": case.name, "K_tilde": kt.describe(), "positive_increase": used_pi,
            "hypotheses_passed": bool(hyp["passed"]), "hypotheses": hyp,
            "log_C_m": top, "C_m": math.exp(top) if top < 709 else math.inf,
            "trend": trend, "t_range": [float(t[0]), float(t[-1])],
            "n_zero": int((~resolved).sum()),
            "passed": bool(math.isfinite(top) and trend == "bounded")}


def sandwich_check(cf, t_grid=None) -> dict[str, Any]:
    """Upper envelope and lower bound along t_n for an assembled counterexample."""
    from .counterexample import verify_optimality
    tn = np.array(cf.t_n, dtype=float)
    t = np.unique(np.concatenate([np.geomspace(1.0, tn[-1], 200) if t_grid is None
                                  else np.asarray(t_grid, float), tn]))
    case = TestCase("counterexample", lambda s: np.asarray(cf.f(s), dtype=complex),
                    lambda s: -np.asarray(cf.f_prime(s), dtype=complex),
                    lambda z: cf.fhat(z), complex(cf.f(0.0)), cf.M, cf.K)
    upper = decay_estimate_check(case, t_grid=t)
    lower = verify_optimality(cf)["lower"]
    return {"upper": upper, "lower": lower,
            "passed": bool(upper["passed"] and lower.get("positive", False))}
