"""Toy generators for checking the C0-semigroup decay corollary.

Three families are supported.  ``atomic`` is a normal operator with a
listed point spectrum, ``curve`` a normal operator whose spectrum is the
curve s -> -1/M(s) + is (and its mirror image), and ``jordan`` a direct
sum of Jordan blocks.  For normal models every norm is a scalar
optimization over the spectrum; Jordan blocks are handled through the
finite nilpotent expansion.

All decay quantities are carried as logarithms because the interesting
orbits (e^{-2 sqrt t} at t = 1e6) underflow doubles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .rate_algebra import (RateSpec, RateSpecError, constant, exp_power, log_eval, log_power,
                           m_log, max_with_one, power, product, right_inverse_log)

__all__ = [
    "SpectrumModel", "DecayReport", "MajorantFit", "SpectralPoleError",
    "resolvent_norm", "orbit_norm", "log_orbit_norm", "fit_resolvent_majorant",
    "corollary_check", "preset", "jordan_exponential", "jordan_resolvent",
    "c_alpha", "report_rows", "CSV_UNITS",
]

POLE_TOL = 1e-12
_BIG_LOG = 1e6     # ln s used as "s = infinity" for limits


class SpectralPoleError(ValueError):
    """The resolvent was requested on (or within 1e-12 of) the spectrum."""


def c_alpha(alpha: float) -> float:
    """alpha^-alpha (1 + alpha)^(1 + alpha), the sharp constant for log(e v s)^alpha."""
    if not alpha > 0:
        raise RateSpecError("alpha must be positive")
    return alpha ** (-alpha) * (1.0 + alpha) ** (1.0 + alpha)


# ---------------------------------------------------------------------------
# models

@dataclass(frozen=True, eq=False)
class SpectrumModel:
    variant: str
    eigenvalues: np.ndarray | None = None
    M: RateSpec | None = None
    blocks: tuple[tuple[complex, int], ...] = ()
    name: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant == "atomic":
            lam = np.asarray(self.eigenvalues, dtype=complex).ravel()
            if lam.size == 0:
                raise RateSpecError("atomic model needs at least one eigenvalue")
            if not np.all(np.isfinite(lam)) or np.any(lam.real >= 0):
                raise RateSpecError("eigenvalues must be finite with negative real part")
            object.__setattr__(self, "eigenvalues", lam)
        elif self.variant == "curve":
            if not isinstance(self.M, RateSpec):
                raise RateSpecError("curve model needs a RateSpec M")
            self.M.validate()
            lm0 = log_eval(self.M, -np.inf)
            if not np.isfinite(lm0):
                raise RateSpecError("curve model needs 0 < M(0) < inf")
        elif self.variant == "jordan":
            bl = tuple((complex(l), int(d)) for l, d in self.blocks)
            if not bl:
                raise RateSpecError("jordan model needs at least one block")
            for l, d in bl:
                if d < 1 or not l.real < 0 or not math.isfinite(abs(l)):
                    raise RateSpecError(f"bad jordan block ({l}, {d})")
            object.__setattr__(self, "blocks", bl)
        else:
            raise RateSpecError(f"unknown variant {self.variant!r}")

    @classmethod
    def atomic(cls, eigenvalues, name="atomic", **params):
        return cls("atomic", eigenvalues=eigenvalues, name=name, params=params)

    @classmethod
    def curve(cls, M: RateSpec, name="curve", **params):
        return cls("curve", M=M, name=name, params=params)

    @classmethod
    def jordan(cls, blocks, name="jordan", **params):
        return cls("jordan", blocks=tuple(blocks), name=name, params=params)

    @property
    def is_normal(self) -> bool:
        return self.variant != "jordan"

    @property
    def omega0(self) -> float:
        """sup Re(spectrum); 0 is possible only as a limit at infinity."""
        if self.variant == "atomic":
            return float(self.eigenvalues.real.max())
        if self.variant == "jordan":
            return max(l.real for l, _ in self.blocks)
        return -math.exp(-float(log_eval(self.M, _BIG_LOG)))

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"variant": self.variant, "name": self.name,
                             "params": dict(self.params), "omega0": self.omega0}
        if self.variant == "atomic":
            d["n_eigenvalues"] = int(self.eigenvalues.size)
        elif self.variant == "curve":
            d["M"] = self.M.to_dict()
        else:
            d["blocks"] = [[l.real, l.imag, n] for l, n in self.blocks]
        return d


def preset(name: str, param: float | None = None) -> SpectrumModel:
    """Named models: ``normal_line(delta)``, ``curve_log_alpha(alpha)``,
    ``jordan_dyadic(levels)``.  ``name`` may carry the parameter inline."""
    base, arg = name.strip(), param
    if "(" in base:
        if not base.endswith(")"):
            raise RateSpecError(f"bad preset {name!r}")
        base, _, inner = base[:-1].partition("(")
        try:
            arg = float(inner)
        except ValueError as exc:
            raise RateSpecError(f"bad preset parameter in {name!r}") from exc
    if base == "normal_line":
        delta = 1.0 if arg is None else float(arg)
        if not delta > 0:
            raise RateSpecError("delta must be positive")
        # step 1/4 on [-1000, 1000]; s = 0 and every integer are included
        s = np.arange(-4000, 4001) / 4.0
        return SpectrumModel.atomic(-delta + 1j * s, name=f"normal_line({delta:g})", delta=delta)
    if base == "curve_log_alpha":
        alpha = 1.0 if arg is None else float(arg)
        if not alpha > 0:
            raise RateSpecError("alpha must be positive")
        return SpectrumModel.curve(log_power(alpha), name=f"curve_log_alpha({alpha:g})", alpha=alpha)
    if base == "jordan_dyadic":
        levels = 8 if arg is None else arg
        if int(levels) != levels or not 1 <= levels <= 40:
            raise RateSpecError("levels must be an integer in [1, 40]")
        levels = int(levels)
        blocks = [(complex(-1.0, 2.0 ** n), n) for n in range(1, levels + 1)]
        return SpectrumModel.jordan(blocks, name=f"jordan_dyadic({levels})", levels=levels)
    raise RateSpecError(f"unknown preset {name!r}")


# ---------------------------------------------------------------------------
# Jordan blocks: J = lam I + N, everything is an upper triangular Toeplitz
# matrix so only first rows are stored.

def _toeplitz_upper(row: np.ndarray) -> np.ndarray:
    d = row.size
    out = np.zeros((d, d), dtype=complex)
    for j in range(d):
        out[np.arange(d - j), np.arange(j, d)] = row[j]
    return out


def _tmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.convolve(a, b)[: a.size]


def _exp_row(t: float, d: int) -> np.ndarray:
    return np.array([t ** j / math.factorial(j) for j in range(d)], dtype=complex)


def _inv_row(lam: complex, d: int) -> np.ndarray:
    return np.array([(-1) ** j / lam ** (j + 1) for j in range(d)], dtype=complex)


def jordan_exponential(lam: complex, d: int, t: float) -> np.ndarray:
    """e^{tJ} for one block."""
    return np.exp(lam * t) * _toeplitz_upper(_exp_row(t, d))


def jordan_resolvent(lam: complex, d: int, z: complex) -> np.ndarray:
    """(z - J)^{-1} = sum_j N^j / (z - lam)^{j+1}."""
    w = complex(z) - complex(lam)
    if abs(w) < POLE_TOL:
        raise SpectralPoleError(f"z = {z} is an eigenvalue")
    return _toeplitz_upper(np.array([w ** -(j + 1) for j in range(d)]))


def _opnorm(a: np.ndarray) -> float:
    return float(np.linalg.svd(a, compute_uv=False)[0])


def _jordan_log_orbit(lam: complex, d: int, t: float, m: int) -> float:
    row = _exp_row(t, d)
    inv = _inv_row(lam, d)
    for _ in range(m):
        row = _tmul(row, inv)
    return t * lam.real + math.log(_opnorm(_toeplitz_upper(row)))


# ---------------------------------------------------------------------------
# curve geometry

def _logM(M: RateSpec, ls):
    return log_eval(M, ls)


def _Minv(M: RateSpec, s):
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore"):
        return np.exp(-_logM(M, np.log(s)))


def _curve_dist2(M: RateSpec, x: float, y: float) -> float:
    """min over s >= 0 of |x + iy - (-1/M(s) + is)|^2, parametrized by tau = s - y."""
    s0 = max(y, 0.0)
    d0 = math.hypot(x + float(_Minv(M, s0)), y - s0)
    lo, hi = max(-y, -d0), d0
    if hi <= lo:
        return d0 * d0

    def g(tau):
        tau = np.asarray(tau, dtype=float)
        return (x + _Minv(M, np.maximum(y + tau, 0.0))) ** 2 + tau ** 2

    taus = np.linspace(lo, hi, 257)
    vals = g(taus)
    i = int(np.argmin(vals))
    a, b = taus[max(i - 1, 0)], taus[min(i + 1, taus.size - 1)]
    best = float(vals[i])
    if b > a:
        r = minimize_scalar(lambda u: float(g(u)), bounds=(a, b), method="bounded",
                            options={"xatol": 1e-14 * max(1.0, abs(a), abs(b))})
        best = min(best, float(r.fun))
    return min(best, d0 * d0)


def _curve_phi(M: RateSpec, ls, t: float, m: int):
    """log of e^{t Re lam}/|lam|^m at s = e^ls."""
    lm = _logM(M, ls)
    with np.errstate(over="ignore"):
        val = -t * np.exp(-lm)
    if m:
        val = val - 0.5 * m * np.logaddexp(2.0 * np.asarray(ls, dtype=float), -2.0 * lm)
    return val


def _stationary_guess(M: RateSpec, t: float, m: int) -> list[float]:
    # M = log(e v s)^a:  maximize -t u^-a - m u  ->  u = (a t / m)^(1/(1+a))
    if M.kind == "log_power" and m > 0 and t > 0:
        a = M.p["a"]
        if a > 0:
            return [(a * t / m) ** (1.0 / (1.0 + a))]
    return []


def _curve_log_orbit(M: RateSpec, t: float, m: int) -> float:
    lm0 = float(_logM(M, -np.inf))
    at_zero = -t * math.exp(-lm0) + m * lm0
    grid = np.concatenate((np.linspace(-30.0, 30.0, 241), np.geomspace(30.0, 1e7, 400)[1:],
                           _stationary_guess(M, t, m)))
    grid = np.unique(grid)
    vals = _curve_phi(M, grid, t, m)
    i = int(np.argmax(vals))
    best = float(vals[i])
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    if b > a:
        r = minimize_scalar(lambda u: -float(_curve_phi(M, u, t, m)), bounds=(a, b),
                            method="bounded", options={"xatol": 1e-12 * max(1.0, abs(b))})
        best = max(best, -float(r.fun))
    cands = [best, at_zero]
    if m == 0:
        # sup e^{-t/M(s)} is approached as s -> infinity
        cands.append(float(_curve_phi(M, _BIG_LOG, t, 0)))
    return max(cands)


# ---------------------------------------------------------------------------
# norms

def resolvent_norm(model: SpectrumModel, z: complex) -> float:
    """||(z - A)^{-1}||."""
    z = complex(z)
    if model.variant == "jordan":
        return max(_opnorm(jordan_resolvent(l, d, z)) for l, d in model.blocks)
    if model.variant == "atomic":
        dist = float(np.min(np.abs(model.eigenvalues - z)))
    else:
        d2 = min(_curve_dist2(model.M, z.real, z.imag), _curve_dist2(model.M, z.real, -z.imag))
        dist = math.sqrt(d2)
    if dist < POLE_TOL:
        raise SpectralPoleError(f"z = {z} lies on the spectrum")
    return 1.0 / dist


def log_orbit_norm(model: SpectrumModel, t: float, m: int = 1) -> float:
    """ln ||T(t) A^{-m}||."""
    t = float(t)
    if not t >= 0 or not math.isfinite(t):
        raise RateSpecError("t must be finite and non-negative")
    if int(m) != m or m < 0:
        raise RateSpecError("m must be a non-negative integer")
    m = int(m)
    if model.variant == "atomic":
        lam = model.eigenvalues
        return float(np.max(t * lam.real - m * np.log(np.abs(lam))))
    if model.variant == "curve":
        return _curve_log_orbit(model.M, t, m)
    return max(_jordan_log_orbit(l, d, t, m) for l, d in model.blocks)


def orbit_norm(model: SpectrumModel, t: float, m: int = 1) -> float:
    """||T(t) A^{-m}||; underflows to 0 for fast decay, see log_orbit_norm."""
    return math.exp(log_orbit_norm(model, t, m))


# ---------------------------------------------------------------------------
# resolvent majorant

@dataclass
class MajorantFit:
    s: np.ndarray
    M_emp: np.ndarray
    shape: str
    params: dict
    rss: dict
    fitted: RateSpec
    majorant: RateSpec
    scale: float

    def to_dict(self) -> dict[str, Any]:
        return {"shape": self.shape, "params": self.params, "rss": self.rss,
                "scale": self.scale, "fitted": self.fitted.to_dict(),
                "majorant": self.majorant.to_dict(),
                "M_emp_max": float(self.M_emp.max())}


def _default_s_grid(model: SpectrumModel) -> np.ndarray:
    s = np.concatenate(([0.0], np.geomspace(1e-2, 1e6, 321)))
    if model.variant == "atomic":
        im = np.abs(model.eigenvalues.imag)
        s = np.concatenate((s, im[im <= 1e6]))
    elif model.variant == "jordan":
        s = np.concatenate((s, [abs(l.imag) for l, _ in model.blocks]))
    return np.unique(s)


def _lsq(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return coef, float(np.sum((X @ coef - y) ** 2))


def fit_resolvent_majorant(model: SpectrumModel, s_grid=None) -> MajorantFit:
    """Running max of ||(is - A)^{-1}|| and a catalog-shape fit of it.

    Shapes: constant, C (1 v s^a), C log(e v s)^a, C exp(b s^a).  The
    simplest shape within a relative RSS tolerance of the best wins.
    ``majorant`` is the fit scaled up to dominate M_emp on the grid.
    """
    s = np.unique(np.abs(np.asarray(_default_s_grid(model) if s_grid is None else s_grid,
                                    dtype=float)))
    if s.size < 4:
        raise RateSpecError("s_grid needs at least 4 points")
    r = np.array([resolvent_norm(model, 1j * v) for v in s])
    memp = np.maximum.accumulate(r)
    y = np.log(memp)
    one = np.ones_like(s)
    with np.errstate(divide="ignore"):
        ls = np.log(s)
    pos = np.maximum(ls, 0.0)
    ll = np.log(np.maximum(ls, 1.0))

    fits: dict[str, tuple[dict, float, RateSpec]] = {}
    c, rss = _lsq(one[:, None], y)
    fits["constant"] = ({"C": math.exp(c[0])}, rss, constant(math.exp(c[0])))
    c, rss = _lsq(np.column_stack((one, pos)), y)
    if c[1] > 0:
        fits["power"] = ({"C": math.exp(c[0]), "a": c[1]}, rss,
                         product(constant(math.exp(c[0])), max_with_one(power(c[1]))))
    c, rss = _lsq(np.column_stack((one, ll)), y)
    if c[1] > 0:
        fits["log_power"] = ({"C": math.exp(c[0]), "a": c[1]}, rss,
                             product(constant(math.exp(c[0])), log_power(c[1])))
    for a in (0.25, 0.5, 1.0):
        with np.errstate(over="ignore"):
            sa = np.minimum(s, 1e6) ** a
        c, rss = _lsq(np.column_stack((one, sa)), y)
        if c[1] > 0 and rss < fits.get("exp", ({}, np.inf))[1]:
            fits["exp"] = ({"C": math.exp(c[0]), "b": c[1], "a": a}, rss,
                           product(constant(math.exp(c[0])), exp_power(c[1], a)))

    order = ["constant", "log_power", "power", "exp"]
    best_rss = min(v[1] for v in fits.values())
    tol = 1e-6 * s.size + 1e-3 * best_rss
    shape = next(k for k in order if k in fits and fits[k][1] <= best_rss + tol)
    params, _, fitted = fits[shape]
    _, lfit = _eval_many(fitted, s)
    scale = float(max(1.0, np.max(np.exp(y - lfit))))
    majorant = fitted if scale == 1.0 else product(constant(scale), fitted)
    return MajorantFit(s, memp, shape, {k: float(v) for k, v in params.items()},
                       {k: v[1] for k, v in fits.items()}, fitted, majorant, scale)


def _eval_many(spec: RateSpec, s):
    with np.errstate(divide="ignore"):
        lv = log_eval(spec, np.log(np.asarray(s, dtype=float)))
    return np.exp(lv), lv


# ---------------------------------------------------------------------------
# corollary check

CSV_UNITS = {"t": "t_time", "orbit": "orbit_norm", "ln_orbit": "ln_orbit_norm"}


@dataclass
class DecayReport:
    model: SpectrumModel
    m: int
    M: RateSpec
    M_source: str
    t: np.ndarray
    log_orbit: np.ndarray
    c_grid: np.ndarray
    log_predicted: dict[float, np.ndarray]
    log_ratio: dict[float, np.ndarray]
    verdicts: dict[float, str]
    bound: dict[float, float]
    c_star: float | None
    monotone: bool

    @property
    def orbit(self) -> np.ndarray:
        return np.exp(self.log_orbit)

    def bounded_below(self, c_max: float = 0.9) -> bool:
        return all(self.verdicts[c] == "bounded" for c in self.c_grid if c <= c_max)

    def to_dict(self) -> dict[str, Any]:
        return {
            "model": self.model.to_dict(), "m": self.m, "M": self.M.to_dict(),
            "M_source": self.M_source,
            "t_range": [float(self.t[0]), float(self.t[-1])], "n_t": int(self.t.size),
            "verdicts": {f"{c:g}": v for c, v in self.verdicts.items()},
            "ln_bound": {f"{c:g}": b for c, b in self.bound.items()},
            "c_star": self.c_star, "monotone_decay": self.monotone,
            "bounded_for_c_le_0.9": self.bounded_below(0.9),
        }


def _verdict(t: np.ndarray, lr: np.ndarray) -> str:
    """growing: ratio increases monotonically over the last decade of t and
    peaks at the final sample; bounded otherwise."""
    tail = lr[t >= t[-1] / 10.0]
    if tail.size < 2:
        tail = lr[-2:]
    scale = np.maximum(1.0, np.abs(tail[1:]))
    inc = np.all(np.diff(tail) > -1e-12 * scale) and tail[-1] > tail[0]
    return "growing" if inc and lr[-1] >= lr.max() else "bounded"


def corollary_check(model: SpectrumModel, m: int = 1, c_grid=None, t_grid=None,
                    M: RateSpec | None = None, s_grid=None) -> DecayReport:
    """Compare ||T(t)A^{-m}|| with 1/M_log^{-1}(ct) for each c.

    M defaults to the defining rate for curves and to the fitted majorant
    otherwise.  ``c_star`` is the largest c of the grid below which every
    c is classified bounded.
    """
    if int(m) != m or m < 1:
        raise RateSpecError("m must be a positive integer")
    t = np.asarray(np.geomspace(1e4, 1e6, 41) if t_grid is None else t_grid, dtype=float)
    if t.ndim != 1 or t.size < 3 or np.any(t <= 0) or np.any(np.diff(t) <= 0):
        raise RateSpecError("t_grid must be increasing and positive")
    if math.log10(t[-1] / t[0]) < 2 - 1e-9:
        raise RateSpecError("t_grid must span at least two decades")
    cs = np.asarray(np.round(np.arange(0.1, 6.0001, 0.05), 10) if c_grid is None else c_grid,
                    dtype=float)
    cs = np.unique(cs)
    if np.any(cs <= 0):
        raise RateSpecError("c values must be positive")
    if M is not None:
        source = "supplied"
    elif model.variant == "curve":
        M, source = model.M, "model"
    else:
        M, source = fit_resolvent_majorant(model, s_grid).majorant, "fit"
    F = m_log(M)
    lo = np.array([log_orbit_norm(model, v, m) for v in t])
    mono = bool(np.all(np.diff(lo) <= 1e-12 * np.maximum(1.0, np.abs(lo[1:]))))
    preds, ratios, verdicts, bound = {}, {}, {}, {}
    for c in cs:
        ls, below = right_inverse_log(F, np.log(c * t))
        ls = np.where(below, 0.0, ls)      # M_log^{-1} of a sub-threshold target: s = 0, factor 1
        c = float(c)
        preds[c] = -ls
        ratios[c] = ls + lo
        verdicts[c] = _verdict(t, ratios[c])
        bound[c] = float(np.max(ratios[c]))
    c_star = None
    for c in sorted(verdicts):
        if verdicts[c] != "bounded":
            break
        c_star = c
    return DecayReport(model, int(m), M, source, t, lo, cs, preds, ratios, verdicts, bound,
                       c_star, mono)


def report_rows(rep: DecayReport) -> tuple[list[str], list[list[float]]]:
    """CSV header and rows: t, orbit, ln orbit, then ln predicted / ln ratio per c."""
    header = ["t_time", "orbit_norm", "ln_orbit_norm"]
    for c in rep.c_grid:
        header += [f"ln_predicted_envelope_c={c:g}", f"ln_ratio_c={c:g}"]
    rows = []
    for i, tv in enumerate(rep.t):
        row = [float(tv), float(math.exp(rep.log_orbit[i])), float(rep.log_orbit[i])]
        for c in rep.c_grid:
            row += [float(rep.log_predicted[float(c)][i]), float(rep.log_ratio[float(c)][i])]
        rows.append(row)
    return header, rows
