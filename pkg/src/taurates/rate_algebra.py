"""Monotone rate functions and the transforms built on them.

A :class:`RateSpec` is a small expression tree.  Every node is evaluated in
two coordinates at once: the plain value (which may overflow to ``inf``) and
the natural log of the value, which is authoritative once values exceed
``1e300``.  Inputs are carried the same way, as the pair ``(s, log s)``, so
that compositions such as ``M(s) * log(e v K(s))`` with a doubly exponential
``K`` never leave floating point range.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

__all__ = [
    "RateSpec",
    "RateSpecError",
    "UnboundedSearchError",
    "HypothesisProfile",
    "PositiveIncreaseWitness",
    "constant",
    "power",
    "log_power",
    "exp_power",
    "double_exp",
    "product",
    "pointwise_max",
    "max_with_one",
    "compose",
    "shift",
    "running_sup",
    "evaluate",
    "log_eval",
    "k_m_transform",
    "m_sub_k",
    "m_log",
    "right_inverse",
    "right_inverse_log",
    "positive_increase_estimate",
    "check_hypotheses",
    "iterated_log",
    "l_tilde",
    "c_alpha_beta",
    "classify_growth",
    "parse_short",
    "RateInverter",
    "PRESETS",
    "STRICT_PRESETS",
]

SCHEMA = "taurates.ratespec/1"
LOG_BIG = math.log(1e300)


class RateSpecError(ValueError):
    """Malformed rate specification or inadmissible argument."""


class UnboundedSearchError(RuntimeError):
    """Bracket expansion did not reach the target level."""


_ARITY = {
    "constant": (0, 0),
    "power": (0, 0),
    "log_power": (0, 0),
    "exp": (0, 0),
    "double_exp": (0, 0),
    "product": (1, None),
    "max": (1, None),
    "max1": (1, 1),
    "compose": (1, 2),
    "running_sup": (1, 1),
}
_PARAMS = {
    "constant": ("c",),
    "power": ("a",),
    "log_power": ("a",),
    "exp": ("c", "a"),
    "double_exp": ("c", "a"),
    "product": (),
    "max": (),
    "max1": (),
    "compose": ("shift",),
    "running_sup": (),
}


@dataclass(frozen=True)
class RateSpec:
    """Node of a rate-function expression tree.

    ``kind`` is one of ``constant`` (c), ``power`` (s^a), ``log_power``
    (log(e v s)^a), ``exp`` (exp(c s^a)), ``double_exp`` (exp(exp(c s^a))),
    ``product``, ``max``, ``max1`` (1 v child), ``compose`` (outer evaluated
    at ``0 v (inner(s) - shift)``; inner defaults to the identity) and
    ``running_sup`` (s -> sup_{s' <= s} child(s')).
    """

    kind: str
    params: tuple[tuple[str, float], ...] = ()
    children: tuple["RateSpec", ...] = ()

    def __post_init__(self):
        if self.kind not in _ARITY:
            raise RateSpecError(f"unknown node kind {self.kind!r}")
        lo, hi = _ARITY[self.kind]
        n = len(self.children)
        if n < lo or (hi is not None and n > hi):
            raise RateSpecError(f"{self.kind}: wrong number of children ({n})")
        names = tuple(k for k, _ in self.params)
        if set(names) != set(_PARAMS[self.kind]):
            raise RateSpecError(f"{self.kind}: expected params {_PARAMS[self.kind]}, got {names}")
        for k, v in self.params:
            if not math.isfinite(v):
                raise RateSpecError(f"{self.kind}: parameter {k} must be finite")
        if self.kind == "constant" and self.p["c"] <= 0:
            raise RateSpecError("constant must be strictly positive")

    @property
    def p(self) -> dict[str, float]:
        return dict(self.params)

    # -- structure -----------------------------------------------------
    def is_monotone(self) -> bool:
        """Structural sufficient condition for non-decreasing evaluation."""
        k, p = self.kind, self.p
        if k == "constant":
            return True
        if k in ("power", "log_power"):
            return p["a"] >= 0
        if k in ("exp", "double_exp"):
            return p["c"] * p["a"] >= 0 and (p["c"] >= 0 or p["a"] == 0)
        if k == "running_sup":
            return True
        return all(c.is_monotone() for c in self.children)

    def validate(self) -> "RateSpec":
        if not self.is_monotone():
            raise RateSpecError(f"non-monotone specification: {self.describe()}")
        return self

    def describe(self) -> str:
        k, p = self.kind, self.p
        if k == "constant":
            return f"{p['c']:g}"
        if k == "power":
            return f"s^{p['a']:g}"
        if k == "log_power":
            return f"log(e v s)^{p['a']:g}"
        if k == "exp":
            return f"exp({p['c']:g} s^{p['a']:g})"
        if k == "double_exp":
            return f"exp(exp({p['c']:g} s^{p['a']:g}))"
        if k == "product":
            return "*".join(f"({c.describe()})" for c in self.children)
        if k == "max":
            return "max(" + ", ".join(c.describe() for c in self.children) + ")"
        if k == "max1":
            return f"1 v ({self.children[0].describe()})"
        if k == "compose":
            inner = self.children[1].describe() if len(self.children) == 2 else "s"
            sh = p["shift"]
            arg = inner if sh == 0 else f"0 v ({inner} - {sh:g})"
            return f"[{self.children[0].describe()}]({arg})"
        return f"sup_(s'<=s) {self.children[0].describe()}"

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "params": {k: v for k, v in self.params},
            "children": [c.to_dict() for c in self.children],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RateSpec":
        try:
            kind = d["kind"]
            params = d.get("params", {}) or {}
            children = d.get("children", []) or []
        except (KeyError, TypeError) as exc:
            raise RateSpecError(f"malformed node: {d!r}") from exc
        items = tuple((k, float(params[k])) for k in _PARAMS.get(kind, tuple(params)))
        return cls(kind, items, tuple(cls.from_dict(c) for c in children))

    def to_json(self) -> str:
        return json.dumps({"schema": SCHEMA, "spec": self.to_dict()}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RateSpec":
        obj = json.loads(text)
        if isinstance(obj, dict) and "spec" in obj:
            obj = obj["spec"]
        return cls.from_dict(obj)

    def __call__(self, s):
        return evaluate(self, s)[0]


def _node(kind: str, children: Iterable[RateSpec] = (), **params) -> RateSpec:
    items = tuple((k, float(params[k])) for k in _PARAMS[kind])
    return RateSpec(kind, items, tuple(children))


def constant(c: float) -> RateSpec:
    return _node("constant", c=c)


def power(a: float) -> RateSpec:
    return _node("power", a=a)


def log_power(a: float) -> RateSpec:
    return _node("log_power", a=a)


def exp_power(c: float, a: float) -> RateSpec:
    return _node("exp", c=c, a=a)


def double_exp(c: float, a: float) -> RateSpec:
    return _node("double_exp", c=c, a=a)


def product(*specs: RateSpec) -> RateSpec:
    return _node("product", specs)


def pointwise_max(*specs: RateSpec) -> RateSpec:
    return _node("max", specs)


def max_with_one(spec: RateSpec) -> RateSpec:
    return _node("max1", (spec,))


def compose(outer: RateSpec, inner: RateSpec | None = None, shift: float = 0.0) -> RateSpec:
    kids = (outer,) if inner is None else (outer, inner)
    return _node("compose", kids, shift=shift)


def shift(spec: RateSpec, by: float) -> RateSpec:
    """s -> spec(0 v (s - by))."""
    return compose(spec, None, by)


def running_sup(spec: RateSpec) -> RateSpec:
    return _node("running_sup", (spec,))


# ---------------------------------------------------------------------------
# evaluation

def _pair_from_s(s) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(s, dtype=float)
    if np.any(np.isnan(s)) or np.any(s < 0):
        raise RateSpecError("rate functions are defined on s >= 0")
    with np.errstate(divide="ignore"):
        ls = np.log(s)
    return s, ls


def _pair_from_log(ls) -> tuple[np.ndarray, np.ndarray]:
    ls = np.asarray(ls, dtype=float)
    with np.errstate(over="ignore"):
        s = np.exp(ls)
    return s, ls


def _mul_log(a: float, ls: np.ndarray) -> np.ndarray:
    if a == 0:
        return np.zeros_like(ls)
    with np.errstate(invalid="ignore"):
        return a * ls


def _ev(node: RateSpec, s: np.ndarray, ls: np.ndarray) -> np.ndarray:
    k, p = node.kind, node.p
    if k == "constant":
        return np.full(ls.shape, math.log(p["c"]))
    if k == "power":
        return _mul_log(p["a"], ls)
    if k == "log_power":
        with np.errstate(divide="ignore"):
            return _mul_log(p["a"], np.log(np.maximum(1.0, ls)))
    if k == "exp":
        with np.errstate(over="ignore"):
            return p["c"] * np.exp(_mul_log(p["a"], ls))
    if k == "double_exp":
        with np.errstate(over="ignore"):
            return np.exp(p["c"] * np.exp(_mul_log(p["a"], ls)))
    if k == "product":
        out = np.zeros(ls.shape)
        for c in node.children:
            with np.errstate(invalid="ignore"):
                out = out + _ev(c, s, ls)
        return out
    if k == "max":
        return np.maximum.reduce([_ev(c, s, ls) for c in node.children])
    if k == "max1":
        return np.maximum(0.0, _ev(node.children[0], s, ls))
    if k == "compose":
        if len(node.children) == 2:
            lin = _ev(node.children[1], s, ls)
            with np.errstate(over="ignore"):
                sin = np.exp(lin)
        else:
            lin, sin = ls, s
        sh = p["shift"]
        if sh != 0:
            x = sin - sh
            with np.errstate(divide="ignore", invalid="ignore"):
                lx = np.where(np.isfinite(sin), np.log(np.maximum(x, 0.0)),
                              lin + np.log1p(-sh * np.exp(-lin)))
            x = np.where(np.isfinite(sin), np.maximum(x, 0.0), sin)
            lx = np.where(x > 0, lx, -np.inf)
            sin, lin = x, lx
        return _ev(node.children[0], sin, lin)
    if k == "running_sup":
        return _running_sup(node.children[0], ls)
    raise RateSpecError(k)  # pragma: no cover


def _running_sup(child: RateSpec, ls: np.ndarray) -> np.ndarray:
    flat = ls.ravel()
    finite = flat[np.isfinite(flat)]
    top = float(finite.max()) if finite.size else -20.0
    bottom = min(-20.0, float(finite.min()) if finite.size else -20.0)
    n = int(min(20000, max(256, 64 * (top - bottom) / math.log(10))))
    base = np.concatenate(([-np.inf], np.linspace(bottom, top, n)))
    pts = np.union1d(base, flat)
    spts, lpts = _pair_from_log(pts)
    vals = np.maximum.accumulate(np.nan_to_num(_ev(child, spts, lpts), nan=-np.inf))
    idx = np.searchsorted(pts, flat)
    return vals[idx].reshape(ls.shape)


def evaluate(spec: RateSpec, s, validate: bool = True):
    """Return ``(value, log_value)`` of ``spec`` at ``s`` (scalar or array)."""
    if validate:
        spec.validate()
    sa, ls = _pair_from_s(s)
    lv = _ev(spec, sa, ls)
    with np.errstate(over="ignore"):
        v = np.exp(lv)
    if np.ndim(s) == 0:
        return float(v), float(lv)
    return v, lv


def log_eval(spec: RateSpec, log_s) -> np.ndarray:
    """ln spec(s) given ln s; usable where s itself overflows."""
    sa, ls = _pair_from_log(log_s)
    out = _ev(spec, sa, ls)
    return float(out) if np.ndim(log_s) == 0 else out


# ---------------------------------------------------------------------------
# transforms

def k_m_transform(K: RateSpec, m: int, with_log: bool = False) -> RateSpec:
    """s^m K(s), or s^m log(e v s) K(s)."""
    if int(m) != m or m < 1:
        raise RateSpecError("m must be a positive integer")
    parts = [power(int(m)), K]
    if with_log:
        parts.insert(1, log_power(1.0))
    return product(*parts)


def m_sub_k(M: RateSpec, K: RateSpec) -> RateSpec:
    """s -> M(s) log(e v K(s)); the log goes through K's log value."""
    M.validate()
    K.validate()
    return product(M, compose(log_power(1.0), K))


def m_log(M: RateSpec) -> RateSpec:
    return m_sub_k(M, product(power(1.0), M))


# ---------------------------------------------------------------------------
# generalized inverse

def right_inverse_log(F: RateSpec, log_t, rel_tol: float = 1e-9, polish: bool = True,
                      max_doublings: int = 1000, _linear: bool = False):
    """Vectorized ``log sup{s >= 0 : F(s) <= t}`` given ``log t``.

    Returns ``(log_s, below)`` where ``below`` flags targets under ``F(0)``
    (for which ``log_s`` is ``-inf``).
    """
    if not (0 < rel_tol <= 1e-3):
        raise RateSpecError("rel_tol must lie in (0, 1e-3]")
    F.validate()
    lt = np.atleast_1d(np.asarray(log_t, dtype=float))
    f0 = float(_ev(F, np.zeros(1), np.full(1, -np.inf))[0])
    below = lt < f0
    out = np.full(lt.shape, -np.inf)
    todo = ~below & ~np.isnan(lt)
    if np.any(np.isposinf(lt) & todo):
        raise UnboundedSearchError("target t = inf")
    if not np.any(todo):
        if _linear:
            return np.where(np.isnan(lt), np.nan, 0.0), below
        return (out if np.ndim(log_t) else out[0]), (below if np.ndim(log_t) else bool(below[0]))
    tgt = lt[todo]

    def ok(lsv):
        return log_eval(F, lsv) <= tgt_cur

    tgt_cur = tgt
    at1 = ok(np.zeros_like(tgt))
    lo = np.where(at1, 0.0, -math.log(2.0))
    hi = np.where(at1, math.log(2.0), 0.0)
    # upward expansion for targets reached at s = 1
    active = at1.copy()
    for _ in range(max_doublings):
        if not active.any():
            break
        good = ok(hi) & active
        lo = np.where(good, hi, lo)
        hi = np.where(good, np.maximum(hi + math.log(2.0), 2.0 * hi), hi)
        active = good
    else:
        if active.any():
            raise UnboundedSearchError(
                f"bracket did not close within {max_doublings} doublings")
    # downward expansion for targets below F(1)
    active = ~at1
    tiny = np.zeros(tgt.shape, dtype=bool)
    for _ in range(max_doublings):
        if not active.any():
            break
        good = ok(lo)
        hi = np.where(active & ~good, lo, hi)
        lo = np.where(active & ~good, np.minimum(lo - math.log(2.0), 2.0 * lo), lo)
        active = active & ~good
        tiny |= active & (lo < -745.0)
        active &= ~tiny
    # bisection in log space
    while True:
        gap = hi - lo
        need = (gap > rel_tol) & ~tiny
        if not need.any():
            break
        mid = 0.5 * (lo + hi)
        # past ~1e7 in log s the float spacing exceeds rel_tol
        need &= (mid > lo) & (mid < hi)
        if not need.any():
            break
        good = ok(mid)
        lo = np.where(need & good, mid, lo)
        hi = np.where(need & ~good, mid, hi)
    res = np.where(tiny, -np.inf, lo)
    lin = np.exp(np.minimum(res, 709.0))
    lin[res > 709.0] = np.inf
    if polish:
        idx = np.nonzero(~tiny & (hi < 700.0))[0]
        if idx.size:
            slo, shi = np.exp(lo[idx]), np.exp(hi[idx])
            tsub = tgt[idx]
            # exp() rounding can push the bracket ends across the level
            def pred(x):
                with np.errstate(divide="ignore"):
                    return _ev(F, x, np.log(x)) <= tsub
            for _ in range(64):
                bad_lo = ~pred(slo)
                if not bad_lo.any():
                    break
                shi = np.where(bad_lo, slo, shi)
                slo = np.where(bad_lo, slo * (1 - 1e-12), slo)
            for _ in range(64):
                good_hi = pred(shi)
                if not good_hi.any():
                    break
                slo = np.where(good_hi, shi, slo)
                shi = np.where(good_hi, shi * (1 + 1e-12), shi)
            for _ in range(200):
                mid = 0.5 * (slo + shi)
                live = (mid > slo) & (mid < shi)
                if not live.any():
                    break
                with np.errstate(divide="ignore"):
                    good = _ev(F, mid, np.log(mid)) <= tsub
                slo = np.where(live & good, mid, slo)
                shi = np.where(live & ~good, mid, shi)
            with np.errstate(divide="ignore"):
                res[idx] = np.log(slo)
            lin[idx] = slo
    out[todo] = res
    if _linear:
        lout = np.where(below, 0.0, 0.0)
        lout[todo] = lin
        lout[np.isnan(lt)] = np.nan
        return lout, below
    if np.ndim(log_t) == 0:
        return float(out[0]), bool(below[0])
    return out, below


def right_inverse(F: RateSpec, t, rel_tol: float = 1e-9, return_flag: bool = False):
    """``sup{s >= 0 : F(s) <= t}`` (right-continuous right inverse)."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise RateSpecError("t must be non-negative")
    with np.errstate(divide="ignore"):
        lt = np.log(t_arr)
    s, below = right_inverse_log(F, np.atleast_1d(lt), rel_tol, _linear=True)
    if np.ndim(t) == 0:
        s, below = float(s[0]), bool(below[0])
    return (s, below) if return_flag else s


# ---------------------------------------------------------------------------
# positive increase, hypotheses

@dataclass(frozen=True)
class PositiveIncreaseWitness:
    a: float
    C_a: float
    s_a: float
    slope_floor: float = float("nan")
    slope_limit: float = float("nan")


def _check_grid(grid, min_len=16, min_decades=4.0) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size < min_len:
        raise RateSpecError(f"grid needs at least {min_len} points")
    if np.any(g <= 0) or np.any(np.diff(g) <= 0):
        raise RateSpecError("grid must be positive and strictly increasing")
    if math.log10(g[-1] / g[0]) < min_decades - 1e-9:
        raise RateSpecError(f"grid must span at least {min_decades:g} decades")
    return g


def positive_increase_estimate(K: RateSpec, s_grid, resolution: float = 0.01,
                               validate: bool = False) -> PositiveIncreaseWitness:
    """Largest grid-supported index a of positive increase.

    The upper half of the grid (in log s) is used.  The index is the smaller
    of the least local log-log slope there and, when the local slopes
    decrease toward a limit, the intercept of a fit of slope against 1/log s.
    C_a is the largest drawdown of log K - a log s above s_a.
    """
    g = _check_grid(s_grid)
    ls = np.log(g)
    lk = _ev(K, g, ls) if not validate else np.asarray(evaluate(K, g)[1])
    # log K can overflow for double-exponential K; only finite samples count
    fin = np.isfinite(lk)
    if fin.sum() < 4:
        raise RateSpecError("log K is not finite on enough grid points")
    ls, lk = ls[fin], lk[fin]
    mid = 0.5 * (ls[0] + ls[-1])
    up = ls >= mid
    lsu, lku = ls[up], lk[up]
    if lsu.size < 4:
        lsu, lku = ls[-4:], lk[-4:]
    slopes = np.diff(lku) / np.diff(lsu)
    centers = 0.5 * (lsu[1:] + lsu[:-1])
    floor = float(np.min(slopes))
    limit = float("nan")
    if np.all(centers > 0) and slopes.size >= 3:
        x = 1.0 / centers
        b, a0 = np.polyfit(x, slopes, 1)
        if b > 0:
            limit = float(a0)
    est = floor if math.isnan(limit) else min(floor, limit)
    a = max(0.0, math.floor(est / resolution + 1e-3) * resolution)
    a = round(a, 10)
    h = lku - a * lsu
    run_max = np.maximum.accumulate(h)
    draw = float(np.max(run_max - h))
    return PositiveIncreaseWitness(a=a, C_a=float(math.exp(draw)), s_a=float(math.exp(lsu[0])),
                                   slope_floor=floor, slope_limit=limit)


@dataclass(frozen=True)
class HypothesisProfile:
    eps: float = 0.5
    C_eps: float = 1.0
    r1: float = 1.0
    C_hat: float = 1.0
    m: int = 1
    n: int = 1
    r: float = 1.0

    def __post_init__(self):
        if not (0 <= self.eps < 1):
            raise RateSpecError("eps must lie in [0, 1)")
        for name in ("C_eps", "r1", "C_hat", "r"):
            if not getattr(self, name) > 0:
                raise RateSpecError(f"{name} must be strictly positive")
        if int(self.m) != self.m or self.m < 1 or int(self.n) != self.n or self.n < 1:
            raise RateSpecError("m and n must be positive integers")


def iterated_log(j: int, s):
    """L_j(s) = log applied j times to (1 + j + s)."""
    if int(j) != j or j < 1:
        raise RateSpecError("j must be a positive integer")
    x = np.asarray(s, dtype=float) + 1.0 + j
    for _ in range(int(j)):
        x = np.log(x)
    return float(x) if np.ndim(s) == 0 else x


def l_tilde(N: int, eps: float, s):
    """L_1 ... L_{N-1} L_N^{1+eps}."""
    if int(N) != N or N < 1:
        raise RateSpecError("N must be a positive integer")
    out = np.asarray(iterated_log(N, s), dtype=float) ** (1.0 + eps)
    for j in range(1, int(N)):
        out = out * iterated_log(j, s)
    return float(out) if np.ndim(s) == 0 else out


def classify_growth(values, tail_fraction: float = 1 / 3, rtol: float = 1e-9) -> str:
    """``bounded`` or ``growing`` from the tail of a sampled sequence.

    Growing means the sequence increases monotonically over the tail and
    its maximum sits at the last sample.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size < 3 or not np.all(np.isfinite(v) | (v == -np.inf)):
        return "growing" if np.any(np.isposinf(v)) else "bounded"
    n0 = int(math.floor(v.size * (1 - tail_fraction)))
    tail = v[n0:]
    inc = np.all(np.diff(tail) > -rtol * np.maximum(1.0, np.abs(tail[1:])))
    at_end = v[-1] >= np.max(v) - rtol * max(1.0, abs(np.max(v)))
    strict = tail[-1] > tail[0] + rtol * max(1.0, abs(tail[0]))
    return "growing" if (inc and at_end and strict) else "bounded"


def check_hypotheses(M: RateSpec, K: RateSpec, profile: HypothesisProfile, grid,
                     N: int = 1) -> dict[str, Any]:
    """Grid check of the (K vs M) bounds, (H1) and (H2)."""
    g = np.asarray(grid, dtype=float)
    g = g[g >= profile.r1]
    if g.size < 2:
        raise RateSpecError("grid must contain points >= r1")
    g = np.unique(np.concatenate([g, np.geomspace(g[-1], 10 * g[-1], 16)]))
    ls = np.log(g)
    lM = _ev(M, g, ls)
    lK = _ev(K, g, ls)
    with np.errstate(over="ignore"):
        sM = np.exp(ls + lM)
    logC = math.log(profile.C_eps)
    report: dict[str, Any] = {"grid": [float(g[0]), float(g[-1]), int(g.size)]}

    def loglog_margin(x_exponent):
        # margin of log log K against log(exp(x) + log C) in log-log space
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            llK = np.where(lK > 0, np.log(lK), -np.inf)
            bound = np.logaddexp(x_exponent, math.log(logC)) if logC > 0 else x_exponent
        return bound - llK

    if profile.eps == 0:
        report["i"] = {"passed": False, "worst_margin": float("nan"),
                       "note": "eps = 0 is not admissible (fails by rule)"}
    else:
        with np.errstate(over="ignore"):
            x = sM ** (1.0 - profile.eps)
        marg = loglog_margin(x)
        i_w = int(np.argmin(marg))
        report["i"] = {"passed": bool(np.all(marg >= 0)), "worst_margin": float(marg[i_w]),
                       "at_s": float(g[i_w])}
    if profile.eps == 0:
        report["ii"] = {"passed": False, "worst_margin": float("nan"),
                        "note": "relaxed bound needs eps > 0"}
    else:
        with np.errstate(over="ignore", invalid="ignore"):
            x2 = sM / l_tilde(N, profile.eps, sM)
            x2 = np.where(np.isfinite(sM), x2, np.inf)
        marg2 = loglog_margin(x2)
        i2 = int(np.argmin(marg2))
        report["ii"] = {"passed": bool(np.all(marg2 >= 0)), "worst_margin": float(marg2[i2]),
                        "at_s": float(g[i2]), "N": int(N)}
    # (H1): N(s') = max_s M(s+s')/M(s)
    shifts = np.concatenate(([0.0], np.geomspace(1e-2, max(1.0, g[-1] / 10), 24)))
    Nvals, unbounded = [], []
    for sp in shifts:
        ratio = _ev(M, g + sp, np.log(g + sp)) - lM
        Nvals.append(float(np.exp(np.max(ratio))))
        unbounded.append(classify_growth(ratio) == "growing" and sp > 0)
    Nvals = np.maximum.accumulate(np.asarray(Nvals))
    report["iii"] = {"passed": not any(unbounded), "N0": float(Nvals[0]),
                     "H1_prime": bool(abs(Nvals[0] - 1.0) < 1e-12),
                     "shifts": shifts.tolist(), "N": Nvals.tolist()}
    # (H2): positive increase of M^{-1/2} K
    integrand = product(compose(power(-0.5), M), K)
    try:
        w = positive_increase_estimate(integrand, g)
        report["iv"] = {"passed": w.a > 0, "a": w.a, "C_a": w.C_a, "s_a": w.s_a}
    except RateSpecError as exc:
        report["iv"] = {"passed": False, "note": str(exc)}
    report["passed"] = all(report[k]["passed"] for k in ("i", "ii", "iii", "iv"))
    return report


def c_alpha_beta(alpha: float, beta: float) -> float:
    if not alpha > 0:
        raise RateSpecError("alpha must be positive")
    if not beta > 0.5:
        raise RateSpecError("beta must exceed 1/2")
    first = 0.5 + math.sqrt(0.25 + 1.0 / alpha)
    second = 2.0 * beta / (2.0 * beta - 1.0) if math.isfinite(beta) else 1.0
    return max(first, second)


# ---------------------------------------------------------------------------
# compact text form used by the CLI

def parse_short(text: str) -> RateSpec:
    """Parse ``const:c``, ``pow:a`` (1 v s^a), ``logpow:a``, ``exp:c,a``,
    ``dexp:c,a`` or a JSON tree."""
    text = text.strip()
    if text.startswith("{"):
        return RateSpec.from_json(text)
    name, _, arg = text.partition(":")
    try:
        vals = [float(x) for x in arg.split(",")] if arg else []
    except ValueError as exc:
        raise RateSpecError(f"bad numbers in {text!r}") from exc
    if name == "const" and len(vals) == 1:
        return constant(vals[0])
    if name == "pow" and len(vals) == 1:
        return max_with_one(power(vals[0]))
    if name == "logpow" and len(vals) == 1:
        return log_power(vals[0])
    if name == "exp" and len(vals) in (1, 2):
        c, a = (1.0, vals[0]) if len(vals) == 1 else vals
        return exp_power(c, a)
    if name == "dexp" and len(vals) in (1, 2):
        c, a = (1.0, vals[0]) if len(vals) == 1 else vals
        return double_exp(c, a)
    raise RateSpecError(f"cannot parse rate spec {text!r}")


def _presets() -> dict[str, RateSpec]:
    return {
        "identity": power(1.0),
        "square": max_with_one(power(2.0)),
        "exp": exp_power(1.0, 1.0),
        "double_exp": double_exp(0.01, 0.5),
        "m_log_const": m_log(constant(1.0)),
        "m_log_logpow": m_log(log_power(1.0)),
        "case_e": m_sub_k(max_with_one(power(1.0)), exp_power(1.0, 1.0)),
        "k_m_log": k_m_transform(max_with_one(power(2.0)), 1, with_log=True),
        # 1 on [0, 2], s - 1 afterwards
        "flat": pointwise_max(constant(1.0), shift(power(1.0), 1.0)),
    }


PRESETS = _presets()
# increasing on [1, inf); inverse round trips are exact there
STRICT_PRESETS = ("identity", "square", "exp", "double_exp", "m_log_const", "m_log_logpow",
                  "case_e", "k_m_log")


def decay_kernel(M: RateSpec, K: RateSpec, m: int = 1, use_positive_increase: bool | None = None,
                 grid=None) -> tuple[RateSpec, RateSpec, bool]:
    """Return ``(K_tilde, M_K_tilde, used_pi)`` for the main decay estimate."""
    if use_positive_increase is None:
        grid = np.geomspace(1.0, 1e8, 129) if grid is None else grid
        use_positive_increase = positive_increase_estimate(K, grid).a > 0
    kt = k_m_transform(K, m, with_log=not use_positive_increase)
    return kt, m_sub_k(M, kt), bool(use_positive_increase)


class RateInverter(TransformerMixin, BaseEstimator):
    """Map times t to the decay scale M_{K~}^{-1}(t).

    ``fit`` assembles K~ (``K_m`` when K shows positive increase on a probe
    grid, ``K_{m,log}`` otherwise) and M_{K~}; ``transform`` inverts it.
    """

    def __init__(self, M: RateSpec | None = None, K: RateSpec | None = None, m: int = 1,
                 positive_increase: bool | None = None, rel_tol: float = 1e-9,
                 log_output: bool = False):
        self.M = M
        self.K = K
        self.m = m
        self.positive_increase = positive_increase
        self.rel_tol = rel_tol
        self.log_output = log_output

    def fit(self, X=None, y=None):
        if not isinstance(self.M, RateSpec) or not isinstance(self.K, RateSpec):
            raise RateSpecError("M and K must be RateSpec instances")
        if not (0 < self.rel_tol <= 1e-3):
            raise RateSpecError("rel_tol must lie in (0, 1e-3]")
        self.K_tilde_, self.rate_, self.used_positive_increase_ = decay_kernel(
            self.M.validate(), self.K.validate(), self.m, self.positive_increase)
        return self

    def transform(self, X):
        check_is_fitted(self, "rate_")
        t = np.asarray(X, dtype=float).reshape(-1)
        if np.any(~np.isfinite(t)) or np.any(t < 0):
            raise RateSpecError("times must be finite and non-negative")
        with np.errstate(divide="ignore"):
            ls, _ = right_inverse_log(self.rate_, np.log(t), self.rel_tol)
        ls = np.atleast_1d(ls)
        if self.log_output:
            return ls.reshape(-1, 1)
        with np.errstate(over="ignore"):
            return np.exp(ls).reshape(-1, 1)
