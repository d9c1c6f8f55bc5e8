"""Command line front end.

    taurates rate --M const:1 --K pow:2 --m 1 --t 1e6
    taurates invert --F pow:2 --t 4,9,16
    taurates catalog --case e --alpha 1 --beta 1
    taurates counterexample --config cfg.json
    taurates contour --case exp --t 1,5,10 --R 10,20,40
    taurates semigroup --preset "curve_log_alpha(1)"

Exit status: 0 when every check passes, 2 when a check fails, 1 on usage
or validation errors.  Complex subcommands take a JSON object via
``--config``; explicit flags override its keys.  Reports go to
``--out``, else ``$TAURATES_OUTPUT_DIR``, else ``./taurates_out``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .rate_algebra import RateSpecError, decay_kernel, parse_short, right_inverse_log

log = logging.getLogger("taurates")

REPORT_SCHEMA = "taurates.report/1"
CSV_SCHEMA = "taurates.csv/1"
ENV_OUT = "TAURATES_OUTPUT_DIR"

EXIT_OK, EXIT_USAGE, EXIT_CHECK = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# helpers

def _floats(text) -> list[float]:
    if isinstance(text, (int, float)):
        return [float(text)]
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"cannot parse number list {text!r}") from exc


def _spec(value):
    if isinstance(value, dict):
        return parse_short(json.dumps(value))
    return parse_short(str(value))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else repr(v)
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


class Run:
    """Collects checks and output files for one invocation."""

    def __init__(self, command: str, out: Path | None, config: dict, seed: int):
        self.command = command
        self.out = out
        self.config = config
        self.seed = seed
        self.checks: list[dict[str, Any]] = []
        self.files: list[str] = []
        self.result: dict[str, Any] = {}

    def check(self, name: str, passed: bool, detail: str = ""):
        self.checks.append({"name": name, "passed": bool(passed), "detail": detail})

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def write_csv(self, name: str, header: Sequence[str], rows):
        if self.out is None:
            return
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
        self.files.append(name)

    def finish(self) -> int:
        report = {"schema": REPORT_SCHEMA, "csv_schema": CSV_SCHEMA, "version": __version__,
                  "command": self.command, "seed": self.seed, "config": self.config,
                  "result": self.result, "checks": self.checks, "passed": self.passed,
                  "files": sorted(self.files)}
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)
            (self.out / f"{self.command}_report.json").write_text(
                json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
        for c in self.checks:
            if not c["passed"]:
                print(f"FAILED {c['name']}: {c['detail']}", file=sys.stderr)
        return EXIT_OK if self.passed else EXIT_CHECK


def _out_dir(args, default_off: bool = False) -> Path | None:
    if args.out:
        return Path(args.out)
    env = os.environ.get(ENV_OUT)
    if env:
        return Path(env)
    return None if default_off else Path("taurates_out")


def _load_config(args) -> dict[str, Any]:
    cfg: dict[str, Any] = {}
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config must be a JSON object")
    for k, v in vars(args).items():
        if k in ("command", "config", "out", "func", "verbose") or v is None:
            continue
        cfg[k] = v
    return cfg


def _need(cfg, key):
    if key not in cfg:
        raise UsageError(f"missing required setting {key!r}")
    return cfg[key]


# ---------------------------------------------------------------------------
# subcommands

def cmd_rate(args, cfg, run: Run):
    M, K = _spec(_need(cfg, "M")), _spec(_need(cfg, "K"))
    m = int(cfg.get("m", 1))
    pi = {"auto": None, "yes": True, "no": False}[cfg.get("positive_increase", "auto")]
    kt, rate, used = decay_kernel(M, K, m, pi)
    ts = _floats(_need(cfg, "t"))
    if any(not (v > 0 and math.isfinite(v)) for v in ts):
        raise RateSpecError("t must be positive and finite")
    ls, _ = right_inverse_log(rate, np.log(ts))
    ls = np.atleast_1d(ls)
    rows = []
    for t, l in zip(ts, ls):
        val = math.exp(l) if l < 709 else math.inf
        print(f"{val:.12g}" if math.isfinite(val) else f"exp({l:.12g})")
        rows.append((t, val, float(l)))
    run.result = {"K_tilde": kt.describe(), "rate": rate.describe(), "positive_increase": used,
                  "t": ts, "log_inverse": ls.tolist()}
    run.write_csv("rate.csv", ["t_time", "inverse_rate_s", "ln_inverse_rate"], rows)


def cmd_invert(args, cfg, run: Run):
    F = _spec(_need(cfg, "F"))
    ts = _floats(_need(cfg, "t"))
    if any(not (v >= 0 and math.isfinite(v)) for v in ts):
        raise RateSpecError("t must be non-negative and finite")
    with np.errstate(divide="ignore"):
        ls, below = right_inverse_log(F, np.log(ts))
    ls, below = np.atleast_1d(ls), np.atleast_1d(below)
    rows = []
    for t, l, b in zip(ts, ls, below):
        val = math.exp(l) if l < 709 else math.inf
        print(f"{val:.12g}" if math.isfinite(val) or l == math.inf else f"exp({l:.12g})")
        rows.append((t, val, float(l), int(b)))
    run.result = {"F": F.describe(), "t": ts, "log_inverse": ls.tolist(),
                  "below_F0": below.tolist()}
    run.write_csv("invert.csv", ["t_value", "inverse_s", "ln_inverse_s", "below_F0_flag"], rows)


def cmd_catalog(args, cfg, run: Run):
    from .rate_catalog import CSV_COLUMNS, CatalogCase, rows_to_csv_records, \
        verify_catalog_asymptotics
    fields = ("alpha", "alpha_p", "beta", "gamma", "delta", "delta_p", "C")
    case = CatalogCase(str(_need(cfg, "case")),
                       **{k: float(cfg[k]) for k in fields if cfg.get(k) is not None})
    t = None
    if "t_min" in cfg or "t_max" in cfg:
        t = np.geomspace(float(cfg.get("t_min", 1e3)), float(cfg.get("t_max", 1e9)),
                         int(cfg.get("n_t", 61)))
    rep = verify_catalog_asymptotics(case, t, tol=float(cfg.get("tol", 0.02)),
                                     tol_factor=float(cfg.get("tol_factor", 4.0)))
    run.result = {k: v for k, v in rep.items() if k != "rows"}
    run.check("ratio", rep["ratio_check"]["passed"],
              f"log ratio in [{rep['log_ratio_min']:.3g}, {rep['log_ratio_max']:.3g}]")
    if rep["slope"]["checked"]:
        run.check("slope", rep["slope"]["passed"],
                  f"generic {rep['slope']['generic']:.4f} vs closed form "
                  f"{rep['slope']['closed_form']:.4f}")
    run.write_csv(f"catalog_{case.case}.csv", CSV_COLUMNS, rows_to_csv_records(rep))
    print(f"case {case.case}: {'pass' if run.passed else 'FAIL'}")


def cmd_counterexample(args, cfg, run: Run):
    from .counterexample import assemble_f, sample_rows, verify_optimality
    M, K = _spec(cfg.get("M", "const:1")), _spec(cfg.get("K", "pow:2"))
    c1 = float(cfg.get("c1", 1.5))
    f = assemble_f(M, K, c1, eps0=float(cfg.get("eps0", 0.5)),
                   N_terms=int(cfg.get("n_terms", 6)),
                   gamma_band=float(cfg.get("gamma_band", 1.5)))
    rep = verify_optimality(f, n_points=int(cfg.get("n_points", 10_000)),
                            stability=float(cfg.get("stability", 0.30)))
    run.result = rep
    ch, lo = rep["C_hat"], rep["lower"]
    run.check("C_hat_finite", ch["passed"],
              f"log C_hat = {ch['log_value']:.4g}, band trend {ch['band_trend']}")
    run.check("lower_positive", lo["positive"], f"c_min = {lo['c_min']:.4g}")
    run.check("lower_stable", lo["stable"],
              f"spread {lo['spread']:.3g} > {lo['stability_tol']:.2g}" if not lo["stable"]
              else f"spread {lo['spread']:.3g}")
    rows = [(n, float(tn), float(cn)) for n, (tn, cn) in enumerate(zip(f.t_n, lo["c_n"]))]
    run.write_csv("counterexample_terms.csv", ["n_index", "t_n_time", "c_n_dimensionless"], rows)
    trows, zrows = sample_rows(f, c1)
    run.write_csv("counterexample_time.csv",
                  ["t_time", "abs_f", "scaled_abs_f_MK1inv_c1t_times_abs_f"], trows)
    run.write_csv("counterexample_omega.csv",
                  ["im_z", "re_z", "abs_z_fhat_over_K_abs_im_z"], zrows)
    print(f"c_alpha_beta = {f.c_ab:.6g}, k_n = {[p.k for p in f.terms]}")


def cmd_contour(args, cfg, run: Run):
    from .contour_engine import path_rows, reconstruct, testcase
    case = testcase(str(cfg.get("case", "exp")))
    ts = _floats(cfg.get("t", "1,5,10"))
    Rs = _floats(cfg.get("R", "10,20,40"))
    k = int(cfg.get("k", 3))
    mode = str(cfg.get("mode", "deformed"))
    tol = float(cfg.get("tol", 1e-6))
    r_spread = float(cfg.get("r_spread", 2e-6))
    rows, results = [], []
    for t in ts:
        exact = complex(case.f(np.array([t]))[0])
        vals = []
        for R in Rs:
            res = reconstruct(case.g, case.fhat, t, R, case.M, k, f0=case.f0, variant=case.variant,
                              sing=case.sing, mode=mode)
            err = abs(res.value - exact)
            vals.append(res.value)
            results.append({"t": t, "R": R, "value": res.value, "exact": exact, "abs_error": err,
                            **{k_: v for k_, v in res.to_dict().items() if k_ != "value"}})
            run.check(f"identity_t={t:g}_R={R:g}", err <= tol, f"|error| = {err:.3g}")
            for r in path_rows(res):
                rows.append((t, R, r["integral"], r["path"], r["node"], r["z_re"], r["z_im"],
                             r["log_abs_psi"], r["integrand_abs"]))
        spread = max(abs(a - b) for a in vals for b in vals)
        run.check(f"R_independence_t={t:g}", spread <= r_spread, f"spread = {spread:.3g}")
    run.result = {"case": case.name, "variant": case.variant, "mode": mode, "k": k,
                  "runs": results}
    run.write_csv("contour_paths.csv",
                  ["t_time", "R_radius", "integral", "path", "node_param", "z_re", "z_im",
                   "ln_abs_psi_z_over_R", "integrand_abs"], rows)
    worst = max(r["abs_error"] for r in results)
    print(f"{case.name}: max |error| = {worst:.3g}")


def cmd_semigroup(args, cfg, run: Run):
    from .semigroup_lab import corollary_check, preset, report_rows
    model = preset(str(cfg.get("preset", "normal_line(1)")))
    m = int(cfg.get("m", 1))
    t = np.geomspace(float(cfg.get("t_min", 1e4)), float(cfg.get("t_max", 1e6)),
                     int(cfg.get("n_t", 41)))
    c_grid = _floats(cfg["c_grid"]) if "c_grid" in cfg else None
    rep = corollary_check(model, m, c_grid, t)
    run.result = rep.to_dict()
    if model.is_normal:
        run.check("monotone_decay", rep.monotone,
                  "" if rep.monotone else "orbit norm increased on the grid")
    grows = [f"{c:g}" for c in rep.c_grid if c <= 0.9 and rep.verdicts[c] != "bounded"]
    run.check("bounded_for_c_le_0.9", not grows,
              f"ratio grows for c = {','.join(grows)}" if grows else "")
    header, rows = report_rows(rep)
    stem = "".join(ch if ch.isalnum() or ch in "._" else "_" for ch in model.name).strip("_")
    run.write_csv(f"semigroup_{stem}.csv", header, rows)
    print(f"{model.name}: c* = {rep.c_star}")


COMMANDS = {"rate": cmd_rate, "invert": cmd_invert, "catalog": cmd_catalog,
            "counterexample": cmd_counterexample, "contour": cmd_contour,
            "semigroup": cmd_semigroup}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="taurates", description="Decay rates for quantified Tauberian theorems.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON object with the run settings")
        sp.add_argument("--out", help=f"output directory (default ${ENV_OUT} or ./taurates_out)")
        sp.add_argument("--seed", type=int, help="seed for randomized grids (recorded)")
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    sp = add("rate", "print M_K~^{-1}(t)")
    sp.add_argument("--M")
    sp.add_argument("--K")
    sp.add_argument("--m", type=int)
    sp.add_argument("--t")
    sp.add_argument("--positive-increase", dest="positive_increase", choices=("auto", "yes", "no"))

    sp = add("invert", "right inverse F^{-1}(t)")
    sp.add_argument("--F")
    sp.add_argument("--t")

    sp = add("catalog", "closed-form catalog check")
    sp.add_argument("--case")
    for name in ("alpha", "alpha-p", "beta", "gamma", "delta", "delta-p", "C", "t-min", "t-max",
                 "tol", "tol-factor"):
        sp.add_argument(f"--{name}", dest=name.replace("-", "_"), type=float)
    sp.add_argument("--n-t", dest="n_t", type=int)

    sp = add("counterexample", "assemble the optimality counterexample")
    sp.add_argument("--M")
    sp.add_argument("--K")
    sp.add_argument("--c1", type=float)
    sp.add_argument("--n-terms", dest="n_terms", type=int)
    sp.add_argument("--eps0", type=float)
    sp.add_argument("--n-points", dest="n_points", type=int)

    sp = add("contour", "reconstruct f(t) from the contour integrals")
    sp.add_argument("--case", choices=("exp", "log_singular", "measure"))
    sp.add_argument("--t")
    sp.add_argument("--R")
    sp.add_argument("--k", type=int)
    sp.add_argument("--mode", choices=("deformed", "literal"))
    sp.add_argument("--tol", type=float)

    sp = add("semigroup", "orbit decay versus the corollary envelope")
    sp.add_argument("--preset")
    sp.add_argument("--m", type=int)
    sp.add_argument("--t-min", dest="t_min", type=float)
    sp.add_argument("--t-max", dest="t_max", type=float)
    sp.add_argument("--n-t", dest="n_t", type=int)
    sp.add_argument("--c-grid", dest="c_grid")
    return p


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = _load_config(args)
        seed = int(cfg.pop("seed", 0))
        np.random.seed(seed)
        out = _out_dir(args, default_off=args.command in ("rate", "invert"))
        r = Run(args.command, out, {k: _jsonable(v) for k, v in sorted(cfg.items())}, seed)
        COMMANDS[args.command](args, cfg, r)
        return r.finish()
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (RateSpecError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())
