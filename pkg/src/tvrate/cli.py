"""Command-line interface: ``tvrate <subcommand> ...``.

Tables go to stdout as comma-separated text; files (CSV, JSON, SVG) go to
``--out``.  Exit codes: 0 success, 1 a verification check failed, 2 usage or
configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import NumericalError, ParameterError, TVRateError
from .experiments import (
    TRUTHS,
    ExperimentConfig,
    estimate_rate,
    execute,
    make_truth,
    read_results_csv,
    write_outputs,
)
from .kernel import MAX_ORDER, construct_kernel, derivative_bound, scale_kernel
from .oracle import OracleSpec, RateMethod, build_oracle, lemma_sweep, theoretical_rate
from .solver import TrendFilterProblem, solve

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

SCENARIOS = {"step3-k2": ("step3", 2), "step3-k3": ("step3", 3), "ramp3-k3": ("ramp3", 3)}
DEFAULT_DELTAS = (0.2, 0.1, 0.05, 0.025, 0.0125)
APPROX_TOL = 0.15
PENALTY_TOL = 0.05


class ConfigError(TVRateError, ValueError):
    pass


def _emit(rows, out=None):
    w = csv.writer(out or sys.stdout, lineterminator="\n")
    for row in rows:
        w.writerow(row)


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _outdir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------- kernel

def cmd_kernel(args) -> int:
    if not 1 <= args.k <= MAX_ORDER:
        raise ParameterError(f"--k must be in [1, {MAX_ORDER}], got {args.k}")
    if not args.delta > 0.0:
        raise ParameterError(f"--delta must be positive, got {args.delta}")
    from .plotting import plot_kernel

    H = construct_kernel(args.k)
    out = _outdir(args.out)
    stem = f"kernel_k{args.k}"
    u = np.linspace(-1.0, 1.0, 1001)
    with open(out / f"{stem}.csv", "w", newline="") as fh:
        _emit([("u", "H(u)")] + [(repr(float(a)), repr(float(b))) for a, b in zip(u, H(u))], fh)
    moment_rows = [("j", "moment")] + [(j, repr(m)) for j, m in enumerate(H.moments[: args.k])]
    with open(out / f"{stem}_moments.csv", "w", newline="") as fh:
        _emit(moment_rows, fh)

    truth = oracle = None
    if args.truth:
        truth, ell = make_truth(args.truth)
        oracle = build_oracle(OracleSpec(truth, ell, args.k, args.delta))
    plot_kernel(H, args.delta, out / f"{stem}.svg", truth=truth, oracle=oracle)

    print(f"# order-{args.k} kernel, q={H.smoothness_exponent}, poly coefficients (ascending):")
    _emit([("power", "coefficient")] + [(i, repr(c)) for i, c in enumerate(H.poly.coeffs) if c != 0.0])
    print("# moments")
    _emit([("j", "moment")] + [(j, _fmt(0.0 if abs(m) < 1e-12 else m)) for j, m in enumerate(H.moments[: args.k])])
    print("# derivative bounds C_{k,l} = sup |H^(l)|")
    _emit([("l", "bound")] + [(l, _fmt(b)) for l, b in enumerate(H.deriv_bounds)])
    print(f"max|H| = {derivative_bound(H, 0):.6g}")
    print(f"mass at delta={args.delta:g}: {scale_kernel(H, args.delta).mass():.15g}")
    print(f"wrote {out / stem}.csv, {stem}_moments.csv, {stem}.svg")
    return EXIT_OK


# ---------------------------------------------------------------- verify-lemmas

def cmd_verify_lemmas(args) -> int:
    truth_name, k = SCENARIOS[args.scenario]
    truth, ell = make_truth(truth_name)
    deltas = tuple(args.deltas) if args.deltas else DEFAULT_DELTAS
    if any(not d > 0.0 for d in deltas) or len(deltas) < 2:
        raise ParameterError("need at least two positive bandwidths")
    sweep = lemma_sweep(truth, ell, k, deltas, n=args.n)
    out = _outdir(args.out)

    header = ("delta", "approx_error_sq", "penalty", "penalty_bound", "within_bound")
    rows = [
        (_fmt(r["delta"]), _fmt(r["approx_error_sq"]), _fmt(r["penalty"]), _fmt(r["penalty_bound"]),
         "yes" if r["penalty"] <= r["penalty_bound"] else "no")
        for r in sweep["rows"]
    ]
    approx_ok = abs(sweep["approx_slope"] - sweep["approx_target"]) <= APPROX_TOL
    pen_ok = abs(sweep["penalty_slope"] - sweep["penalty_target"]) <= PENALTY_TOL
    checks = [
        ("approx_slope", _fmt(sweep["approx_slope"]), sweep["approx_target"], APPROX_TOL, approx_ok),
        ("penalty_slope", _fmt(sweep["penalty_slope"]), sweep["penalty_target"], PENALTY_TOL, pen_ok),
        ("penalty_within_bound", "all" if sweep["bound_holds"] else "not all", "all", 0, sweep["bound_holds"]),
    ]
    report = out / f"lemmas_{args.scenario}.csv"
    with open(report, "w", newline="") as fh:
        _emit([header] + rows, fh)
        fh.write("\n")
        _emit([("check", "measured", "target", "tolerance", "result")]
              + [(c, m, t, tol, "PASS" if ok else "FAIL") for c, m, t, tol, ok in checks], fh)
    if not args.no_plot:
        from .plotting import plot_sweep

        plot_sweep(sweep, out / f"lemmas_{args.scenario}.svg", title=f"{truth_name}, k={k}, ell={ell}")

    print(f"# {truth_name}, ell={ell}, k={k}, n={args.n}")
    _emit([header] + rows)
    for c, m, t, tol, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'} {c}: {m} (target {t}, tol {tol})")
    return EXIT_OK if approx_ok and pen_ok and sweep["bound_holds"] else EXIT_VERIFY


# ---------------------------------------------------------------- solve

def _read_column(path) -> np.ndarray:
    vals = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or not row[0].strip():
                continue
            try:
                vals.append(float(row[0]))
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise ConfigError(f"{path}:{lineno}: not a number: {row[0]!r}") from None
    return np.array(vals)


def cmd_solve(args) -> int:
    y = _read_column(args.input)
    problem = TrendFilterProblem(y, args.k, args.lam)
    fit = solve(problem, tol=args.tol, max_iter=args.max_iter, method=args.method)
    with open(args.output, "w", newline="") as fh:
        _emit([("theta",)] + [(repr(float(t)),) for t in fit.theta], fh)
    _emit([
        ("n", "k", "lambda", "method", "objective", "iterations", "kkt_gap", "converged"),
        (problem.n, args.k, repr(args.lam), fit.method, repr(fit.objective), fit.iterations,
         _fmt(fit.kkt_gap), "yes" if fit.converged else "no"),
    ])
    return EXIT_OK if fit.converged else EXIT_NUMERIC


# ---------------------------------------------------------------- experiment

_KEYS = {
    "truth": str, "k": int, "n_grid": str, "replicates": int, "sigma": float, "seed": int,
    "lambda_grid": str, "lambda_points": int, "lambda_span": float, "lambda_C": float, "output": str,
}


def _line_of(text: str, key: str) -> int | None:
    for i, line in enumerate(text.splitlines(), 1):
        if line.split("=", 1)[0].strip().lower() == key.lower():
            return i
    return None


def load_config(path) -> ExperimentConfig:
    """Read an ``[experiment]`` section of ``key = value`` lines into a config."""
    path = str(path)
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not parser.has_section("experiment"):
        raise ConfigError(f"{path}: missing [experiment] section")
    sec = parser["experiment"]

    def where(key):
        line = _line_of(text, key)
        return f"{path}:{line}" if line else path

    kw = {}
    for key, value in sec.items():
        if key not in _KEYS:
            raise ConfigError(f"{where(key)}: unknown key {key!r}")
        try:
            kw[key] = _KEYS[key](value)
        except ValueError:
            raise ConfigError(f"{where(key)}: bad value for {key}: {value!r}") from None
    try:
        if "n_grid" in kw:
            kw["n_grid"] = tuple(int(v) for v in kw["n_grid"].replace(",", " ").split())
        grid = kw.get("lambda_grid", "schedule").strip()
        if grid != "schedule":
            grid = tuple(float(v) for v in grid.replace(",", " ").split())
    except ValueError:
        bad = "n_grid" if isinstance(kw.get("n_grid"), str) else "lambda_grid"
        raise ConfigError(f"{where(bad)}: bad list for {bad}") from None
    mapping = {
        "truth": "truth_name", "k": "penalty_order", "replicates": "replicates", "sigma": "sigma",
        "seed": "base_seed", "lambda_points": "lambda_points", "lambda_span": "lambda_span",
        "lambda_C": "lambda_C", "output": "output_path", "n_grid": "n_grid",
    }
    fields = {mapping[k]: v for k, v in kw.items() if k in mapping}
    fields["lambda_grid"] = grid
    try:
        return ExperimentConfig(**fields)
    except ParameterError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def preset_path(name: str):
    res = resources.files("tvrate") / "presets" / f"{name}.ini"
    if not res.is_file():
        known = sorted(p.name[:-4] for p in (resources.files("tvrate") / "presets").iterdir() if p.name.endswith(".ini"))
        raise ConfigError(f"unknown preset {name!r}; known: {', '.join(known)}")
    return res


def cmd_experiment(args) -> int:
    if (args.config is None) == (args.preset is None):
        raise ConfigError("give exactly one of CONFIG or --preset")
    if args.preset:
        with resources.as_file(preset_path(args.preset)) as p:
            config = load_config(p)
    else:
        config = load_config(args.config)
    overrides = {}
    if args.replicates is not None:
        overrides["replicates"] = args.replicates
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if args.n_grid:
        overrides["n_grid"] = tuple(args.n_grid)
    if overrides:
        from dataclasses import replace

        config = replace(config, **overrides)

    out = _outdir(args.out)
    csv_path = out / Path(config.output_path).name
    stem = csv_path.with_suffix("")
    run = execute(config, threads=args.threads)
    write_outputs(run, csv_path, stem.with_name(stem.name + "_summary.json"))
    if not run.results:
        print(f"all {len(run.failures)} cells failed", file=sys.stderr)
        return EXIT_NUMERIC

    deterministic = config.sigma == 0.0 or config.replicates == 1
    truth_name, k, ell = config.truth_name, config.penalty_order, config.ell
    _emit([("n", "cells", "mean_mse", "mean_oracle_bound")] + [
        (n, sum(1 for r in run.results if r.n == n),
         _fmt(np.mean([r.mse for r in run.results if r.n == n])),
         _fmt(np.mean([r.oracle_bound for r in run.results if r.n == n])))
        for n in config.n_grid if any(r.n == n for r in run.results)
    ])
    if len({r.n for r in run.results}) >= 3:
        est = estimate_rate(run.results)
        refs = {"this_paper": theoretical_rate("this_paper", k, ell).exponent,
                "simon2021": theoretical_rate("simon2021", k, ell).exponent}
        if not args.no_plot:
            from .plotting import plot_rates

            plot_rates(run.results, est, stem.with_suffix(".svg"), title=f"{truth_name}, k={k}", reference_slopes=refs)
        flag = " deterministic" if deterministic else ""
        print(f"slope {est.slope:.4f} se {est.slope_se:.4f} intercept {est.intercept:.4f} "
              f"(theory: this_paper {refs['this_paper']:.3f}, simon2021 {refs['simon2021']:.3f}){flag}")
    else:
        print("fewer than 3 sample sizes: no rate fitted")
    print(f"failures {len(run.failures)}; wall time {run.wall_time:.1f}s; wrote {csv_path}")
    return EXIT_OK


# ---------------------------------------------------------------- rates

def cmd_rates(args) -> int:
    if not 2 <= args.k_max <= MAX_ORDER:
        raise ParameterError(f"--k-max must be in [2, {MAX_ORDER}]")
    rows = [("k", "ell", "correct_spec", "simon2021", "this_paper", "improves")]
    for k in range(2, args.k_max + 1):
        well = theoretical_rate(RateMethod.CORRECT_SPEC, k, k).exponent
        for ell in range(1, k):
            old = theoretical_rate(RateMethod.SIMON2021, k, ell).exponent
            new = theoretical_rate(RateMethod.THIS_PAPER, k, ell).exponent
            better = new < old - 1e-12
            rows.append((k, ell, f"{well:.3f}", f"{old:.3f}", f"{new:.3f}", "yes" if better else "no"))
    _emit(rows)
    return EXIT_OK


# ---------------------------------------------------------------- plot

def cmd_plot(args) -> int:
    from .plotting import plot_rates

    results = read_results_csv(args.results)
    est = estimate_rate(results)
    plot_rates(results, est, args.output, title=args.title or "")
    print(f"slope {est.slope:.4f} se {est.slope_se:.4f}; wrote {args.output}")
    return EXIT_OK


# ---------------------------------------------------------------- wiring

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tvrate", description="Trend filtering with misspecified smoothness.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("kernel", help="build a higher-order kernel and dump it")
    s.add_argument("--k", type=int, required=True, help="kernel order (1..8)")
    s.add_argument("--delta", type=float, default=0.1, help="bandwidth for the plot (default 0.1)")
    s.add_argument("--truth", choices=TRUTHS, help="also overlay this truth and its smoothed version")
    s.add_argument("--out", default=".", help="output directory")
    s.set_defaults(func=cmd_kernel)

    s = sub.add_parser("verify-lemmas", help="bandwidth sweep of approximation error and penalty")
    s.add_argument("--scenario", choices=sorted(SCENARIOS), required=True)
    s.add_argument("--n", type=int, default=65536, help="design size for the empirical norm")
    s.add_argument("--deltas", type=float, nargs="+", help="bandwidths (default 0.2 down to 0.0125)")
    s.add_argument("--out", default=".", help="output directory")
    s.add_argument("--no-plot", action="store_true", help="skip the SVG")
    s.set_defaults(func=cmd_verify_lemmas)

    s = sub.add_parser("solve", help="fit trend filtering to a single-column CSV")
    s.add_argument("--input", required=True, help="CSV with y in the first column")
    s.add_argument("--k", type=int, required=True, help="penalty order")
    s.add_argument("--lam", type=float, required=True, help="tuning parameter lambda")
    s.add_argument("--output", required=True, help="where to write theta as CSV")
    s.add_argument("--method", choices=("admm", "active_set"), default="admm")
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--max-iter", type=int, default=20000)
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("experiment", help="run a Monte Carlo rate experiment")
    s.add_argument("config", nargs="?", help="INI file with an [experiment] section")
    s.add_argument("--preset", help="bundled config: step3-k2, step3-k3, ramp3-k3, bias-only")
    s.add_argument("--out", default=".", help="output directory")
    s.add_argument("--threads", type=int, help="worker threads (default TVRATE_THREADS, 0 = auto)")
    s.add_argument("--replicates", type=int, help="override the replicate count")
    s.add_argument("--seed", type=int, help="override the base seed")
    s.add_argument("--n-grid", type=int, nargs="+", help="override the sample sizes")
    s.add_argument("--no-plot", action="store_true", help="skip the SVG")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("rates", help="table of theoretical MSE rate exponents")
    s.add_argument("--k-max", type=int, default=4, help="largest penalty order (2..8)")
    s.set_defaults(func=cmd_rates)

    s = sub.add_parser("plot", help="log-log MSE plot from an experiment CSV")
    s.add_argument("--results", required=True, help="results CSV written by 'experiment'")
    s.add_argument("--output", required=True, help="SVG path")
    s.add_argument("--title", help="plot title")
    s.set_defaults(func=cmd_plot)
    p.subcommands = sub.choices
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"tvrate: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParameterError, ConfigError) as exc:
        print(f"tvrate {args.command}: error: {exc}", file=sys.stderr)
        parser.subcommands[args.command].print_usage(sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"tvrate: I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
