"""Command-line front end.

Subcommands: rates, check, simulate, clt, ldp, drift.  Exit codes: 0 ok,
1 acceptance/assumption failure, 2 numeric failure, 64 usage error.  All
commands are deterministic given their flags and seed; `--threads` (or the
TRILOAD_THREADS environment variable) never changes outputs.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

from . import asymptotics, costs, experiments
from .errors import (
    BracketCapReachedError,
    BudgetExceededError,
    InsufficientTailHitsError,
    SolverStallError,
    TriloadError,
)

EXIT_OK = 0
EXIT_ACCEPTANCE = 1
EXIT_NUMERIC = 2
EXIT_USAGE = 64

_NUMERIC_ERRORS = (
    BracketCapReachedError,
    BudgetExceededError,
    InsufficientTailHitsError,
    SolverStallError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _usage_fail(message):
    print(f"error: {message}", file=sys.stderr)
    raise SystemExit(EXIT_USAGE)


def _parse_model(spec):
    try:
        return costs.parse_model_spec(spec)
    except (ValueError, TriloadError) as exc:
        _usage_fail(str(exc))


def _default_threads():
    env = os.environ.get("TRILOAD_THREADS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def _write(path, text):
    if path:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _fmt(x):
    return repr(float(x))


def build_parser() -> _Parser:
    p = _Parser(prog="triload", description="three-bin load allocation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--model", required=True,
                        help="radial:<scale> | sinr:<alpha>,<a>,<b> | const:<kappa>")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=_default_threads())
        sp.add_argument("--out", default=None, help="output path prefix")

    sp = sub.add_parser("rates", help="rate-function table as CSV")
    sp.add_argument("--model", required=True)
    sp.add_argument("--y-grid", default=None,
                    help="start:stop:count grid of per-point load levels")
    sp.add_argument("--out", default=None)

    sp = sub.add_parser("check", help="assumption report as JSON")
    sp.add_argument("model", help="cost model spec string")
    sp.add_argument("--grid-resolution", type=int, default=300)
    sp.add_argument("--out", default=None)

    sp = sub.add_parser("simulate", help="single-run law-of-large-numbers check")
    common(sp)
    sp.add_argument("--n", type=int, nargs="+", required=True)
    sp.add_argument("--tol", type=float, default=0.01,
                    help="relative tolerance on |rho/n - gamma|")

    sp = sub.add_parser("clt", help="replicated fluctuation check")
    common(sp)
    sp.add_argument("--n", type=int, nargs="+", required=True)
    sp.add_argument("--R", type=int, default=2000)
    sp.add_argument("--tol", type=float, default=0.10,
                    help="relative tolerance on the variance target")

    sp = sub.add_parser("ldp", help="tail-probability decay slope")
    common(sp)
    sp.add_argument("--n", type=int, nargs="+", required=True)
    sp.add_argument("--R", type=int, default=100_000)
    sp.add_argument("--t", type=float, required=True, help="tail level, must exceed gamma")
    sp.add_argument("--estimator", choices=("naive", "tilted"), default="tilted")
    sp.add_argument("--tol", type=float, default=0.25,
                    help="relative tolerance on the fitted slope")

    sp = sub.add_parser("drift", help="mean-drift check of the centred loads")
    common(sp)
    sp.add_argument("--n", type=int, nargs="+", required=True)
    sp.add_argument("--R", type=int, default=1000)
    sp.add_argument("--tol", type=float, default=4.0,
                    help="allowed drift in standard errors")
    return p


def _cmd_rates(args):
    model = _parse_model(args.model)
    ev = asymptotics.evaluator(model)
    lo_edge = ev.cb1 / 3.0
    hi_edge = ev.c0
    margin = 0.25 * (hi_edge - lo_edge)
    if args.y_grid:
        try:
            start, stop, count = args.y_grid.split(":")
            start, stop, count = float(start), float(stop), int(count)
        except ValueError:
            _usage_fail("--y-grid must look like start:stop:count")
        if count < 1 or stop < start:
            _usage_fail("--y-grid must have stop >= start and count >= 1")
        if start < lo_edge - margin or stop > hi_edge + margin:
            _usage_fail(
                f"--y-grid must stay within [{lo_edge - margin:.6g}, {hi_edge + margin:.6g}]"
            )
        ys = [start + (stop - start) * k / max(count - 1, 1) for k in range(count)]
    else:
        ys = [lo_edge + (hi_edge - lo_edge) * (k + 0.5) / 40 for k in range(40)]
    try:
        rows = asymptotics.rate_table(model, ys)
    except _NUMERIC_ERRORS as exc:
        print(f"error: rate solve failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    lines = ["y,J,Jbar,theta_y,eta_y"]
    for r in rows:
        lines.append(
            ",".join(
                "inf" if math.isinf(v) else _fmt(v)
                for v in (r.y, r.rate_optimal, r.rate_greedy, r.theta, r.eta)
            )
        )
    _write(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def _cmd_check(args):
    model = _parse_model(args.model)
    report = costs.check_assumptions(model, grid_resolution=args.grid_resolution)
    doc = {"model": model.label, "assumptions": report.to_dict()}
    scan = costs.check_level_sets_monotone(model, ray_count=120, steps=2000)
    doc["ray_scan"] = {
        "segments": scan.segment_count,
        "monotone": scan.monotone_segments,
        "flat": scan.flat_segments,
        "mixed": scan.mixed_segments,
    }
    if model.label.startswith("sinr:"):
        alpha, a, b = (float(v) for v in model.label.split(":")[1].split(","))
        candidates = [b, 10.0 * b, 100.0 * b, 1000.0 * b]
        doc["b_threshold_scan"] = {
            "candidates": candidates,
            "admissible": costs.scan_b_threshold(alpha, a, candidates),
        }
    _write(args.out, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return EXIT_OK if report.passed else EXIT_ACCEPTANCE


def _outputs(args, config, stats, records):
    if args.out:
        _write(args.out + ".csv", experiments.records_to_csv(records))
        _write(args.out + ".json", experiments.summary_json(config, stats))


def _cmd_simulate(args):
    model_label = _parse_model(args.model).label
    config = experiments.ExperimentConfig(
        model=model_label, n_values=tuple(args.n), replications=1,
        seed=args.seed, threads=args.threads,
    )
    res = experiments.run_lln(config)
    worst = max(max(r.gap_bar, r.gap_hat) for r in res.rows)
    tol = args.tol * res.gamma
    ok = worst <= tol
    print(
        f"lln: target gamma={_fmt(res.gamma)} worst-gap={_fmt(worst)} "
        f"tol={_fmt(tol)} -> {'pass' if ok else 'FAIL'}"
    )
    _outputs(args, config, {"gamma": res.gamma, "rows": [r.__dict__ for r in res.rows]},
             res.records)
    return EXIT_OK if ok else EXIT_ACCEPTANCE


def _cmd_clt(args):
    model_label = _parse_model(args.model).label
    config = experiments.ExperimentConfig(
        model=model_label, n_values=tuple(args.n), replications=args.R,
        seed=args.seed, threads=args.threads,
    )
    res = experiments.run_clt(config)
    n_last = config.n_values[-1]
    est = res.per_n[n_last]["optimal"].variance
    ok = abs(est - res.var_opt_target) <= args.tol * res.var_opt_target
    print(
        f"clt: variance target={_fmt(res.var_opt_target)} estimate={_fmt(est)} "
        f"rel-tol={args.tol:g} -> {'pass' if ok else 'FAIL'}"
    )
    stats = {
        "var_opt_target": res.var_opt_target,
        "m_target": res.m_target,
        "per_n": {
            str(n): {k: v for k, v in d.items()} for n, d in res.per_n.items()
        },
    }
    _outputs(args, config, stats, res.records)
    return EXIT_OK if ok else EXIT_ACCEPTANCE


def _cmd_ldp(args):
    model = _parse_model(args.model)
    ev = asymptotics.evaluator(model)
    if args.t <= ev.gamma:
        _usage_fail(f"tail level t={args.t} must exceed gamma={ev.gamma:.6g}")
    if args.t >= ev.c0:
        _usage_fail(f"tail level t={args.t} must stay below c(0)={ev.c0:.6g}")
    config = experiments.ExperimentConfig(
        model=model.label, n_values=tuple(args.n), replications=args.R,
        seed=args.seed, threshold=args.t, estimator=args.estimator,
        threads=args.threads,
    )
    try:
        fit = experiments.run_ldp(config)
    except _NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    ok = abs(fit.slope - fit.reference_rate) <= args.tol * fit.reference_rate
    print(
        f"ldp: rate target={_fmt(fit.reference_rate)} slope={_fmt(fit.slope)} "
        f"rel-tol={args.tol:g} -> {'pass' if ok else 'FAIL'}"
    )
    if args.out:
        _write(args.out + ".json", experiments.summary_json(
            config,
            {
                "threshold": fit.threshold,
                "reference_rate": fit.reference_rate,
                "slope": fit.slope,
                "slope_stderr": fit.slope_stderr,
                "intercept": fit.intercept,
                "estimates": list(fit.estimates),
            },
        ))
    return EXIT_OK if ok else EXIT_ACCEPTANCE


def _cmd_drift(args):
    model_label = _parse_model(args.model).label
    config = experiments.ExperimentConfig(
        model=model_label, n_values=tuple(args.n), replications=args.R,
        seed=args.seed, threads=args.threads,
    )
    res = experiments.run_mean_drift(config)
    row = res.rows[-1]
    gap_sub = abs(row.drift_suboptimal.mean - res.m_target)
    gap_opt = abs(row.drift_optimal.mean)
    ok = (
        gap_sub <= args.tol * row.drift_suboptimal.stderr
        and gap_opt <= args.tol * row.drift_optimal.stderr
    )
    print(
        f"drift: m target={_fmt(res.m_target)} greedy-drift={_fmt(row.drift_suboptimal.mean)} "
        f"sweep-drift={_fmt(row.drift_optimal.mean)} tol={args.tol:g}SE -> "
        f"{'pass' if ok else 'FAIL'}"
    )
    stats = {
        "m_target": res.m_target,
        "rows": [
            {
                "n": r.n,
                "drift_suboptimal": r.drift_suboptimal,
                "drift_optimal": r.drift_optimal,
            }
            for r in res.rows
        ],
    }
    _outputs(args, config, stats, res.records)
    return EXIT_OK if ok else EXIT_ACCEPTANCE


_COMMANDS = {
    "rates": _cmd_rates,
    "check": _cmd_check,
    "simulate": _cmd_simulate,
    "clt": _cmd_clt,
    "ldp": _cmd_ldp,
    "drift": _cmd_drift,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except SystemExit:
        raise
    except _NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
