"""Command-line front end: ``pinvport <subcommand> [options]``.

Every run writes its table (CSV or JSON) and a JSON manifest holding
the argument vector and the resolved configuration, which is enough to
reproduce the run.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import asymptotics as asy
from .backtest import (
    METRIC_COLUMNS,
    BacktestConfig,
    annualize,
    build_sorted_portfolios,
    load_characteristic_panel,
    metrics_as_dicts,
    rolling_backtest,
)
from .calibration import FIT_COLUMNS, fit_table, fit_theta_curve, read_sharpe_curve
from .core import read_return_panel
from .errors import NumericalError, SchemaError, ValidationError
from .montecarlo import SWEEP_COLUMNS, SweepConfig, run_sweep, sweep_rows_as_dicts

EXIT_OK, EXIT_USAGE, EXIT_SCHEMA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument helpers
# ---------------------------------------------------------------------------


def parse_grid(text: str) -> list[float]:
    """``"1,2,3"`` or ``"lo:hi:n"`` (n evenly spaced points, inclusive)."""
    text = text.strip()
    if text.count(":") == 2:
        lo, hi, n = text.split(":")
        try:
            n = int(n)
            lo, hi = float(lo), float(hi)
        except ValueError:
            raise UsageError(f"bad grid {text!r}") from None
        if n < 1:
            raise UsageError(f"grid {text!r} needs at least one point")
        return [float(x) for x in np.linspace(lo, hi, n)]
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad value list {text!r}") from None
    if not vals:
        raise UsageError("empty value list")
    return vals


def _phi_token(tok: str, T: int) -> float:
    named = {"T": T, "1/T": 1 / T, "sqrt(T)": math.sqrt(T), "1/sqrt(T)": 1 / math.sqrt(T),
             "log(T)": math.log(T)}
    tok = tok.strip().replace(" ", "")
    if tok in named:
        return float(named[tok])
    try:
        return float(tok)
    except ValueError:
        raise UsageError(f"cannot read phi value {tok!r}") from None


def read_key_values(path) -> dict[str, str]:
    """Plain ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def sweep_config_from(kv: dict[str, str]) -> SweepConfig:
    known = {"T", "N_list", "phi_list", "theta", "reps", "seed", "sigma", "phi_source",
             "redraw_loadings", "dist"}
    unknown = set(kv) - known
    if unknown:
        raise UsageError(f"unknown simulate config key(s): {sorted(unknown)}")
    T = int(kv.get("T", 100))
    args = dict(T=T)
    if "N_list" in kv:
        args["N_list"] = tuple(int(x) for x in kv["N_list"].split(","))
    if "phi_list" in kv:
        args["phi_list"] = tuple(_phi_token(x, T) for x in kv["phi_list"].split(","))
    if "theta" in kv:
        args["theta"] = kv["theta"] if kv["theta"] == "schedule" else float(kv["theta"])
    for k, cast in (("reps", int), ("seed", int), ("sigma", float)):
        if k in kv:
            args[k] = cast(kv[k])
    for k in ("phi_source", "dist"):
        if k in kv:
            args[k] = kv[k]
    if "redraw_loadings" in kv:
        args["redraw_loadings"] = kv["redraw_loadings"].lower() in ("1", "true", "yes")
    return SweepConfig(**args)


def backtest_config_from(kv: dict[str, str]) -> BacktestConfig:
    known = {"window", "N_list", "sigma", "gamma", "reps", "seed", "periods_per_year", "insample"}
    unknown = set(kv) - known
    if unknown:
        raise UsageError(f"unknown backtest config key(s): {sorted(unknown)}")
    args = {}
    for k, cast in (("window", int), ("sigma", float), ("gamma", float), ("reps", int),
                    ("seed", int), ("periods_per_year", int)):
        if k in kv:
            args[k] = cast(kv[k])
    if "N_list" in kv:
        args["N_list"] = tuple(int(x) for x in kv["N_list"].split(","))
    if "insample" in kv:
        args["insample"] = kv["insample"]
    return BacktestConfig(**args)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _jsonable(x):
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    return x


def render_table(rows: list[dict], columns, fmt: str) -> str:
    if fmt == "json":
        return json.dumps([{c: _jsonable(r[c]) for c in columns} for r in rows], indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r[c]) for c in columns])
    return buf.getvalue()


def emit(args, rows: list[dict], columns, config: dict, result: dict | None = None) -> None:
    text = render_table(rows, columns, args.format)
    manifest = {"command": args.command, "argv": args.argv, "version": __version__,
                "config": _jsonable(config), "columns": list(columns)}
    if result is not None:
        manifest["result"] = _jsonable(result)
    mtext = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    mpath = args.manifest or (None if args.out == "-" else args.out + ".manifest.json")
    if mpath is None:
        sys.stderr.write(mtext)
    else:
        Path(mpath).write_text(mtext)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

_THEOREM_COLUMNS = {"sr": ("sr",), "loss": ("loss",), "mean-sd": ("mean", "sd"),
                    "all": ("sr", "loss", "mean", "sd")}


def cmd_limits(args) -> None:
    values = _THEOREM_COLUMNS[args.theorem]
    if args.scenario == "double-ascent":
        if args.T is None:
            raise UsageError("--scenario double-ascent needs --T")
        Ns = [int(n) for n in parse_grid(args.N)] if args.N else list(range(2, 6 * args.T + 1, 2))
        phis = parse_grid(args.phi) if args.phi else [0.0, 0.05, 1.0, 10.0, 100.0]
        rows = asy.double_ascent_curve(args.T, Ns, phis, args.sigma)
        columns = ("N", "theta", "phi", "rho", "sigma", *values)
        config = dict(scenario="double-ascent", T=args.T, N=Ns, phi=phis, sigma=args.sigma)
    else:
        if args.theta is None or args.rho is None:
            raise UsageError("limits needs --theta and --rho (or --scenario)")
        thetas, rhos = parse_grid(args.theta), parse_grid(args.rho)
        phis = parse_grid(args.phi) if args.phi else [0.0]
        rows = asy.limit_grid(thetas, rhos, phis, args.sigma, args.factorless)
        columns = ("theta", "phi", "rho", "sigma", *values)
        config = dict(theta=thetas, rho=rhos, phi=phis, sigma=args.sigma, factorless=args.factorless)
    config["theorem"] = args.theorem
    emit(args, rows, columns, config)


def cmd_simulate(args) -> None:
    cfg = sweep_config_from(read_key_values(args.config))
    overrides = {"workers": args.threads}
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = SweepConfig(**{**asdict(cfg), **overrides})
    rows = run_sweep(cfg)
    config = cfg.to_dict()
    config.pop("workers")  # does not affect results
    emit(args, sweep_rows_as_dicts(rows), SWEEP_COLUMNS, config)


def cmd_backtest(args) -> None:
    cfg = backtest_config_from(read_key_values(args.config)) if args.config else BacktestConfig()
    overrides = {"workers": args.threads}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.N:
        overrides["N_list"] = tuple(int(n) for n in parse_grid(args.N))
    cfg = BacktestConfig(**{**asdict(cfg), **overrides})
    market = None
    if args.characteristics:
        if not args.weights:
            raise UsageError("--characteristics needs --weights")
        panel = load_characteristic_panel(args.returns, args.characteristics, args.weights, args.market)
        if args.top_m is None:
            raise UsageError("--characteristics needs --top-m")
        assets = build_sorted_portfolios(panel, args.top_m, args.groups)
        market = panel.market
    else:
        assets = read_return_panel(args.returns, allow_missing=True)
        if args.market:
            raise UsageError("--market is only read together with --characteristics")
    rows = rolling_backtest(assets, cfg, market)
    if args.annualize:
        rows = [annualize(r, cfg.periods_per_year) for r in rows]
    config = cfg.to_dict()
    config.pop("workers")
    config.update(annualize=args.annualize, top_m=args.top_m, groups=args.groups,
                  inputs=dict(returns=args.returns, characteristics=args.characteristics,
                              weights=args.weights, market=args.market))
    emit(args, metrics_as_dicts(rows), METRIC_COLUMNS, config)


def cmd_calibrate(args) -> None:
    pts, ses = read_sharpe_curve(args.input)
    if args.weighted and ses is None:
        raise UsageError("--weighted needs an SE column in the input")
    try:
        fit = fit_theta_curve(pts, args.T, args.phi, args.sigma, unit=args.unit,
                              periods_per_year=args.periods_per_year,
                              standard_errors=ses if args.weighted else None)
    except ValidationError as exc:
        raise UsageError(str(exc)) from None
    result = dict(asdict(fit.model), sse=fit.sse, converged=fit.converged, unit=fit.unit)
    config = dict(input=args.input, T=args.T, phi=args.phi, sigma=args.sigma, unit=args.unit,
                  periods_per_year=args.periods_per_year, weighted=args.weighted)
    emit(args, fit_table(fit), FIT_COLUMNS, config, result)


def cmd_mp(args) -> None:
    a, b = asy.mp_support(args.rho)
    xs = np.linspace(a, b, args.points)
    dens = asy.mp_density(xs, args.rho)
    rows = [dict(x=float(x), density=float(d)) for x, d in zip(xs, dens)]
    result = dict(lower=a, upper=b, zero_mass=asy.mp_zero_mass(args.rho),
                  smallest_nonzero=asy.smallest_nonzero_eig_limit(args.rho))
    emit(args, rows, ("x", "density"), dict(rho=args.rho, points=args.points), result)


RIDGE_COLUMNS = ("lambda", "m", "dm", "m1", "Theta1", "Theta2", "Phi1", "Phi2", "sr", "loss", "residual")


def cmd_ridge(args) -> None:
    H = asy.SpectralMeasure.point(args.tau)
    lams = parse_grid(args.lam)
    rows = []
    for lam in lams:
        lim = asy.ridge_limits(asy.RidgeInputs(H, H, lam, args.rho, args.xi2, args.theta, args.sigma))
        rows.append(dict(asdict(lim), **{"lambda": lam}))
    config = dict(tau=args.tau, rho=args.rho, xi2=args.xi2, theta=args.theta, sigma=args.sigma, lam=lams)
    emit(args, rows, RIDGE_COLUMNS, config)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pinvport", description="Pseudoinverse portfolio toolkit.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", default="-", help="output table path ('-' for stdout)")
        sp.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")

    sp = sub.add_parser("limits", help="closed-form limit tables")
    sp.add_argument("--theorem", choices=tuple(_THEOREM_COLUMNS), default="all")
    sp.add_argument("--theta", help="θ̃ values: list or lo:hi:n")
    sp.add_argument("--rho", help="ρ values: list or lo:hi:n")
    sp.add_argument("--phi", help="φ̃ values: list or lo:hi:n")
    sp.add_argument("--sigma", type=float, default=1.0)
    sp.add_argument("--factorless", action="store_true", help="use the Σ = I formulas")
    sp.add_argument("--scenario", choices=("double-ascent",))
    sp.add_argument("--T", type=int)
    sp.add_argument("--N", help="N values for the scenario (default 2..6T step 2)")
    common(sp)
    sp.set_defaults(func=cmd_limits)

    sp = sub.add_parser("simulate", help="finite-sample Monte Carlo sweep")
    sp.add_argument("--config", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--threads", type=int, default=1)
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("backtest", help="rolling-window out-of-sample backtest")
    sp.add_argument("--config")
    sp.add_argument("--returns", required=True, help="asset (or stock) return panel")
    sp.add_argument("--characteristics", help="period,stock,characteristic,value file")
    sp.add_argument("--weights", help="period,stock,weight file")
    sp.add_argument("--market", help="period,market file")
    sp.add_argument("--top-m", type=int)
    sp.add_argument("--groups", type=int, default=10)
    sp.add_argument("--N", help="override N_list")
    sp.add_argument("--annualize", action="store_true")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--threads", type=int, default=1)
    common(sp)
    sp.set_defaults(func=cmd_backtest)

    sp = sub.add_parser("calibrate", help="fit the clairvoyant Sharpe curve")
    sp.add_argument("--input", required=True, help="N,SR[,SE] file")
    sp.add_argument("--T", type=int, required=True)
    sp.add_argument("--phi", type=float, default=0.0)
    sp.add_argument("--sigma", type=float, default=1.0)
    sp.add_argument("--unit", choices=("period", "annual"), default="period")
    sp.add_argument("--periods-per-year", type=int, default=12)
    sp.add_argument("--weighted", action="store_true", help="weight residuals by 1/SE")
    common(sp)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("mp", help="Marčenko-Pastur density table")
    sp.add_argument("--rho", type=float, required=True)
    sp.add_argument("--points", type=int, default=201)
    common(sp)
    sp.set_defaults(func=cmd_mp)

    sp = sub.add_parser("ridge", help="ridge-portfolio limit table (H = G = point mass)")
    sp.add_argument("--lambda", dest="lam", required=True, help="penalties: list or lo:hi:n")
    sp.add_argument("--rho", type=float, required=True)
    sp.add_argument("--theta", type=float, required=True)
    sp.add_argument("--xi2", type=float, required=True)
    sp.add_argument("--tau", type=float, default=1.0)
    sp.add_argument("--sigma", type=float, default=1.0)
    common(sp)
    sp.set_defaults(func=cmd_ridge)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    if getattr(args, "threads", 1) < 1:
        parser.print_usage(sys.stderr)
        sys.stderr.write("pinvport: error: --threads must be >= 1\n")
        return EXIT_USAGE
    try:
        args.func(args)
    except SchemaError as exc:
        sys.stderr.write(f"pinvport: schema error: {exc}\n")
        return EXIT_SCHEMA
    except (UsageError, ValidationError) as exc:
        sys.stderr.write(f"pinvport: error: {exc}\n")
        return EXIT_USAGE
    except NumericalError as exc:
        sys.stderr.write(f"pinvport: numerical failure: {exc}\n")
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        sys.stderr.write(f"pinvport: error: {exc}\n")
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
