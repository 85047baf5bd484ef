"""Command-line entry point: ``sqvar {simulate,estimate,irf,scenario,screen,experiment,report}``.

Every command writes into one run directory::

    <out>/config.json   resolved settings
    <out>/fits/         model artifacts (JSON)
    <out>/tables/       CSV outputs
    <out>/logs/run.log

Settings come from argparse defaults, then an optional TOML or JSON file given
with ``--config``, then explicit flags.  Exit codes: 0 ok, 1 numerical
failure, 2 usage or IO error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .basis import SplineBasis
from .dgp import NonStationaryError, crossing_frequency, describe, simulate_qvar, study1_dgp, study2_dgp
from .experiments import (ExperimentConfig, read_manifests, run_experiment,
                          sqvar_quantiles, summary_tables, write_manifest, write_table)
from .innovation import NonInvertibleCurve, CopulaModel, fit_gaussian_copula, recover_rank_matrix
from .irf import (ImpulseSpec, Scenario, SqvarSystem, generalized_irf, neutral_shock_quantile,
                  scenario_forecast, scenario_irf, state_from_history)
from .panel import SeriesBounds, build_lagged_design, compute_bounds, load_csv
from .screen import DEFAULT_TAUS, ScreenConfig, screen
from .select import DEFAULT_C, default_lambda_grid, select_system, write_curves_csv
from .simplex import CoordinateSystem
from .solver import EquationData, QuantileGrid, SolverOptions, SqvarFit

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("sqvar")

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad input detected after argument parsing."""


# --------------------------------------------------------------------------
# argument parsing


def _floats(text: str) -> list:
    return [float(v) for v in str(text).replace(",", " ").split()]


def _ints(text: str) -> list:
    return [int(v) for v in str(text).replace(",", " ").split()]


def _common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="TOML or JSON file with settings; flags override it")
    sp.add_argument("--out", default="run", help="run directory (created if absent)")
    sp.add_argument("--threads", type=int, default=1, help="worker pool size")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("-v", "--verbose", action="store_true")


def _solver_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--tol", type=float, default=SolverOptions.tol)
    sp.add_argument("--max-iter", type=int, default=SolverOptions.max_iter)
    sp.add_argument("--max-outer", type=int, default=SolverOptions.max_outer)
    sp.add_argument("--smoothing", type=_floats, default=list(SolverOptions.smoothing),
                    help="decreasing smoothing widths, relative to std(y)")
    sp.add_argument("--eps-zero", type=float, default=SolverOptions.eps_zero)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sqvar", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"sqvar {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="simulate a panel from a built-in design")
    _common(sp)
    sp.add_argument("--dgp", choices=["study1", "study2"], default="study1")
    sp.add_argument("--b", type=int, default=1, help="signal divisor for study1")
    sp.add_argument("--T", type=int, default=600)
    sp.add_argument("--burn-in", type=int, default=500)
    sp.add_argument("--kappa", type=float, default=0.3, help="copula correlation for study2")

    sp = sub.add_parser("estimate", help="penalized fit with BIC selection per equation")
    _common(sp)
    sp.add_argument("--data", required=False, help="panel CSV, series as columns")
    sp.add_argument("--p", type=int, default=2)
    sp.add_argument("--knots", type=int, default=1, help="interior knots (H = knots + 4)")
    sp.add_argument("--L", type=int, default=30, help="quantile levels in the loss")
    sp.add_argument("--c-values", type=_floats, default=list(DEFAULT_C))
    sp.add_argument("--lambda", dest="lambdas", type=_floats, default=None,
                    help="explicit lambda values (overrides --c-values)")
    sp.add_argument("--equations", type=_ints, default=None, help="0-based equations to fit")
    sp.add_argument("--margin", type=float, default=0.0, help="bound widening, fraction of range")
    sp.add_argument("--tau-step", type=float, default=0.01)
    _solver_flags(sp)

    sp = sub.add_parser("irf", help="generalized impulse response from an estimate run")
    _common(sp)
    sp.add_argument("--fit", required=False, help="estimate run directory")
    sp.add_argument("--shock-series", type=int, default=0)
    sp.add_argument("--shock-quantile", default="0.9", help="level in (0,1) or 'neutral'")
    sp.add_argument("--horizon", type=int, default=10)
    sp.add_argument("--n-sim", type=int, default=2000)
    sp.add_argument("--no-crn", action="store_true", help="independent draws per branch")
    sp.add_argument("--clamp", action="store_true", help="clip forecasts to the bounds")

    sp = sub.add_parser("scenario", help="scenario impulse response from two rank paths")
    _common(sp)
    sp.add_argument("--fit", required=False, help="estimate run directory")
    sp.add_argument("--scenario-a", required=False, help="CSV, one row per series")
    sp.add_argument("--scenario-b", required=False, help="CSV, one row per series")
    sp.add_argument("--clamp", action="store_true")

    sp = sub.add_parser("screen", help="quantile-adaptive marginal screening")
    _common(sp)
    sp.add_argument("--data", required=False)
    sp.add_argument("--target", type=int, default=0)
    sp.add_argument("--p", type=int, default=1)
    sp.add_argument("--taus", type=_floats, default=list(DEFAULT_TAUS))
    sp.add_argument("--nu", type=float, default=0.0, help="absolute threshold")
    sp.add_argument("--top-k", type=int, default=None)

    sp = sub.add_parser("experiment", help="Monte-Carlo replications into a manifest")
    _common(sp)
    sp.add_argument("--study", type=int, choices=[1, 2], default=1)
    sp.add_argument("--T", type=int, default=600)
    sp.add_argument("--b", type=int, default=1)
    sp.add_argument("--knots", type=int, default=1)
    sp.add_argument("--L", type=int, default=30)
    sp.add_argument("--reps", type=int, default=50)
    sp.add_argument("--c-values", type=_floats, default=list(DEFAULT_C))
    sp.add_argument("--baseline", action="store_true", help="also run pointwise QR")

    sp = sub.add_parser("report", help="aggregate manifests into RMSE/crossing/selection tables")
    _common(sp)
    sp.add_argument("--manifest", nargs="+", required=False)
    return ap


def _load_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    if p.suffix.lower() == ".toml":
        with open(p, "rb") as fh:
            cfg = tomllib.load(fh)
    else:
        with open(p, encoding="utf-8") as fh:
            cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise UsageError("config must be a table/object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def parse_args(argv=None) -> argparse.Namespace:
    """Parse flags, layering ``--config`` values under explicitly given flags."""
    ap = build_parser()
    args = ap.parse_args(argv)
    if not args.config:
        return args
    cfg = _load_config(args.config)
    sub = ap._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions}
    unknown = sorted(set(cfg) - set(known))
    if unknown:
        raise UsageError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
    defaults = {}
    for k, v in cfg.items():
        act = known[k]
        if act.type in (_floats, _ints) and isinstance(v, (list, tuple)):
            defaults[k] = [float(x) if act.type is _floats else int(x) for x in v]
        elif act.type is not None and v is not None and not isinstance(v, list):
            defaults[k] = act.type(v)
        else:
            defaults[k] = v
    sub.set_defaults(**defaults)
    return ap.parse_args(argv)


# --------------------------------------------------------------------------
# run directory helpers


def _setup_run(args) -> Path:
    out = Path(args.out)
    for d in ("fits", "tables", "logs"):
        (out / d).mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "logs" / "run.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logging.getLogger().addHandler(handler)
    resolved = {k: v for k, v in sorted(vars(args).items())}
    _write_json(out / "config.json", resolved)
    return out


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing artifact: {path}")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _require(args, *names):
    for n in names:
        if getattr(args, n) in (None, [], ""):
            raise UsageError(f"--{n.replace('_', '-')} is required")


def _solver_options(args) -> SolverOptions:
    sm = tuple(args.smoothing)
    if not sm or any(s <= 0 for s in sm):
        raise UsageError("smoothing widths must be positive")
    return SolverOptions(tol=args.tol, max_iter=args.max_iter, max_outer=args.max_outer,
                         smoothing=sm, eps_zero=args.eps_zero)


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    if args.T < 1:
        raise UsageError("--T must be positive")
    out = _setup_run(args)
    if args.dgp == "study1":
        coefs, copula = study1_dgp(args.b)
        panel = simulate_qvar(coefs, copula, args.T, burn_in=args.burn_in, seed=args.seed)
        meta = json.loads(describe(coefs, copula))
    else:
        res = study2_dgp(args.T, seed=args.seed, copula=CopulaModel(kappa=args.kappa, n=3))
        panel = res.panel
        meta = json.loads(describe(res.coefs, CopulaModel(kappa=args.kappa, n=3)))
        meta["steps_to_stable"] = res.steps_to_stable
    panel.to_csv(out / "panel.csv")
    _write_json(out / "fits" / "dgp.json", meta)
    log.info("wrote %d x %d panel", panel.n, panel.T)
    return EXIT_OK


def _load_model(run: Path):
    model = _read_json(run / "fits" / "model.json")
    bounds = SeriesBounds(np.asarray(model["lb"]), np.asarray(model["ub"]))
    cs = CoordinateSystem(bounds, int(model["p"]))
    basis = SplineBasis.equispaced(int(model["knots"]))
    fits = []
    for i in range(cs.n):
        sel = _read_json(run / "fits" / f"equation_{i}.json")
        fits.append(SqvarFit.from_dict(sel["fit"]))
    history = np.asarray(model["history"], dtype=float)
    return model, cs, basis, fits, history


def cmd_estimate(args) -> int:
    _require(args, "data")
    panel = load_csv(args.data)
    if not 0 < args.tau_step < 1:
        raise UsageError("--tau-step must lie in (0, 1)")
    opts = _solver_options(args)
    out = _setup_run(args)
    bounds = compute_bounds(panel, args.margin)
    cs = CoordinateSystem(bounds, args.p)
    design = build_lagged_design(panel, args.p)
    basis = SplineBasis.equispaced(args.knots)
    G = basis.gram()
    grid = QuantileGrid(args.L)
    eqs = args.equations if args.equations is not None else list(range(panel.n))
    if any(not 0 <= i < panel.n for i in eqs):
        raise UsageError(f"equation index out of range for n={panel.n}")
    datasets = [EquationData.build(design, cs, basis, grid, i) for i in eqs]
    T_eff = design.responses.shape[0]
    lambdas = (np.asarray(args.lambdas, float) if args.lambdas is not None
               else default_lambda_grid(T_eff, args.c_values))
    if np.any(lambdas < 0):
        raise UsageError("lambda values must be nonnegative")
    results = select_system(datasets, G, lambdas, panel.n, opts, threads=args.threads)
    k = int(round(1.0 / args.tau_step))
    taus = np.arange(1, k) / k
    names = list(panel.series_names)
    cross_rows = []
    for i, data, sel in zip(eqs, datasets, results):
        d = sel.to_dict()
        d["active_set_named"] = sorted([names[l], j] for l, j in sel.active_set)
        _write_json(out / "fits" / f"equation_{i}.json", d)
        write_curves_csv(out / "tables" / f"curves_{i}.csv", sel.best_fit, cs, basis, taus, G,
                         names, opts.eps_zero)
        Q = sqvar_quantiles(sel.best_fit.gamma, data.coords, basis, taus)
        cross_rows.append({"equation": i, "series": names[i], "lambda": sel.best_lambda,
                           "s1_hat": sel.s1_hat, "crossing": crossing_frequency(Q),
                           "converged": int(sel.best_fit.converged)})
    write_table(out / "tables" / "crossing.csv", cross_rows)
    model = {"p": args.p, "knots": args.knots, "L": args.L, "names": names,
             "lb": bounds.lb.tolist(), "ub": bounds.ub.tolist(), "equations": eqs,
             "history": state_from_history(panel.values, args.p).tolist()}
    if sorted(eqs) == list(range(panel.n)) and panel.n >= 2:
        order = np.argsort(eqs)
        fits = [results[o].best_fit for o in order]
        try:
            ranks = recover_rank_matrix(fits, datasets[0].coords, design.responses, basis)
            copula = fit_gaussian_copula(ranks.u_hat)
            model["copula"] = copula.to_dict()
            model["ranks_clamped"] = ranks.n_clamped
        except NonInvertibleCurve as exc:
            log.warning("copula not fitted: %s", exc)
    _write_json(out / "fits" / "model.json", model)
    bad = [r["equation"] for r in cross_rows if r["crossing"] > 0]
    if bad:
        log.error("quantile crossing detected in equations %s", bad)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_irf(args) -> int:
    _require(args, "fit")
    model, cs, basis, fits, history = _load_model(Path(args.fit))
    if "copula" not in model:
        raise UsageError("the estimate run has no fitted copula (fit every equation)")
    c = model["copula"]
    copula = CopulaModel(kappa=float(c["kappa"]), n=int(c["n"]))
    system = SqvarSystem.from_fits(fits, cs, basis)
    if not 0 <= args.shock_series < system.n:
        raise UsageError(f"--shock-series out of range for n={system.n}")
    if str(args.shock_quantile).lower() == "neutral":
        tau = neutral_shock_quantile(system, history, args.shock_series)
    else:
        tau = float(args.shock_quantile)
    out = _setup_run(args)
    spec = ImpulseSpec(args.shock_series, tau, args.horizon, history, args.n_sim, args.seed)
    res = generalized_irf(system, copula, spec, common_random_numbers=not args.no_crn,
                          clamp=args.clamp)
    res.to_csv(out / "tables" / "irf.csv", model["names"])
    _write_json(out / "fits" / "irf.json", {"shock_quantile": tau,
                                             "out_of_bounds_paths": res.out_of_bounds_paths})
    return EXIT_OK


def cmd_scenario(args) -> int:
    _require(args, "fit", "scenario_a", "scenario_b")
    model, cs, basis, fits, history = _load_model(Path(args.fit))
    system = SqvarSystem.from_fits(fits, cs, basis)
    sa = Scenario.from_csv(args.scenario_a)
    sb = Scenario.from_csv(args.scenario_b)
    out = _setup_run(args)
    pa = scenario_forecast(system, sa, history, clamp=args.clamp)
    pb = scenario_forecast(system, sb, history, clamp=args.clamp)
    diff = scenario_irf(pa, pb)
    names = model["names"]
    with open(out / "tables" / "scenario_irf.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["series", "horizon", "path_a", "path_b", "value"])
        for i in range(diff.shape[0]):
            for h in range(diff.shape[1]):
                w.writerow([names[i], h, repr(float(pa[i, h])), repr(float(pb[i, h])),
                            repr(float(diff[i, h]))])
    return EXIT_OK


def cmd_screen(args) -> int:
    _require(args, "data")
    panel = load_csv(args.data)
    cfg = ScreenConfig(p=args.p, tau_grid=tuple(args.taus), nu_T=args.nu, top_k=args.top_k)
    if not 0 <= args.target < panel.n:
        raise UsageError(f"--target out of range for n={panel.n}")
    out = _setup_run(args)
    res = screen(panel, cfg, args.target)
    res.to_csv(out / "tables" / "screen.csv", list(panel.series_names))
    names = panel.series_names
    _write_json(out / "fits" / "screen.json",
                {"target": names[args.target],
                 "selected": sorted([names[l], j] for l, j in res.selected)})
    return EXIT_OK


def cmd_experiment(args) -> int:
    if args.reps < 1 or args.T < 10:
        raise UsageError("--reps must be positive and --T at least 10")
    out = _setup_run(args)
    cfg = ExperimentConfig(study=args.study, T=args.T, b=args.b, n_knots=args.knots, L=args.L,
                           reps=args.reps, seed=args.seed, c_values=tuple(args.c_values),
                           baseline=args.baseline)
    recs = run_experiment(cfg, workers=args.threads)
    write_manifest(out / "fits" / "manifest.json", cfg, recs)
    _write_tables(out, recs)
    return EXIT_OK


def _write_tables(out: Path, recs) -> None:
    tables = summary_tables(recs)
    for name, rows in tables.items():
        write_table(out / "tables" / f"{name}.csv", rows)


def cmd_report(args) -> int:
    _require(args, "manifest")
    recs = read_manifests(args.manifest)
    if not recs:
        raise UsageError("manifests contain no replications")
    out = _setup_run(args)
    _write_tables(out, recs)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "irf": cmd_irf,
            "scenario": cmd_scenario, "screen": cmd_screen, "experiment": cmd_experiment,
            "report": cmd_report}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code or 0)
    except (UsageError, OSError, ValueError) as exc:
        print(f"sqvar: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    root = logging.getLogger()
    try:
        return COMMANDS[args.command](args)
    except (NonStationaryError, NonInvertibleCurve, FloatingPointError, np.linalg.LinAlgError,
            RuntimeError) as exc:
        print(f"sqvar: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"sqvar: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        for h in list(root.handlers):
            if isinstance(h, logging.FileHandler):
                root.removeHandler(h)
                h.close()


if __name__ == "__main__":
    sys.exit(main())
