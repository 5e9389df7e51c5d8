"""
Command-line entry point.

    phigpr [--seed S] [--threads T] [--out DIR] <command> ...

Exit status is 0 on success, 1 for configuration problems and 2 for
numerical failures.
"""

from __future__ import annotations

import argparse
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import container, harness
from .errors import ContractError
from .grid_model import load_grid
from .metrics import read_metrics_csv
from .prior_stats import ensemble_moments
from .sde_sim import generate_ensemble, write_trajectory_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _parser():
    ap = argparse.ArgumentParser(prog="phigpr", description=__doc__.splitlines()[1].strip() or None)
    ap.add_argument("--seed", type=int, default=None, help="override the master seed")
    ap.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    ap.add_argument("--out", default=None, help="output directory")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate the Monte Carlo ensemble")
    p.add_argument("config")
    p = sub.add_parser("moments", help="ensemble means and two-time covariances")
    p.add_argument("config")
    p = sub.add_parser("forecast", help="physics-informed GPR estimation and forecast")
    p.add_argument("config")
    p = sub.add_parser("baseline", help="data-driven GPR and/or ARIMA")
    p.add_argument("config")
    p.add_argument("--method", choices=["dd-gpr", "arima"], action="append")
    p = sub.add_parser("metrics", help="summarize the metrics table of a finished run")
    p.add_argument("config")
    p = sub.add_parser("recipe", help="run a shipped experiment recipe")
    p.add_argument("name", help="one of: " + ", ".join(harness.recipe_names()))
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--n-mc", type=int, default=None)
    return ap


def _config(args, path, **extra):
    return harness.load_config(path, seed=args.seed, output=args.out, **extra)


def _simulate(args):
    cfg = _config(args, args.config)
    params = load_grid(cfg.grid_path())
    ens = generate_ensemble(cfg.sim_config(), params, cfg.n_mc, cfg.record_interval, args.threads)
    out = cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    container.save_ensemble(ens, out / "ensemble.pgrc")
    write_trajectory_csv(ens.member(0), out / "trajectory_0.csv")
    print(f"{ens.n_members} members x {len(ens.times)} times -> {out / 'ensemble.pgrc'}")


def _moments(args):
    cfg = _config(args, args.config)
    params = load_grid(cfg.grid_path())
    out = cfg.output_dir()
    path = out / "ensemble.pgrc"
    if path.exists():
        ens = container.load_ensemble(path)
    else:
        ens = generate_ensemble(cfg.sim_config(), params, cfg.n_mc, cfg.record_interval, args.threads)
    channels = harness.ObservationPlan(cfg.observed, cfg.cadences[0], cfg.window_end).channels(params.n_gen)
    table = ensemble_moments(ens, list(dict.fromkeys(channels + cfg.target_channels)))
    out.mkdir(parents=True, exist_ok=True)
    table.save(out / "moments.pgrc")
    table.write_csv(out / "moments.csv")
    print(f"moments of {len(table.channels)} channels -> {out / 'moments.csv'}")


def _run(cfg, args):
    record = harness.run_experiment(cfg, threads=args.threads)
    harness.emit_plotdata(record)
    _print_summary(record.metrics)
    print(f"outputs in {cfg.output_dir()}")


def _forecast(args):
    _run(_config(args, args.config).replace(methods=["phi-gpr"]), args)


def _baseline(args):
    cfg = _config(args, args.config)
    methods = args.method or [m for m in cfg.methods if m != "phi-gpr"] or ["arima"]
    _run(cfg.replace(methods=methods), args)


def _metrics(args):
    cfg = _config(args, args.config)
    path = cfg.output_dir() / "metrics.csv"
    if not path.exists():
        raise harness.ConfigError(f"no metrics table at {path}")
    _print_summary(read_metrics_csv(path))


def _recipe(args):
    cfg = _config(args, harness.recipe_path(args.name), replicates=args.replicates, n_mc=args.n_mc)
    _run(cfg, args)


def _print_summary(rows):
    """Replicate-averaged scores per method, channel, window and case."""
    groups = defaultdict(list)
    for r in rows:
        groups[(r.method, r.quantity, r.window, r.cadence, r.noise_pct)].append(r)
    if not groups:
        return
    print(f"{'method':8s} {'quantity':16s} {'window':12s} {'cadence':>7s} {'noise%':>6s} "
          f"{'lpp':>12s} {'coverage':>8s} {'rmse':>10s}")
    for (method, qty, window, cad, noise), rs in groups.items():
        print(f"{method:8s} {qty:16s} {window:12s} {cad:7.3f} {noise:6.1f} "
              f"{np.mean([r.lpp for r in rs]):12.4g} {np.mean([r.coverage for r in rs]):8.3f} "
              f"{np.mean([r.rmse for r in rs]):10.4g}")


_COMMANDS = {
    "simulate": _simulate,
    "moments": _moments,
    "forecast": _forecast,
    "baseline": _baseline,
    "metrics": _metrics,
    "recipe": _recipe,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        _COMMANDS[args.command](args)
    except harness.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        config_problem = exc.stage == "config" or isinstance(exc.cause, harness.ConfigError)
        return EXIT_CONFIG if config_problem else EXIT_NUMERIC
    except (ContractError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
