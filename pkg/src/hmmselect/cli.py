"""Command line entry point.

Subcommands: simulate, fit-ls, fit-spectral, calibrate, experiment, figures.
Exit codes: 0 success, 2 configuration error, 3 partial per-replication
failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import least_squares as ls
from . import spectral as sp
from .errors import ConfigError, HmmSelectError
from .harness import (
    ExperimentConfig,
    derive_seed,
    emit_fit_csvs,
    reproduce_figures,
    run_experiment,
    write_csv,
)
from .hmm import ObservationRecord, params_to_json, simulate
from .presets import make_preset


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--seed", type=int, help="base RNG seed (overrides config)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--preset", choices=["easier-beta", "harder-beta"],
                   help="benchmark HMM (overrides config)")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.preset is not None:
        cfg.preset = args.preset
    return cfg


def _obs_from_args(args, cfg: ExperimentConfig) -> ObservationRecord:
    if getattr(args, "input", None):
        return ObservationRecord.from_csv(args.input)
    n = args.n if getattr(args, "n", None) else max(cfg.n_values)
    seed = derive_seed(cfg.seed, n, 0)
    return simulate(cfg.params(), n + cfg.L - 1, seed, L=cfg.L)


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    params = cfg.params()
    n = args.n if args.n else max(cfg.n_values)
    seed = derive_seed(cfg.seed, n, 0)
    obs = simulate(params, n + cfg.L - 1, seed, L=cfg.L)
    args.out.mkdir(parents=True, exist_ok=True)
    obs.to_csv(args.out / "observations.csv")
    params_to_json(params, args.out / "params.json")
    print(f"wrote {args.out / 'observations.csv'} (n={obs.n}, seed={seed})")
    return 0


def cmd_fit_spectral(args) -> int:
    cfg = _load_config(args)
    obs = _obs_from_args(args, cfg)
    moments = sp.compute_moments(obs, cfg.spectral_M, scheme="disjoint")
    report = sp.order_by_regression(moments, cfg.spectral_M_reg, cfg.spectral_tau)
    args.out.mkdir(parents=True, exist_ok=True)
    rows = [
        {
            "index": i + 1,
            "sigma_empirical": float(report.singular_values[i]),
            "regression_prediction": float(report.predictions[i]),
        }
        for i in range(cfg.spectral_M)
    ]
    write_csv(args.out / "spectrum.csv",
              ["index", "sigma_empirical", "regression_prediction"], rows)
    print(f"spectral order estimate: K_hat = {report.K_hat}")
    return 0


def _run_ls(args, cfg: ExperimentConfig):
    obs = _obs_from_args(args, cfg)
    grid = ls.ModelGrid(K_max=cfg.K_max, M_values=cfg.M_values)
    data = ls.ContrastData(obs, grid.M_max)
    fits = ls.run_grid(data, grid, budget=cfg.budget, seed=cfg.seed)
    return obs, fits


def cmd_fit_ls(args) -> int:
    cfg = _load_config(args)
    obs, fits = _run_ls(args, cfg)
    cal = ls.calibrate_dimension_jump(fits, obs.n)
    rho = cfg.rho if cfg.rho is not None else cal.rho_hat
    K, M, _ = ls.select_model(fits, obs.n, rho)
    emit_fit_csvs(fits, cal, obs.n, args.out)
    print(f"least squares selection: K_hat = {K}, M_hat = {M} (rho = {rho:.4g})")
    return 0


def cmd_calibrate(args) -> int:
    cfg = _load_config(args)
    obs, fits = _run_ls(args, cfg)
    jump = ls.calibrate_dimension_jump(fits, obs.n)
    emit_fit_csvs(fits, jump, obs.n, args.out)
    summary = {
        "dimension_jump": {
            "rho_hat": jump.rho_hat,
            "drop_ratio": jump.drop_ratio,
            "no_jump": jump.no_jump,
        }
    }
    try:
        slope = ls.calibrate_slope(fits, obs.n)
        summary["slope"] = {"rho_hat": slope.rho_hat, "r_squared": slope.r_squared}
    except HmmSelectError as err:
        summary["slope"] = {"error": repr(err)}
    with open(args.out / "calibration_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    print(json.dumps(summary, indent=2))
    return 0


def cmd_experiment(args) -> int:
    cfg = _load_config(args)
    rows, aggregate, n_failures = run_experiment(cfg, args.out, threads=args.threads)
    for agg in aggregate:
        print(f"n={agg['n']} method={agg['method']} "
              f"P(K_hat=K*)={agg['p_correct']:.2f} ({agg['count']} reps)")
    return 3 if n_failures else 0


def cmd_figures(args) -> int:
    cfg = _load_config(args)
    written = reproduce_figures(cfg, args.out, threads=args.threads)
    print("wrote " + ", ".join(written))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hmmselect")
    sub = parser.add_subparsers(dest="command", required=True)

    specs = {
        "simulate": cmd_simulate,
        "fit-ls": cmd_fit_ls,
        "fit-spectral": cmd_fit_spectral,
        "calibrate": cmd_calibrate,
        "experiment": cmd_experiment,
        "figures": cmd_figures,
    }
    for name, func in specs.items():
        p = sub.add_parser(name)
        _common_flags(p)
        if name in ("simulate", "fit-ls", "fit-spectral", "calibrate"):
            p.add_argument("--n", type=int, help="number of windows to simulate")
        if name in ("fit-ls", "fit-spectral", "calibrate"):
            p.add_argument("--input", type=Path, help="observations CSV from `simulate`")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except HmmSelectError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
