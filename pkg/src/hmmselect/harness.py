"""Experiment runner: simulation campaigns, both pipelines, CSV emission."""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import least_squares as ls
from . import spectral as sp
from .basis import coefficient_matrix
from .errors import ConfigError
from .hmm import HmmParams, ObservationRecord, d_perm, simulate
from .presets import make_preset

FLOAT_FMT = "{:.12g}"


@dataclass
class ExperimentConfig:
    preset: str = "easier-beta"
    n_values: tuple = (3000,)
    replications: int = 5
    method: str = "both"  # ls | spectral | both
    K_max: int = 5
    M_values: tuple = tuple(range(3, 26, 2))
    spectral_M: int = 40
    spectral_M_reg: int = 35
    spectral_tau: float = 1.3
    spectral_M_params: int = 20
    budget: int = ls.DEFAULT_BUDGET
    calibration: str = "jump"
    rho: float | None = None
    seed: int = 0
    L: int = 3

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if any(n < self.L for n in self.n_values):
            raise ConfigError("all n values must be at least L")
        if self.method not in ("ls", "spectral", "both"):
            raise ConfigError(f"unknown method {self.method!r}")
        self.n_values = tuple(int(n) for n in self.n_values)
        self.M_values = tuple(int(m) for m in self.M_values)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("n_values", "M_values"):
            if key in doc:
                doc[key] = tuple(doc[key])
        try:
            return cls(**doc)
        except TypeError as err:
            raise ConfigError(str(err)) from err

    def params(self) -> HmmParams:
        return make_preset(self.preset)


def derive_seed(base: int, n: int, rep: int) -> int:
    """Deterministic per-cell seed, disjoint across (n, rep)."""
    return int(np.random.SeedSequence([base, n, rep]).generate_state(1)[0])


def _truth_triple(params: HmmParams, M: int):
    return params.stationary, params.transition, coefficient_matrix(params.emissions, M)


def run_replication(config: ExperimentConfig, n: int, rep: int) -> list[dict]:
    """One (n, replication) cell; returns one row per requested method."""
    params = config.params()
    seed = derive_seed(config.seed, n, rep)
    obs = simulate(params, n + config.L - 1, seed, L=config.L)
    rows = []

    if config.method in ("spectral", "both"):
        t0 = time.perf_counter()
        row = {"n": n, "replication": rep, "method": "spectral", "seed": seed}
        try:
            moments = sp.compute_moments(obs, config.spectral_M, scheme="disjoint")
            report = sp.order_by_regression(moments, config.spectral_M_reg, config.spectral_tau)
            row["K_hat"] = report.K_hat
            row["M_hat"] = ""
            row["d_perm_to_truth"] = ""
            if report.K_hat == params.K:
                mom_p = sp.compute_moments(obs, config.spectral_M_params, scheme="disjoint")
                est = sp.spectral_params_from_moments(mom_p, report.K_hat, seed)
                truth = _truth_triple(params, config.spectral_M_params)
                row["d_perm_to_truth"] = d_perm(
                    (est.pi_hat, est.Q_hat, est.O_hat), truth
                )
            row["error"] = ""
        except Exception as err:  # per-replication failures become rows
            row.update(K_hat="", M_hat="", d_perm_to_truth="", error=repr(err))
        row["runtime_seconds"] = time.perf_counter() - t0
        rows.append(row)

    if config.method in ("ls", "both"):
        t0 = time.perf_counter()
        row = {"n": n, "replication": rep, "method": "ls", "seed": seed}
        try:
            grid = ls.ModelGrid(K_max=config.K_max, M_values=config.M_values)
            data = ls.ContrastData(obs, grid.M_max)
            fits = ls.run_grid(data, grid, budget=config.budget, seed=seed)
            if config.rho is not None:
                rho_hat = config.rho
            elif config.calibration == "slope":
                rho_hat = ls.calibrate_slope(fits, obs.n).rho_hat
            else:
                rho_hat = ls.calibrate_dimension_jump(fits, obs.n).rho_hat
            K, M, fit = ls.select_model(fits, obs.n, rho_hat)
            row["K_hat"] = K
            row["M_hat"] = M
            row["d_perm_to_truth"] = ""
            if K == params.K:
                truth = _truth_triple(params, M)
                row["d_perm_to_truth"] = d_perm(
                    (fit.model.pi, fit.model.Q, fit.model.coeffs), truth
                )
            row["error"] = ""
        except Exception as err:
            row.update(K_hat="", M_hat="", d_perm_to_truth="", error=repr(err))
        row["runtime_seconds"] = time.perf_counter() - t0
        rows.append(row)

    return rows


def _fmt(v) -> str:
    if isinstance(v, float):
        return FLOAT_FMT.format(v)
    return str(v)


def write_csv(path, header: list[str], rows: list[dict]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row.get(h, "")) for h in header) + "\n")


RESULT_HEADER = [
    "n", "replication", "method", "K_hat", "M_hat",
    "d_perm_to_truth", "runtime_seconds", "seed", "error",
]


def run_experiment(config: ExperimentConfig, out_dir, threads: int = 1):
    """Full campaign over (n, replication); returns (rows, aggregate, n_failures).

    Replications run in separate processes with disjoint derived seeds;
    failures never abort the campaign.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(n, rep) for n in config.n_values for rep in range(config.replications)]

    rows: list[dict] = []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(run_replication, config, n, rep) for n, rep in tasks]
            for fut in futures:
                rows.extend(fut.result())
    else:
        for n, rep in tasks:
            rows.extend(run_replication(config, n, rep))

    rows.sort(key=lambda r: (r["n"], r["replication"], r["method"]))
    write_csv(out / "results.csv", RESULT_HEADER, rows)

    aggregate = []
    params_K = config.params().K
    for n in config.n_values:
        for method in ("ls", "spectral"):
            sub = [r for r in rows if r["n"] == n and r["method"] == method]
            if not sub:
                continue
            hits = sum(1 for r in sub if r["K_hat"] == params_K)
            aggregate.append(
                {"n": n, "method": method, "p_correct": hits / len(sub), "count": len(sub)}
            )
    write_csv(out / "aggregate.csv", ["n", "method", "p_correct", "count"], aggregate)

    n_failures = sum(1 for r in rows if r["error"])
    return rows, aggregate, n_failures


def emit_fit_csvs(fits: dict, cal_jump, n: int, out_dir) -> None:
    """fits.csv and calibration.csv for one LS run (figure source data)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fit_rows = [
        {
            "K": K, "M": M,
            "gamma": fits[(K, M)].gamma,
            "pen_shape": ls.pen_shape(n, M, K),
            "evals": fits[(K, M)].optimizer_evals,
            "init_source": fits[(K, M)].init_source,
        }
        for (K, M) in sorted(fits)
    ]
    write_csv(out / "fits.csv", ["K", "M", "gamma", "pen_shape", "evals", "init_source"], fit_rows)

    cal_rows = [
        {
            "rho": rho,
            "K_hat": sel[0],
            "M_hat": sel[1],
            "Comp": comp,
        }
        for rho, sel, comp in zip(
            cal_jump.rho_grid, cal_jump.selections, cal_jump.complexity_curve
        )
    ]
    write_csv(out / "calibration.csv", ["rho", "K_hat", "M_hat", "Comp"], cal_rows)


def emit_spectrum_csv(obs: ObservationRecord, params: HmmParams, cfg: ExperimentConfig, out_dir) -> None:
    """spectrum.csv: empirical vs theoretical singular values and the noise line."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    moments = sp.compute_moments(obs, cfg.spectral_M, scheme="disjoint")
    report = sp.order_by_regression(moments, cfg.spectral_M_reg, cfg.spectral_tau)
    sv_theo = np.linalg.svd(sp.theoretical_N(params, cfg.spectral_M), compute_uv=False)
    rows = [
        {
            "index": i + 1,
            "sigma_empirical": float(report.singular_values[i]),
            "sigma_theoretical": float(sv_theo[i]),
            "regression_prediction": float(report.predictions[i]),
        }
        for i in range(cfg.spectral_M)
    ]
    write_csv(
        out / "spectrum.csv",
        ["index", "sigma_empirical", "sigma_theoretical", "regression_prediction"],
        rows,
    )


def reproduce_figures(config: ExperimentConfig, out_dir, threads: int = 1) -> list[str]:
    """Emit the figure source CSVs for the largest configured n, one replication."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = config.params()
    n = max(config.n_values)
    seed = derive_seed(config.seed, n, 0)
    obs = simulate(params, n + config.L - 1, seed, L=config.L)

    written = []
    emit_spectrum_csv(obs, params, config, out)
    written.append("spectrum.csv")

    if config.method in ("ls", "both"):
        grid = ls.ModelGrid(K_max=config.K_max, M_values=config.M_values)
        data = ls.ContrastData(obs, grid.M_max)
        fits = ls.run_grid(data, grid, budget=config.budget, seed=seed)
        cal = ls.calibrate_dimension_jump(fits, obs.n)
        emit_fit_csvs(fits, cal, obs.n, out)
        written.extend(["fits.csv", "calibration.csv"])
    return written
