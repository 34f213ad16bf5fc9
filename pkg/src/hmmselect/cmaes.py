"""Compact CMA-ES minimizer with batched objective evaluation.

Standard (mu/mu_w, lambda) covariance matrix adaptation with rank-one and
rank-mu updates; hyperparameters follow the usual defaults. The objective
receives the whole population as an (lambda, d) array and returns an
(lambda,) array, which lets callers vectorize across candidates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OptimizerDiverged


@dataclass
class CmaResult:
    x_best: np.ndarray
    f_best: float
    evals: int
    budget_exhausted: bool
    diverged: bool = False


def default_popsize(d: int) -> int:
    return 4 + int(3 * np.log(d))


def cma_minimize(
    objective,
    x0: np.ndarray,
    sigma0: float,
    budget: int,
    rng: np.random.Generator,
    popsize: int | None = None,
    f_tol: float = 1e-12,
    stagnation_gens: int = 40,
) -> CmaResult:
    x0 = np.asarray(x0, dtype=float)
    d = x0.shape[0]
    lam = popsize or default_popsize(d)
    mu = lam // 2
    w = np.log((lam + 1) / 2.0) - np.log(np.arange(1, mu + 1))
    w /= w.sum()
    mueff = 1.0 / np.sum(w**2)

    cs = (mueff + 2) / (d + mueff + 5)
    ds = 1 + 2 * max(0.0, np.sqrt((mueff - 1) / (d + 1)) - 1) + cs
    cc = (4 + mueff / d) / (d + 4 + 2 * mueff / d)
    c1 = 2 / ((d + 1.3) ** 2 + mueff)
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((d + 2) ** 2 + mueff))
    chi_d = np.sqrt(d) * (1 - 1 / (4 * d) + 1 / (21 * d**2))

    m = x0.copy()
    sigma = sigma0
    C = np.eye(d)
    ps = np.zeros(d)
    pc = np.zeros(d)

    x_best = x0.copy()
    f_best = np.inf
    evals = 0
    gen = 0
    recent_best: list[float] = []
    any_finite = False

    while evals < budget:
        gen += 1
        # C may drift from symmetry; eigh needs the symmetric part.
        C = 0.5 * (C + C.T)
        eigvals, B = np.linalg.eigh(C)
        eigvals = np.maximum(eigvals, 1e-20)
        D = np.sqrt(eigvals)

        Z = rng.standard_normal((lam, d))
        Y = Z * D @ B.T
        X = m + sigma * Y
        f = np.asarray(objective(X), dtype=float)
        evals += lam
        f = np.where(np.isfinite(f), f, np.inf)
        if np.all(np.isinf(f)):
            if not any_finite and evals >= 3 * lam:
                return CmaResult(x_best, f_best, evals, False, diverged=True)
        else:
            any_finite = True

        order = np.argsort(f)
        if f[order[0]] < f_best:
            f_best = float(f[order[0]])
            x_best = X[order[0]].copy()

        y_w = w @ Y[order[:mu]]
        m = m + sigma * y_w

        # Step-size path in the isotropic coordinates.
        c_inv_sqrt_y = (y_w @ B) / D @ B.T
        ps = (1 - cs) * ps + np.sqrt(cs * (2 - cs) * mueff) * c_inv_sqrt_y
        hsig = float(
            np.linalg.norm(ps) / np.sqrt(1 - (1 - cs) ** (2 * gen)) / chi_d
            < 1.4 + 2 / (d + 1)
        )
        pc = (1 - cc) * pc + hsig * np.sqrt(cc * (2 - cc) * mueff) * y_w

        Ymu = Y[order[:mu]]
        rank_mu = (w[:, None] * Ymu).T @ Ymu
        C = (
            (1 - c1 - cmu) * C
            + c1 * (np.outer(pc, pc) + (1 - hsig) * cc * (2 - cc) * C)
            + cmu * rank_mu
        )
        sigma *= np.exp((cs / ds) * (np.linalg.norm(ps) / chi_d - 1))

        recent_best.append(f_best)
        if len(recent_best) > stagnation_gens:
            recent_best.pop(0)
            if recent_best[0] - recent_best[-1] < f_tol:
                return CmaResult(x_best, f_best, evals, False)
        if sigma * D.max() < 1e-12:
            return CmaResult(x_best, f_best, evals, False)

    return CmaResult(x_best, f_best, evals, True)
