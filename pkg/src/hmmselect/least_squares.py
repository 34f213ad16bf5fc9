"""Penalized least-squares estimation over the (K, M) model grid.

The contrast gamma_n is minimized cell by cell with CMA-ES over an
unconstrained parametrization (row-wise softmax logits for the transition
matrix, free emission coefficients rescaled onto the L2 ball). Initial points
chain across the grid: state duplication seeds (K, M) from (K-1, M) and
zero-padding seeds (K, M) from (K, M_prev). The penalty constant is
calibrated by the dimension-jump or the slope heuristic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cmaes import CmaResult, cma_minimize, default_popsize
from .density import (
    CandidateModel,
    basis_matrix,
    mean_from_tensor,
    norm_sq,
    triple_moment_tensor,
    window_means,
)
from .errors import (
    EmptyGrid,
    IndexOutOfRange,
    InvalidParams,
    NegativeSlope,
    OptimizerDiverged,
)
from .hmm import DEFAULT_COEFF_NORM_BOUND, ObservationRecord, stationary_distribution

DEFAULT_BUDGET = 20_000
DEFAULT_SIGMA0 = 0.3
DEFAULT_RESTARTS = 2
LOGIT_FLOOR = -30.0


def pen_shape(n: int, M: int, K: int) -> float:
    """Penalty profile (MK + K^2 - 1) log(n) / n; its constant is calibrated."""
    return (M * K + K * K - 1) * math.log(n) / n


def complexity(M: int, K: int) -> int:
    return M * K + K * K - 1


@dataclass(frozen=True)
class ModelGrid:
    K_max: int = 5
    M_values: tuple = tuple(range(3, 26, 2))

    def __post_init__(self):
        if self.K_max < 1 or self.K_max > 8:
            raise InvalidParams("K_max must be in 1..8")
        object.__setattr__(self, "M_values", tuple(sorted(set(self.M_values))))
        if not self.M_values or self.M_values[0] < 1:
            raise InvalidParams("M_values must be positive")

    @property
    def M_max(self) -> int:
        return self.M_values[-1]


@dataclass
class ModelFit:
    K: int
    M: int
    gamma: float
    model: CandidateModel
    optimizer_evals: int
    init_source: str
    budget_exhausted: bool = False


@dataclass
class PenaltyCalibration:
    rho_grid: np.ndarray
    selections: list  # per-rho (K_hat, M_hat)
    complexity_curve: np.ndarray
    method: str
    rho_hat: float
    drop_ratio: float | None = None
    no_jump: bool = False
    slope: float | None = None
    r_squared: float | None = None


# ---------------------------------------------------------------------------
# Unconstrained parametrization


def encode(model: CandidateModel) -> np.ndarray:
    """Model -> optimizer coordinates; exact inverse of decode away from the
    logit floor."""
    K = model.K
    parts = []
    if K > 1:
        logQ = np.log(np.maximum(model.Q, np.exp(LOGIT_FLOOR)))
        logits = logQ - np.diag(logQ)[:, None]  # gauge: diagonal logit = 0
        off = logits[~np.eye(K, dtype=bool)]
        parts.append(off)
    parts.append(model.coeffs.reshape(-1))
    return np.concatenate(parts)


def _decode_batch(X: np.ndarray, K: int, M: int, norm_bound: float):
    """Batch of optimizer coordinates -> (pi, Q, O) arrays.

    pi is recomputed as the stationary law of Q for every candidate
    (batched normal-equation solve).
    """
    n_cand = X.shape[0]
    nq = K * (K - 1)
    if K == 1:
        Q = np.ones((n_cand, 1, 1))
        pi = np.ones((n_cand, 1))
    else:
        logits = np.zeros((n_cand, K, K))
        off_mask = ~np.eye(K, dtype=bool)
        logits[:, off_mask] = np.clip(X[:, :nq], LOGIT_FLOOR, -LOGIT_FLOOR)
        logits -= logits.max(axis=2, keepdims=True)
        Q = np.exp(logits)
        Q /= Q.sum(axis=2, keepdims=True)
        pi = _stationary_batch(Q)

    O = X[:, nq:].reshape(n_cand, M, K)
    norms = np.linalg.norm(O, axis=1)  # (n_cand, K)
    scale = np.minimum(1.0, norm_bound / np.maximum(norms, 1e-300))
    O = O * scale[:, None, :]
    return pi, Q, O


def _stationary_batch(Q: np.ndarray) -> np.ndarray:
    n_cand, K, _ = Q.shape
    A = Q.transpose(0, 2, 1) - np.eye(K)  # (Q^T - I)
    A = np.concatenate([A, np.ones((n_cand, 1, K))], axis=1)
    ATA = A.transpose(0, 2, 1) @ A
    ATb = A[:, -1, :]  # A^T e_last since b = (0, ..., 0, 1)
    try:
        pi = np.linalg.solve(ATA, ATb[..., None])[..., 0]
    except np.linalg.LinAlgError:
        pi = np.full((n_cand, K), np.nan)
        for i in range(n_cand):
            try:
                pi[i] = np.linalg.lstsq(ATA[i], ATb[i], rcond=None)[0]
            except np.linalg.LinAlgError:
                pass
    pi = np.clip(pi, 0.0, None)
    s = pi.sum(axis=1, keepdims=True)
    pi = np.where(s > 0, pi / np.maximum(s, 1e-300), 1.0 / K)
    return pi


class ContrastData:
    """Per-observation-set precomputations shared by every grid cell.

    For L = 3 the empirical mean of the contrast is an exact contraction of
    the triple-moment tensor, so optimizer evaluations cost O(M^3 K) flops
    independent of n. Other window lengths fall back to the direct
    window sweep.
    """

    def __init__(self, obs: ObservationRecord, M_max: int):
        self.obs = obs
        self.M_max = M_max
        self.L = obs.L
        self.n = obs.n
        self.Phi = basis_matrix(obs, M_max)
        self.tensor = triple_moment_tensor(obs, M_max) if obs.L == 3 else None

    def gamma_model(self, model: CandidateModel) -> float:
        """Exact contrast of one model (no encode/decode round trip)."""
        ns = norm_sq(model)
        if self.tensor is not None:
            mean = mean_from_tensor(self.tensor, model)
        else:
            mean = window_means(self.Phi, model, self.n)
        return ns - 2.0 * mean

    def gamma_batch(self, pi, Q, O, L: int) -> np.ndarray:
        G = O.transpose(0, 2, 1) @ O
        T = pi[:, :, None] * pi[:, None, :] * G
        for _ in range(L - 1):
            T = (Q.transpose(0, 2, 1) @ T @ Q) * G
        norms = T.sum(axis=(1, 2))

        n_cand, M = O.shape[0], O.shape[1]
        if self.tensor is not None:
            sub = self.tensor[:M, :M, :M]
            W = np.einsum("abc,naj->njbc", sub, O, optimize=True)
            W = np.einsum("njbc,nbk->njkc", W, O, optimize=True)
            W = np.einsum("njkc,ncl->njkl", W, O, optimize=True)
            means = np.einsum("nj,njk,nkl,njkl->n", pi, Q, Q, W, optimize=True)
        else:
            means = np.empty(n_cand)
            K = Q.shape[1]
            for i in range(n_cand):
                F = self.Phi[:, :M] @ O[i]
                a = pi[i] * F[: self.n]
                for j in range(1, L):
                    a = (a @ Q[i]) * F[j : j + self.n]
                means[i] = a.sum(axis=1).mean()
        return norms - 2.0 * means


def uniform_model(M: int, L: int = 3, norm_bound: float = DEFAULT_COEFF_NORM_BOUND) -> CandidateModel:
    """Single-state HMM with the uniform emission density."""
    coeffs = np.zeros((M, 1))
    coeffs[0, 0] = 1.0
    return CandidateModel(
        Q=np.ones((1, 1)), pi=np.ones(1), coeffs=coeffs, L=L, norm_bound=norm_bound
    )


def duplicate_state(model: CandidateModel, state_index: int) -> CandidateModel:
    """Split one hidden state into two copies without changing the observed law.

    Inbound probability from any other state is halved between the copies,
    both copies keep the original outbound row and emission, and the two
    copies exchange half of the original self-transition mass.
    """
    K = model.K
    if not 0 <= state_index < K:
        raise IndexOutOfRange(f"state index {state_index} out of range for K={K}")
    i = state_index
    # New ordering: copies at positions i and i+1, other states shifted.
    old_of_new = list(range(0, i + 1)) + list(range(i, K))

    Qn = np.empty((K + 1, K + 1))
    for s_new, s_old in enumerate(old_of_new):
        for t_new, t_old in enumerate(old_of_new):
            if t_old == i:
                Qn[s_new, t_new] = 0.5 * model.Q[s_old, i]
            else:
                Qn[s_new, t_new] = model.Q[s_old, t_old]

    pin = np.array([model.pi[s] for s in old_of_new])
    pin[i] *= 0.5
    pin[i + 1] *= 0.5
    coeffs = model.coeffs[:, old_of_new]
    return CandidateModel(Q=Qn, pi=pin, coeffs=coeffs, L=model.L, norm_bound=model.norm_bound)


def merge_states(model: CandidateModel, i: int, j: int) -> CandidateModel:
    """Collapse states ``i`` and ``j`` into one (approximate inverse of
    duplication).

    The merged outbound row and emission are stationary-weighted averages,
    inbound mass is summed, and the stationary law is recomputed.
    """
    K = model.K
    if not (0 <= i < K and 0 <= j < K) or i == j:
        raise IndexOutOfRange(f"cannot merge states {i}, {j} for K={K}")
    i, j = min(i, j), max(i, j)
    w = model.pi[i] + model.pi[j]
    wi = model.pi[i] / w if w > 0 else 0.5
    Q = model.Q.copy()
    Q[i] = wi * Q[i] + (1.0 - wi) * Q[j]
    Q[:, i] += Q[:, j]
    keep = [s for s in range(K) if s != j]
    Q = Q[np.ix_(keep, keep)]
    Q /= Q.sum(axis=1, keepdims=True)
    coeffs = model.coeffs.copy()
    coeffs[:, i] = wi * coeffs[:, i] + (1.0 - wi) * coeffs[:, j]
    coeffs = coeffs[:, keep]
    return CandidateModel(
        Q=Q, pi=stationary_distribution(Q), coeffs=coeffs,
        L=model.L, norm_bound=model.norm_bound,
    )


def truncate_coeffs(model: CandidateModel, M_new: int) -> CandidateModel:
    """Drop the trailing basis coefficients (inverse of zero padding)."""
    if not 1 <= M_new <= model.M:
        raise InvalidParams("can only truncate to a smaller positive M")
    return CandidateModel(
        Q=model.Q, pi=model.pi, coeffs=model.coeffs[:M_new],
        L=model.L, norm_bound=model.norm_bound,
    )


def zero_pad(model: CandidateModel, M_new: int) -> CandidateModel:
    if M_new < model.M:
        raise InvalidParams("can only pad to a larger M")
    coeffs = np.vstack([model.coeffs, np.zeros((M_new - model.M, model.K))])
    return CandidateModel(
        Q=model.Q, pi=model.pi, coeffs=coeffs, L=model.L, norm_bound=model.norm_bound
    )


def fit_cell(
    data: ContrastData,
    K: int,
    M: int,
    init_points: list,
    budget: int = DEFAULT_BUDGET,
    seed=0,
    sigma0: float = DEFAULT_SIGMA0,
    restarts: int = DEFAULT_RESTARTS,
    norm_bound: float = DEFAULT_COEFF_NORM_BOUND,
) -> ModelFit:
    """Minimize gamma_n over S_{K,M} from several initial points.

    Each init is ("label", model) or ("label", model, free_idx); when
    free_idx is given, a low-dimensional pre-phase optimizes only those
    coordinates (everything else pinned to the init) before the full-space
    runs. The returned fit is never worse than any initial point: each
    init's exact contrast participates in the final best-of.
    """
    if K < 1 or M < 1 or not init_points:
        raise InvalidParams("need K >= 1, M >= 1 and at least one init point")
    L = data.L
    rng = np.random.default_rng(seed)

    def objective(X):
        pi, Q, O = _decode_batch(np.atleast_2d(X), K, M, norm_bound)
        return data.gamma_batch(pi, Q, O, L)

    best_gamma = np.inf
    best_model = None
    best_source = ""
    total_evals = 0
    exhausted = False
    per_init = max(budget // len(init_points), default_popsize(K * (K - 1) + M * K) * 3)

    for idx, item in enumerate(init_points):
        source, init = item[0], item[1]
        free_idx = item[2] if len(item) > 2 else None
        g0 = data.gamma_model(init)
        if not np.isfinite(g0):
            raise OptimizerDiverged(f"non-finite contrast at init {source}")
        if g0 < best_gamma:
            best_gamma, best_model, best_source = g0, init, source

        x0 = encode(init)
        used = 0
        x_start = x0

        def adopt(x_full, f_val, label):
            nonlocal best_gamma, best_model, best_source
            if f_val < best_gamma:
                pi, Q, O = _decode_batch(x_full[None, :], K, M, norm_bound)
                best_model = CandidateModel(
                    Q=Q[0], pi=pi[0], coeffs=O[0], L=L, norm_bound=norm_bound
                )
                best_gamma = float(f_val)
                best_source = label

        # Subspace pre-phase: full-dimensional search cannot resolve the
        # small contrast gains of large models, so newly freed coordinates
        # are optimized alone first.
        if free_idx is not None and 0 < len(free_idx) < x0.size:
            alloc = int(0.35 * per_init)

            def sub_objective(Xs, pinned=x0, idx=free_idx):
                Xs = np.atleast_2d(Xs)
                Xf = np.tile(pinned, (Xs.shape[0], 1))
                Xf[:, idx] = Xs
                return objective(Xf)

            res = cma_minimize(sub_objective, x0[free_idx], sigma0, alloc, rng)
            used += res.evals
            if np.isfinite(res.f_best):
                x_start = x0.copy()
                x_start[free_idx] = res.x_best
                adopt(x_start, res.f_best, source)
            if res.budget_exhausted:
                exhausted = True

        # Exploration run at sigma0, then refinement runs at shrinking step
        # sizes from the best point found; refinement is what resolves the
        # small contrast gains of large models.
        remaining = max(per_init - used, 0)
        schedule = [sigma0] + [sigma0 / 10**(r + 1) for r in range(restarts)]
        share = [0.6] + [0.4 / max(restarts, 1)] * restarts
        for s0, frac in zip(schedule, share):
            alloc = int(frac * remaining)
            if alloc <= 0 or used >= per_init:
                break
            res: CmaResult = cma_minimize(
                objective, x_start, s0, min(alloc, per_init - used), rng
            )
            used += res.evals
            if res.diverged:
                raise OptimizerDiverged("objective non-finite on the whole population")
            adopt(res.x_best, res.f_best, source)
            if res.budget_exhausted:
                exhausted = True
            if np.isfinite(res.f_best):
                x_start = res.x_best
        total_evals += used

    return ModelFit(
        K=K,
        M=M,
        gamma=float(best_gamma),
        model=best_model,
        optimizer_evals=total_evals,
        init_source=best_source,
        budget_exhausted=exhausted,
    )


def _duplicate_free_coords(K: int, M: int, j: int) -> np.ndarray:
    """Optimizer coordinates owned by state j in a (K, M) model: its logit
    row and column plus its emission-coefficient column. Used as the
    symmetry-breaking subspace after a state duplication."""
    off = np.flatnonzero(~np.eye(K, dtype=bool).reshape(-1))
    pos = {flat: p for p, flat in enumerate(off)}
    idx = []
    for c in range(K):
        if c != j:
            idx.append(pos[j * K + c])
            idx.append(pos[c * K + j])
    nq = K * (K - 1)
    idx.extend(nq + np.arange(M) * K + j)
    return np.array(sorted(idx))


def run_grid(
    data: ContrastData,
    grid: ModelGrid,
    budget: int = DEFAULT_BUDGET,
    seed=0,
    sigma0: float = DEFAULT_SIGMA0,
    norm_bound: float = DEFAULT_COEFF_NORM_BOUND,
) -> dict:
    """Sweep the full (K, M) grid with chained initializations.

    Returns {(K, M): ModelFit}. After the sweep, gamma is nonincreasing in K
    (state duplication) and in M (zero padding); a repair pass replaces any
    cell beaten by one of its embedded smaller fits.
    """
    fits: dict = {}
    ss = np.random.SeedSequence(seed)
    cell_seeds = {}
    for K in range(1, grid.K_max + 1):
        for M in grid.M_values:
            cell_seeds[(K, M)] = None
    children = ss.spawn(len(cell_seeds))
    for key, child in zip(sorted(cell_seeds), children):
        cell_seeds[key] = child

    for K in range(1, grid.K_max + 1):
        for j, M in enumerate(grid.M_values):
            inits = []
            if K == 1:
                inits.append(("uniform", uniform_model(M, data.L, norm_bound)))
            else:
                parent = fits[(K - 1, M)].model
                for s in range(K - 1):
                    free = _duplicate_free_coords(K, M, s + 1)
                    inits.append((f"duplicate({s})", duplicate_state(parent, s), free))
            if j > 0:
                M_prev = grid.M_values[j - 1]
                prev = fits[(K, M_prev)].model
                new_rows = K * (K - 1) + np.arange(M_prev * K, M * K)
                inits.append((f"pad(M={M_prev})", zero_pad(prev, M), new_rows))
            fits[(K, M)] = fit_cell(
                data,
                K,
                M,
                inits,
                budget=budget,
                seed=cell_seeds[(K, M)],
                sigma0=sigma0,
                norm_bound=norm_bound,
            )

    _repair_monotonicity(fits, grid)
    return fits


def _repair_monotonicity(fits: dict, grid: ModelGrid) -> None:
    for K in range(1, grid.K_max + 1):
        for j, M in enumerate(grid.M_values):
            fit = fits[(K, M)]
            if K > 1:
                smaller = fits[(K - 1, M)]
                if smaller.gamma < fit.gamma:
                    model = duplicate_state(smaller.model, 0)
                    fits[(K, M)] = ModelFit(
                        K, M, smaller.gamma, model, fit.optimizer_evals, "repair(K-1)"
                    )
                    fit = fits[(K, M)]
            if j > 0:
                smaller = fits[(K, grid.M_values[j - 1])]
                if smaller.gamma < fit.gamma:
                    model = zero_pad(smaller.model, M)
                    fits[(K, M)] = ModelFit(
                        K, M, smaller.gamma, model, fit.optimizer_evals, "repair(M-1)"
                    )


def polish_grid(
    data: ContrastData,
    grid: ModelGrid,
    fits: dict,
    budget: int = DEFAULT_BUDGET,
    seed=0,
    sigma0: float = 0.05,
    restarts: int = 1,
    norm_bound: float = DEFAULT_COEFF_NORM_BOUND,
) -> dict:
    """Backward refinement sweep over an existing grid of fits.

    Cells are revisited with K and M descending, re-optimized locally from
    the cell's own optimum plus candidates carried down from neighbours
    that tend to be better converged: coefficient truncation of the
    next-larger M and the best state merge of the (K+1, M) fit. A cell is
    replaced only when the refit improves it, so the sweep never hurts.
    """
    fits = dict(fits)
    ss = np.random.SeedSequence(seed)
    cell_seeds = dict(zip(sorted(fits), ss.spawn(len(fits))))
    for K in range(grid.K_max, 0, -1):
        for j in reversed(range(len(grid.M_values))):
            M = grid.M_values[j]
            current = fits[(K, M)]
            inits = [("polish(self)", current.model)]
            if j + 1 < len(grid.M_values):
                bigger = fits[(K, grid.M_values[j + 1])].model
                inits.append(("polish(truncate)", truncate_coeffs(bigger, M)))
            if K < grid.K_max:
                parent = fits[(K + 1, M)].model
                merged = min(
                    (
                        merge_states(parent, a, b)
                        for a in range(K + 1)
                        for b in range(a + 1, K + 1)
                    ),
                    key=data.gamma_model,
                )
                inits.append(("polish(merge)", merged))
            refit = fit_cell(
                data, K, M, inits,
                budget=budget, seed=cell_seeds[(K, M)],
                sigma0=sigma0, restarts=restarts, norm_bound=norm_bound,
            )
            if refit.gamma < current.gamma:
                fits[(K, M)] = refit
    _repair_monotonicity(fits, grid)
    return fits


def select_model(fits: dict, n: int, rho: float, shape=pen_shape):
    """Argmin of gamma + rho * pen_shape; ties go to the smallest complexity,
    then the smallest K."""
    if not fits:
        raise EmptyGrid("no fits to select from")
    best_key = min(
        fits,
        key=lambda km: (
            fits[km].gamma + rho * shape(n, km[1], km[0]),
            complexity(km[1], km[0]),
            km[0],
        ),
    )
    K, M = best_key
    return K, M, fits[best_key]


def default_rho_grid(n: int, size: int = 64) -> np.ndarray:
    scale = 1.0 / math.log(n)
    return np.geomspace(1e-3 * scale, 1e3 * scale, size)


def calibrate_dimension_jump(
    fits: dict,
    n: int,
    rho_grid: np.ndarray | None = None,
    min_drop_ratio: float = 3.0,
) -> PenaltyCalibration:
    """Locate the penalty constant at which the selected complexity collapses.

    rho_hat = 2 * rho_jump where rho_jump sits at the largest single-step
    drop of Comp(rho) = M K + K (K - 1) over a log-spaced rho grid. A drop
    ratio below ``min_drop_ratio`` sets the no-jump flag instead of aborting.
    """
    if rho_grid is None:
        rho_grid = default_rho_grid(n)
    rho_grid = np.asarray(rho_grid, float)
    if rho_grid.size < 20:
        raise InvalidParams("need at least 20 rho grid points")

    selections = []
    comp = np.empty(rho_grid.size)
    for i, rho in enumerate(rho_grid):
        K, M, _ = select_model(fits, n, rho)
        selections.append((K, M))
        comp[i] = M * K + K * (K - 1)

    drops = comp[:-1] - comp[1:]
    i_jump = int(np.argmax(drops))
    if drops[i_jump] <= 0:
        return PenaltyCalibration(
            rho_grid, selections, comp, "dimension_jump",
            rho_hat=2.0 * rho_grid[-1], drop_ratio=1.0, no_jump=True,
        )
    rho_jump = rho_grid[i_jump + 1]
    ratio = comp[i_jump] / max(comp[i_jump + 1], 1.0)
    return PenaltyCalibration(
        rho_grid,
        selections,
        comp,
        "dimension_jump",
        rho_hat=2.0 * rho_jump,
        drop_ratio=float(ratio),
        no_jump=bool(ratio < min_drop_ratio),
    )


def calibrate_slope(fits: dict, n: int, shape=pen_shape) -> PenaltyCalibration:
    """Estimate the minimal penalty constant from the slope of -gamma against
    pen_shape over the large-model region (top tercile of pen_shape)."""
    keys = list(fits)
    pens = np.array([shape(n, M, K) for K, M in keys])
    gammas = np.array([fits[km].gamma for km in keys])
    cutoff = np.quantile(pens, 2.0 / 3.0)
    region = pens >= cutoff
    if region.sum() < 10:
        raise InvalidParams("need at least 10 fits in the large-model region")

    x, y = pens[region], -gammas[region]
    A = np.column_stack([np.ones(x.size), x])
    (intercept, slope), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ np.array([intercept, slope])
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 0.0
    if slope <= 0:
        raise NegativeSlope(f"slope {slope:.3g} is nonpositive")

    return PenaltyCalibration(
        rho_grid=np.array([]),
        selections=[],
        complexity_curve=np.array([]),
        method="slope",
        rho_hat=2.0 * float(slope),
        slope=float(slope),
        r_squared=float(r2),
    )
