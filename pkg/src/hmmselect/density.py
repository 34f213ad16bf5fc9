"""L-window product densities and the empirical least-squares contrast."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import TrigBasis
from .errors import DimensionMismatch, InvalidParams, OutOfDomain
from .hmm import (
    DEFAULT_COEFF_NORM_BOUND,
    ObservationRecord,
    validate_probability_vector,
    validate_transition,
)


@dataclass(frozen=True)
class CandidateModel:
    """One point of the model S_{K,M}: a K-state HMM whose emission densities
    live in the span of the first M basis functions.

    ``coeffs`` is M x K, column k holding the coefficients of emission k.
    ``pi`` must be the stationary law of ``Q``.
    """

    Q: np.ndarray
    pi: np.ndarray
    coeffs: np.ndarray
    L: int = 3
    norm_bound: float = DEFAULT_COEFF_NORM_BOUND

    def __post_init__(self):
        Q = validate_transition(self.Q)
        pi = validate_probability_vector(self.pi)
        C = np.asarray(self.coeffs, dtype=float)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "coeffs", C)
        if C.ndim != 2 or C.shape[1] != Q.shape[0]:
            raise InvalidParams("coeffs must be an M x K matrix")
        if np.max(np.abs(pi @ Q - pi)) > 1e-8:
            raise InvalidParams("pi is not stationary for Q")
        if np.any(np.linalg.norm(C, axis=0) > self.norm_bound + 1e-9):
            raise InvalidParams("emission coefficient norm exceeds the bound")

    @property
    def K(self) -> int:
        return self.Q.shape[0]

    @property
    def M(self) -> int:
        return self.coeffs.shape[0]


@dataclass(frozen=True)
class ContrastEvaluation:
    norm_sq: float
    empirical_mean: float

    @property
    def gamma(self) -> float:
        return self.norm_sq - 2.0 * self.empirical_mean


def norm_sq(model: CandidateModel) -> float:
    """Squared L2 norm of the L-window density.

    Uses the stage-wise contraction T_1 = (pi pi^T) * G,
    T_{i+1} = (Q^T T_i Q) * G with G the Gram matrix of the emission
    coefficients, so the cost is O(L K^3) instead of K^{2L} enumeration.
    """
    if model.L < 2:
        raise InvalidParams("window length must be at least 2")
    G = model.coeffs.T @ model.coeffs
    T = np.outer(model.pi, model.pi) * G
    for _ in range(model.L - 1):
        T = (model.Q.T @ T @ model.Q) * G
    return float(T.sum())


def norm_sq_bruteforce(model: CandidateModel) -> float:
    """K^{2L} enumeration of the same quantity; test oracle only."""
    import itertools

    G = model.coeffs.T @ model.coeffs
    total = 0.0
    K, L = model.K, model.L
    for k in itertools.product(range(K), repeat=L):
        wk = model.pi[k[0]] * np.prod([model.Q[k[i - 1], k[i]] for i in range(1, L)])
        for kp in itertools.product(range(K), repeat=L):
            wkp = model.pi[kp[0]] * np.prod([model.Q[kp[i - 1], kp[i]] for i in range(1, L)])
            total += wk * wkp * np.prod([G[k[i], kp[i]] for i in range(L)])
    return float(total)


def eval_window(model: CandidateModel, z) -> float:
    """Density of one window z = (z_1, ..., z_L) via the forward recursion."""
    z = np.asarray(z, dtype=float)
    if z.shape != (model.L,):
        raise DimensionMismatch(f"window must have length L={model.L}")
    if np.any(z < 0) or np.any(z > 1):
        raise OutOfDomain("window coordinates must lie in [0, 1]")
    F = TrigBasis(model.M).evaluate(z) @ model.coeffs  # (L, K), F[i, k] = f_k(z_i)
    a = model.pi * F[0]
    for i in range(1, model.L):
        a = (a @ model.Q) * F[i]
    return float(a.sum())


def basis_matrix(obs: ObservationRecord, M: int) -> np.ndarray:
    """(n + L - 1) x M matrix of basis values at the raw observations."""
    return TrigBasis(M).evaluate(obs.values)


def window_means(Phi: np.ndarray, model: CandidateModel, n: int) -> float:
    """(1/n) sum_s t(Z_s) for overlapping stride-1 windows, vectorized."""
    F = Phi[:, : model.M] @ model.coeffs  # (n+L-1, K)
    a = model.pi * F[:n]
    for i in range(1, model.L):
        a = (a @ model.Q) * F[i : i + n]
    return float(a.sum(axis=1).mean())


def gamma_n(model: CandidateModel, obs: ObservationRecord) -> ContrastEvaluation:
    """Empirical contrast gamma_n(t) = ||t||_2^2 - (2/n) sum_s t(Z_s)."""
    if obs.L != model.L:
        raise DimensionMismatch("observation window length differs from the model's")
    Phi = basis_matrix(obs, model.M)
    return ContrastEvaluation(
        norm_sq=norm_sq(model),
        empirical_mean=window_means(Phi, model, obs.n),
    )


def triple_moment_tensor(obs: ObservationRecord, M: int, chunk: int = 4096) -> np.ndarray:
    """Empirical tensor T(a,b,c) = (1/n) sum_s phi_a(Y_s) phi_b(Y_s+1) phi_c(Y_s+2).

    For L = 3 the mean term of gamma_n is an exact contraction of this tensor
    against the model coefficients, which removes n from the per-evaluation
    cost of the optimizer. Accumulated in chunks to bound memory.
    """
    if obs.L != 3:
        raise DimensionMismatch("triple moments are defined for L = 3 windows")
    Phi = basis_matrix(obs, M)
    n = obs.n
    T = np.zeros((M, M, M))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        A = Phi[start:stop]
        B = Phi[start + 1 : stop + 1]
        C = Phi[start + 2 : stop + 2]
        BC = (B[:, :, None] * C[:, None, :]).reshape(stop - start, M * M)
        T += (A.T @ BC).reshape(M, M, M)
    T /= n
    return T


def mean_from_tensor(T: np.ndarray, model: CandidateModel) -> float:
    """Exact (1/n) sum_s t(Z_s) for L = 3 from the precomputed triple tensor."""
    M = model.M
    sub = T[:M, :M, :M]
    O = model.coeffs
    W = np.einsum("abc,aj->jbc", sub, O)
    W = np.einsum("jbc,bk->jkc", W, O)
    W = np.einsum("jkc,cl->jkl", W, O)
    return float(np.einsum("j,jk,kl,jkl->", model.pi, model.Q, model.Q, W))
