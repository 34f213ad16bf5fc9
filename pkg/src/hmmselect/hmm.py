"""Core HMM parameter types, simulation and the permutation-invariant distance.

Observations live on [0, 1]; emission densities are either Beta laws or
finite expansions on an orthonormal basis (see :mod:`hmmselect.basis`).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.sparse import csr_matrix

from .errors import (
    DimensionMismatch,
    InvalidParams,
    NonIrreducible,
    SolverFailure,
)

ROW_SUM_TOL = 1e-12
STATIONARY_TOL = 1e-10
DEFAULT_COEFF_NORM_BOUND = 10.0
MAX_PERM_STATES = 8


def validate_transition(Q: np.ndarray) -> np.ndarray:
    """Check that ``Q`` is a square row-stochastic matrix and return it as float."""
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise InvalidParams(f"transition matrix must be square, got shape {Q.shape}")
    if np.any(Q < -ROW_SUM_TOL) or np.any(Q > 1 + ROW_SUM_TOL):
        raise InvalidParams("transition entries must lie in [0, 1]")
    if np.max(np.abs(Q.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
        raise InvalidParams("transition rows must sum to 1")
    return Q


def validate_probability_vector(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise InvalidParams("probability vector must be 1-D")
    if np.any(p < -ROW_SUM_TOL):
        raise InvalidParams("probabilities must be nonnegative")
    if abs(p.sum() - 1.0) > ROW_SUM_TOL:
        raise InvalidParams("probabilities must sum to 1")
    return p


def is_irreducible(Q: np.ndarray) -> bool:
    """True iff the support graph of ``Q`` is strongly connected."""
    Q = np.asarray(Q, dtype=float)
    if Q.shape[0] == 1:
        return True
    graph = csr_matrix((Q > 0).astype(np.int8))
    n_comp, _ = connected_components(graph, directed=True, connection="strong")
    return n_comp == 1


def stationary_distribution(Q: np.ndarray) -> np.ndarray:
    """Stationary law pi of an irreducible transition matrix, pi Q = pi.

    Solved as the least-squares solution of the linear system
    (Q^T - I) pi = 0 augmented with sum(pi) = 1.
    """
    Q = validate_transition(Q)
    if not is_irreducible(Q):
        raise NonIrreducible("transition matrix is not irreducible")
    K = Q.shape[0]
    A = np.vstack([Q.T - np.eye(K), np.ones((1, K))])
    b = np.zeros(K + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    if not np.all(np.isfinite(pi)):
        raise SolverFailure("stationary system is numerically singular")
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    if np.max(np.abs(pi @ Q - pi)) > STATIONARY_TOL:
        raise SolverFailure("stationary residual exceeds tolerance")
    return pi


@dataclass(frozen=True)
class BetaDensity:
    """Beta(alpha, beta) emission density on [0, 1]."""

    alpha: float
    beta: float

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise InvalidParams("Beta parameters must be positive")

    def pdf(self, y):
        from scipy.stats import beta as beta_dist

        return beta_dist.pdf(y, self.alpha, self.beta)


@dataclass(frozen=True)
class BasisCoefficients:
    """Emission density given by coefficients on the trigonometric basis."""

    coeffs: np.ndarray
    norm_bound: float = DEFAULT_COEFF_NORM_BOUND

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        object.__setattr__(self, "coeffs", c)
        if np.linalg.norm(c) > self.norm_bound + 1e-9:
            raise InvalidParams("coefficient L2 norm exceeds the configured bound")

    @property
    def M(self) -> int:
        return self.coeffs.shape[0]


EmissionSpec = BetaDensity | BasisCoefficients


@dataclass(frozen=True)
class HmmParams:
    """Parameter tuple (stationary law, transition matrix, emissions, order)."""

    transition: np.ndarray
    stationary: np.ndarray
    emissions: tuple

    def __post_init__(self):
        Q = validate_transition(self.transition)
        pi = validate_probability_vector(self.stationary)
        object.__setattr__(self, "transition", Q)
        object.__setattr__(self, "stationary", pi)
        object.__setattr__(self, "emissions", tuple(self.emissions))
        if len(self.emissions) != self.K:
            raise InvalidParams("need one emission per hidden state")
        if pi.shape[0] != self.K:
            raise InvalidParams("stationary length must equal the order")
        if np.max(np.abs(pi @ Q - pi)) > STATIONARY_TOL:
            raise InvalidParams("stationary vector is not invariant for Q")

    @property
    def K(self) -> int:
        return self.transition.shape[0]

    @classmethod
    def from_transition(cls, Q, emissions) -> "HmmParams":
        return cls(np.asarray(Q, float), stationary_distribution(Q), tuple(emissions))


@dataclass(frozen=True)
class ObservationRecord:
    """A simulated or ingested observation sequence with its windowing metadata.

    ``values`` has length n + L - 1 so that the n sliding windows
    (Y_s, ..., Y_{s+L-1}) are all available. ``states`` carries the hidden
    chain when the record comes from :func:`simulate` (exposed for testing).
    """

    values: np.ndarray
    L: int = 3
    seed: int | None = None
    states: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim != 1:
            raise InvalidParams("observations must be a 1-D sequence")
        if np.any(v < 0) or np.any(v > 1):
            raise InvalidParams("observations must lie in [0, 1]")
        if self.L < 1 or v.shape[0] - self.L + 1 < 1:
            raise InvalidParams("need at least one window of length L")

    @property
    def n(self) -> int:
        return self.values.shape[0] - self.L + 1

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"# n={self.n} L={self.L} seed={self.seed}\n")
            fh.write("value\n")
            for v in self.values:
                fh.write(f"{v:.12g}\n")

    @classmethod
    def from_csv(cls, path) -> "ObservationRecord":
        with open(path) as fh:
            header = fh.readline().strip().lstrip("# ")
            meta = dict(kv.split("=") for kv in header.split())
            fh.readline()  # column name
            values = np.array([float(line) for line in fh if line.strip()])
        seed = None if meta.get("seed") in (None, "None") else int(meta["seed"])
        return cls(values=values, L=int(meta["L"]), seed=seed)


def params_to_json(params: HmmParams, path) -> None:
    """JSON sidecar for a simulated record."""
    def emission_dict(e):
        if isinstance(e, BetaDensity):
            return {"family": "beta", "alpha": e.alpha, "beta": e.beta}
        return {"family": "coeffs", "coeffs": e.coeffs.tolist()}

    doc = {
        "K": params.K,
        "transition": params.transition.tolist(),
        "stationary": params.stationary.tolist(),
        "emissions": [emission_dict(e) for e in params.emissions],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)


def _sample_beta(rng: np.random.Generator, alpha: float, beta: float, size: int):
    # Two-Gamma construction: X/(X+Y) with X~Gamma(alpha), Y~Gamma(beta).
    x = rng.gamma(alpha, size=size)
    y = rng.gamma(beta, size=size)
    return x / (x + y)


def simulate(params: HmmParams, length: int, seed, L: int = 3) -> ObservationRecord:
    """Simulate ``length`` observations of a stationary HMM.

    The hidden chain starts from the stationary law. Deterministic given
    ``seed``. ``length`` counts raw observations (n + L - 1 of them).
    """
    if not is_irreducible(params.transition):
        raise InvalidParams("transition matrix must be irreducible for simulation")
    if length < L:
        raise InvalidParams("length must be at least L")
    rng = np.random.default_rng(seed)
    K = params.K
    Q_cum = np.cumsum(params.transition, axis=1)

    states = np.empty(length, dtype=np.int64)
    states[0] = rng.choice(K, p=params.stationary)
    u = rng.random(length - 1)
    for t in range(1, length):
        states[t] = np.searchsorted(Q_cum[states[t - 1]], u[t - 1], side="right")
    states = np.minimum(states, K - 1)

    values = np.empty(length, dtype=float)
    for k, emission in enumerate(params.emissions):
        idx = np.flatnonzero(states == k)
        if idx.size == 0:
            continue
        if isinstance(emission, BetaDensity):
            values[idx] = _sample_beta(rng, emission.alpha, emission.beta, idx.size)
        else:
            raise InvalidParams("only Beta emissions can be simulated")
    np.clip(values, 0.0, 1.0, out=values)
    seed_int = seed if isinstance(seed, (int, np.integer)) else None
    return ObservationRecord(values=values, L=L, seed=seed_int, states=states)


def _as_triple(t):
    pi, Q, O = t
    return (
        np.asarray(pi, dtype=float),
        np.asarray(Q, dtype=float),
        np.asarray(O, dtype=float),
    )


def d_perm(a, b) -> float:
    """Permutation-minimized distance between two parameter triples.

    Each triple is (pi, Q, O) with O the M x K matrix of emission basis
    coefficients (column k = state k). Emission L2 distances follow from
    Parseval on the coefficients; coefficient matrices of different heights
    are zero-padded to a common M. Exhaustive search over all K!
    permutations (K <= 8 enforced).
    """
    pi_a, Q_a, O_a = _as_triple(a)
    pi_b, Q_b, O_b = _as_triple(b)
    K = pi_a.shape[0]
    if pi_b.shape[0] != K or Q_a.shape != (K, K) or Q_b.shape != (K, K):
        raise DimensionMismatch("both triples must share the same order K")
    if O_a.shape[1] != K or O_b.shape[1] != K:
        raise DimensionMismatch("coefficient matrices must have K columns")
    if K > MAX_PERM_STATES:
        raise DimensionMismatch(f"exhaustive permutation search capped at K={MAX_PERM_STATES}")
    M = max(O_a.shape[0], O_b.shape[0])
    if O_a.shape[0] < M:
        O_a = np.vstack([O_a, np.zeros((M - O_a.shape[0], K))])
    if O_b.shape[0] < M:
        O_b = np.vstack([O_b, np.zeros((M - O_b.shape[0], K))])

    best = math.inf
    for tau in itertools.permutations(range(K)):
        tau = np.asarray(tau)
        d2 = (
            np.sum((pi_a[tau] - pi_b) ** 2)
            + np.sum((Q_a[np.ix_(tau, tau)] - Q_b) ** 2)
            + np.sum((O_a[:, tau] - O_b) ** 2)
        )
        best = min(best, d2)
    return math.sqrt(best)
