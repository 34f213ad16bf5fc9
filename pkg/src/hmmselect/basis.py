"""Trigonometric orthonormal basis on [0, 1] and density projection by quadrature."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OutOfDomain, QuadratureNotConverged
from .hmm import BasisCoefficients, BetaDensity

DEFAULT_NODE_BUDGET = 2048
MAX_NODE_BUDGET = 1 << 18


@dataclass(frozen=True)
class TrigBasis:
    """phi_0 = 1, phi_a(t) = sqrt(2) cos(pi a t) for a >= 1, indices 0..M-1."""

    M: int

    def evaluate(self, y) -> np.ndarray:
        """Basis values at points ``y``; shape (..., M)."""
        y = np.asarray(y, dtype=float)
        if np.any(y < 0) or np.any(y > 1):
            raise OutOfDomain("basis evaluation points must lie in [0, 1]")
        a = np.arange(self.M)
        out = np.sqrt(2.0) * np.cos(np.pi * np.multiply.outer(y, a))
        out[..., 0] = 1.0
        return out


def eval_basis(basis: TrigBasis, y) -> np.ndarray:
    return basis.evaluate(y)


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights for integration against Lebesgue measure on [0, 1]."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.asarray(self.nodes, float))
        object.__setattr__(self, "weights", np.asarray(self.weights, float))
        assert abs(self.weights.sum() - 1.0) < 1e-12

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Integrate function values sampled at the nodes (last-but-one axis = nodes)."""
        return np.tensordot(self.weights, values, axes=(0, 0))


def _panel_edges(n_panels: int) -> np.ndarray:
    """Panel breakpoints geometrically refined toward both endpoints.

    Beta densities with a shape parameter below 1 blow up at 0 or 1, so the
    panels shrink geometrically toward the boundary.
    """
    # Near 1.0 the dyadic edges collapse onto 1.0 once the panel width drops
    # below the double-precision spacing; np.unique removes the duplicates,
    # so effective refinement is bounded by the float resolution per side.
    half = max(1, n_panels // 2)
    left = 0.5 * np.power(2.0, -np.arange(half - 1, -1, -1, dtype=float))
    edges = np.concatenate([[0.0], left, 1.0 - left[-2::-1], [1.0]])
    return np.unique(edges)


def gauss_legendre_rule(n_nodes: int, n_panels: int | None = None) -> QuadratureRule:
    """Composite Gauss-Legendre rule with endpoint-refined panels.

    Extra node budget is spent on deeper geometric refinement toward the
    endpoints rather than on per-panel degree: integrable singularities
    converge geometrically in the panel count, while raising the
    Gauss-Legendre degree converges slowly and leggauss itself costs
    O(degree^2) memory.
    """
    if n_panels is None:
        n_panels = max(16, n_nodes // 64)
    edges = _panel_edges(n_panels)
    per_panel = max(2, n_nodes // (len(edges) - 1))
    x, w = np.polynomial.legendre.leggauss(per_panel)
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid, hw = 0.5 * (lo + hi), 0.5 * (hi - lo)
        nodes.append(mid + hw * x)
        weights.append(hw * w)
    nodes = np.concatenate(nodes)
    weights = np.concatenate(weights)
    weights /= weights.sum()
    return QuadratureRule(nodes=nodes, weights=weights)


def project_density(
    f: BetaDensity,
    M: int,
    rule: QuadratureRule | None = None,
    tol: float = 1e-8,
) -> BasisCoefficients:
    """Coefficients of the L2 projection of a Beta density onto the first M
    basis functions.

    With no explicit rule, refines a composite Gauss-Legendre rule (doubling
    the node budget) until successive coefficient vectors agree within
    ``tol``.
    """
    # Endpoint refinement is limited by float spacing, which is much finer
    # near 0 than near 1. A density that diverges at 1 is projected via its
    # reflection (singularity moved to 0) using phi_a(1-u) = (-1)^a phi_a(u).
    if rule is None and f.beta < 1.0 and f.beta < f.alpha:
        c = project_density(BetaDensity(f.beta, f.alpha), M, tol=tol).coeffs
        signs = np.where(np.arange(M) % 2 == 0, 1.0, -1.0)
        return BasisCoefficients(signs * c, norm_bound=np.inf)

    basis = TrigBasis(M)

    def coeffs_for(r: QuadratureRule) -> np.ndarray:
        vals = f.pdf(r.nodes)
        # A node can round onto an endpoint where an integrable density
        # diverges; that single point carries no Lebesgue mass.
        vals[~np.isfinite(vals)] = 0.0
        return r.integrate(basis.evaluate(r.nodes) * vals[:, None])

    if rule is not None:
        return BasisCoefficients(coeffs_for(rule), norm_bound=np.inf)

    budget = DEFAULT_NODE_BUDGET
    prev = coeffs_for(gauss_legendre_rule(budget))
    while budget <= MAX_NODE_BUDGET:
        budget *= 2
        cur = coeffs_for(gauss_legendre_rule(budget))
        if np.max(np.abs(cur - prev)) < tol:
            return BasisCoefficients(cur, norm_bound=np.inf)
        prev = cur
    raise QuadratureNotConverged(f"projection did not stabilize within {MAX_NODE_BUDGET} nodes")


def coefficient_matrix(emissions, M: int) -> np.ndarray:
    """M x K matrix whose column k holds the basis coefficients of emission k."""
    cols = []
    for e in emissions:
        if isinstance(e, BetaDensity):
            cols.append(project_density(e, M).coeffs)
        else:
            c = np.zeros(M)
            m = min(M, e.coeffs.shape[0])
            c[:m] = e.coeffs[:m]
            cols.append(c)
    return np.column_stack(cols)


def gram_identity_check(basis: TrigBasis, rule: QuadratureRule) -> float:
    """max |<phi_a, phi_b> - delta_ab| under the given rule."""
    Phi = basis.evaluate(rule.nodes)
    G = Phi.T @ (rule.weights[:, None] * Phi)
    return float(np.max(np.abs(G - np.eye(basis.M))))
