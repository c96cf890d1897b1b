"""1D Gauss-Lobatto-Legendre rules and the nodal Lagrange basis built on them.

GLL nodes are the roots of (1 - x^2) P'_N(x) where P_N is the Legendre
polynomial of degree N; they include both interval endpoints, which is what
lets the same point set serve for interpolation and quadrature (collocation)
and makes the mass matrix diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_DEGREE = 10
DEFAULT_DEGREE = 2


class InvalidDegreeError(ValueError):
    """Polynomial degree outside the supported range."""


class OutOfReferenceDomainError(ValueError):
    """Evaluation point outside the reference interval [-1, 1]."""


def legendre_and_deriv(n: int, x):
    """P_n(x) and P'_n(x) by the three-term recurrence. x may be an array."""
    x = np.asarray(x, dtype=float)
    p_prev = np.ones_like(x)
    if n == 0:
        return p_prev, np.zeros_like(x)
    p = x.copy()
    for k in range(2, n + 1):
        p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
    # (1 - x^2) P'_n = n (P_{n-1} - x P_n); endpoints handled by caller
    with np.errstate(divide="ignore", invalid="ignore"):
        dp = n * (p_prev - x * p) / (1.0 - x * x)
    endpoint = np.abs(np.abs(x) - 1.0) < 1e-300
    if np.any(endpoint):
        # P'_n(+-1) = +-1^(n-1) n(n+1)/2
        val = n * (n + 1) / 2.0
        dp = np.where(endpoint, np.where(x > 0, val, val * (-1.0) ** (n - 1)), dp)
    return p, dp


@dataclass(frozen=True)
class GllRule:
    """Nodes and quadrature weights of the (N+1)-point GLL rule on [-1, 1]."""

    degree: int
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def n_points(self) -> int:
        return self.degree + 1


def gll_rule(degree: int) -> GllRule:
    """Build the GLL rule of the given polynomial degree.

    Interior nodes are found by Newton iteration on P'_N with Chebyshev
    initial guesses, converged to 1e-15 and then symmetrized so the node set
    is exactly mirror-symmetric with exact +-1 endpoints.
    """
    if not isinstance(degree, (int, np.integer)) or degree < 1:
        raise InvalidDegreeError(f"degree must be an integer >= 1, got {degree!r}")
    if degree > MAX_DEGREE:
        raise InvalidDegreeError(f"degree {degree} exceeds supported maximum {MAX_DEGREE}")
    n = int(degree)
    x = np.empty(n + 1)
    x[0], x[n] = -1.0, 1.0
    if n >= 2:
        # Chebyshev-Gauss-Lobatto points are excellent starting guesses.
        xi = -np.cos(np.pi * np.arange(1, n) / n)
        for _ in range(100):
            p, dp = legendre_and_deriv(n, xi)
            # Newton on f = P'_n, using (1-x^2) P''_n = 2 x P'_n - n(n+1) P_n
            d2p = (2.0 * xi * dp - n * (n + 1) * p) / (1.0 - xi * xi)
            step = dp / d2p
            xi = xi - step
            if np.max(np.abs(step)) < 1e-15:
                break
        x[1:n] = xi
    # Enforce exact symmetry: mirror the negative half onto the positive half.
    x = 0.5 * (x - x[::-1])
    x[0], x[n] = -1.0, 1.0
    if n % 2 == 0:
        x[n // 2] = 0.0
    p, _ = legendre_and_deriv(n, x)
    w = 2.0 / (n * (n + 1) * p * p)
    w = 0.5 * (w + w[::-1])
    return GllRule(degree=n, nodes=x, weights=w)


def lagrange_eval(rule: GllRule, i: int, xi: float) -> float:
    """Evaluate the cardinal polynomial l_i at xi via the product formula."""
    if not 0 <= i <= rule.degree:
        raise IndexError(f"node index {i} outside 0..{rule.degree}")
    if not -1.0 <= xi <= 1.0:
        raise OutOfReferenceDomainError(f"xi={xi} outside [-1, 1]")
    nodes = rule.nodes
    num = 1.0
    for j in range(rule.degree + 1):
        if j != i:
            num *= (xi - nodes[j]) / (nodes[i] - nodes[j])
    return num


def lagrange_all(rule: GllRule, xi: float) -> np.ndarray:
    """Values of all cardinal polynomials l_0..l_N at a single point."""
    if not -1.0 <= xi <= 1.0:
        raise OutOfReferenceDomainError(f"xi={xi} outside [-1, 1]")
    nodes = rule.nodes
    p = rule.degree + 1
    out = np.ones(p)
    for i in range(p):
        for j in range(p):
            if j != i:
                out[i] *= (xi - nodes[j]) / (nodes[i] - nodes[j])
    return out


def lagrange_deriv_all(rule: GllRule, xi: float) -> np.ndarray:
    """Derivatives l_i'(xi) for all i, robust at the nodes themselves."""
    if not -1.0 <= xi <= 1.0:
        raise OutOfReferenceDomainError(f"xi={xi} outside [-1, 1]")
    nodes = rule.nodes
    p = rule.degree + 1
    out = np.zeros(p)
    for i in range(p):
        denom = 1.0
        for j in range(p):
            if j != i:
                denom *= nodes[i] - nodes[j]
        s = 0.0
        for k in range(p):
            if k == i:
                continue
            term = 1.0
            for j in range(p):
                if j != i and j != k:
                    term *= xi - nodes[j]
            s += term
        out[i] = s / denom
    return out


@dataclass(frozen=True)
class LagrangeTable:
    """Nodal basis table: pointwise values and the differentiation matrix.

    deriv_matrix[i, j] = l_j'(xi_i); it maps node samples of a polynomial of
    degree <= N to node samples of its exact derivative.
    """

    degree: int
    nodes: np.ndarray
    deriv_matrix: np.ndarray

    def values_at(self, xi: float) -> np.ndarray:
        return lagrange_all(GllRule(self.degree, self.nodes, np.empty(0)), xi)


def derivative_matrix(rule: GllRule) -> LagrangeTable:
    """Differentiation matrix from barycentric weights.

    The diagonal is set to minus the row sum of the off-diagonal entries so
    every row annihilates constants exactly.
    """
    nodes = rule.nodes
    p = rule.degree + 1
    bary = np.ones(p)
    for i in range(p):
        for j in range(p):
            if j != i:
                bary[i] *= nodes[i] - nodes[j]
    bary = 1.0 / bary
    d = np.zeros((p, p))
    for i in range(p):
        for j in range(p):
            if i != j:
                d[i, j] = (bary[j] / bary[i]) / (nodes[i] - nodes[j])
    for i in range(p):
        d[i, i] = -np.sum(d[i, :])
    return LagrangeTable(degree=rule.degree, nodes=nodes.copy(), deriv_matrix=d)
