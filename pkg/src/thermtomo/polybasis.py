"""Orthonormal Legendre polynomials and Gauss-Legendre quadrature on the
parameter interval Xi = [-1/2, 1/2].

The basis ``l_0, l_1, ...`` is orthonormal with respect to the plain Lebesgue
measure on Xi (which has total mass 1), so ``l_0 == 1`` and

    integral_Xi l_i(x) l_j(x) dx = delta_ij.

A rule of order ``k`` has ``k + 1`` nodes and integrates polynomials up to
degree ``2k + 1`` exactly; consequently the pseudospectral projection of order
``k`` recovers coefficients up to degree ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.linalg import eigh_tridiagonal

XI_LO = -0.5
XI_HI = 0.5

__all__ = [
    "XI_LO",
    "XI_HI",
    "QuadratureRule",
    "NodeEvaluationError",
    "legendre_eval",
    "legendre_eval_deriv",
    "legendre_table",
    "legendre_table_deriv",
    "gauss_legendre_rule",
    "quadrature_apply",
]


class NodeEvaluationError(RuntimeError):
    """Evaluation of an integrand failed at a quadrature node."""

    def __init__(self, node_index, node, cause):
        self.node_index = node_index
        self.node = node
        super().__init__(
            f"integrand evaluation failed at node {node_index} (coords {node!r}): {cause}"
        )


def _check_domain(x, strict: bool):
    if strict and np.any((np.asarray(x) < XI_LO) | (np.asarray(x) > XI_HI)):
        raise ValueError(f"point outside Xi = [{XI_LO}, {XI_HI}]: {x!r}")


def legendre_table(max_degree: int, x) -> np.ndarray:
    """Values of l_0 .. l_max_degree at x; shape (max_degree+1,) + shape(x).

    Uses the standard three-term recurrence on t = 2x (the [-1, 1] pullback)
    followed by sqrt(2i+1) normalization.
    """
    if max_degree < 0:
        raise ValueError("max_degree must be nonnegative")
    x = np.asarray(x, dtype=float)
    t = 2.0 * x
    out = np.empty((max_degree + 1,) + x.shape, dtype=float)
    out[0] = 1.0
    if max_degree >= 1:
        out[1] = t
    for n in range(1, max_degree):
        out[n + 1] = ((2 * n + 1) * t * out[n] - n * out[n - 1]) / (n + 1)
    norms = np.sqrt(2.0 * np.arange(max_degree + 1) + 1.0)
    return out * norms.reshape((-1,) + (1,) * x.ndim)


def legendre_table_deriv(max_degree: int, x) -> tuple[np.ndarray, np.ndarray]:
    """Values and x-derivatives of l_0 .. l_max_degree at x."""
    if max_degree < 0:
        raise ValueError("max_degree must be nonnegative")
    x = np.asarray(x, dtype=float)
    t = 2.0 * x
    p = np.empty((max_degree + 1,) + x.shape, dtype=float)
    dp = np.empty_like(p)
    p[0] = 1.0
    dp[0] = 0.0
    if max_degree >= 1:
        p[1] = t
        dp[1] = 1.0
    for n in range(1, max_degree):
        p[n + 1] = ((2 * n + 1) * t * p[n] - n * p[n - 1]) / (n + 1)
        dp[n + 1] = ((2 * n + 1) * (p[n] + t * dp[n]) - n * dp[n - 1]) / (n + 1)
    norms = np.sqrt(2.0 * np.arange(max_degree + 1) + 1.0)
    norms = norms.reshape((-1,) + (1,) * x.ndim)
    # chain rule: d/dx = 2 d/dt
    return p * norms, 2.0 * dp * norms


def legendre_eval(i: int, x, strict: bool = False):
    """l_i(x), the degree-i Legendre polynomial orthonormal on Xi.

    Values outside Xi are permitted (polynomial extrapolation) unless
    ``strict`` is set.
    """
    if i < 0:
        raise ValueError("degree must be nonnegative")
    _check_domain(x, strict)
    vals = legendre_table(i, x)[i]
    return float(vals) if np.isscalar(x) else vals


def legendre_eval_deriv(i: int, x, strict: bool = False):
    """dl_i/dx at x, consistent with :func:`legendre_eval`."""
    if i < 0:
        raise ValueError("degree must be nonnegative")
    _check_domain(x, strict)
    derivs = legendre_table_deriv(i, x)[1][i]
    return float(derivs) if np.isscalar(x) else derivs


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights of a quadrature rule of order k on Xi.

    For Gauss-Legendre the rule has q(k) = k, i.e. k + 1 nodes, exactness
    degree s(k) = 2k + 1 and projection degree p(k) = k.
    """

    order: int
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def exactness(self) -> int:
        return 2 * self.order + 1

    @property
    def projection_degree(self) -> int:
        return self.order


@lru_cache(maxsize=None)
def gauss_legendre_rule(k: int) -> QuadratureRule:
    """Gauss-Legendre rule with k + 1 nodes on Xi, exact up to degree 2k + 1.

    Nodes and weights come from the Golub-Welsch eigendecomposition of the
    Jacobi matrix for the [-1, 1] Legendre recurrence, affinely mapped to Xi.
    Cached so repeated calls return bitwise-identical arrays.
    """
    if k < 0:
        raise ValueError("order must be nonnegative")
    n = k + 1
    if n == 1:
        nodes = np.array([0.0])
        weights = np.array([1.0])
    else:
        j = np.arange(1, n, dtype=float)
        beta = j / np.sqrt(4.0 * j * j - 1.0)
        t, vecs = eigh_tridiagonal(np.zeros(n), beta)
        nodes = 0.5 * t
        weights = vecs[0] ** 2  # 2 * v0^2 on [-1,1], halved by the map to Xi
        # the rule is symmetric; enforce it exactly (the eigensolver leaves
        # the middle node of odd rules at ~1e-16 instead of 0)
        nodes = 0.5 * (nodes - nodes[::-1])
        weights = 0.5 * (weights + weights[::-1])
    nodes.flags.writeable = False
    weights.flags.writeable = False
    return QuadratureRule(order=k, nodes=nodes, weights=weights)


def quadrature_apply(rule: QuadratureRule, f: Callable[[float], float]) -> float:
    """Apply the rule to a scalar function: sum_i f(x_i) w_i.

    Evaluation failures are re-raised as :class:`NodeEvaluationError` with the
    offending node attached.
    """
    total = 0.0
    for idx, (x, w) in enumerate(zip(rule.nodes, rule.weights)):
        try:
            fx = f(x)
        except Exception as exc:
            raise NodeEvaluationError(idx, x, exc) from exc
        total += fx * w
    return total
