"""Expectations under the standard Gaussian N(0, I_d).

Two engines are provided: a tensor-product Gauss-Hermite rule (probabilists'
normalization, nodes from the Golub-Welsch eigenproblem) and seeded Monte
Carlo. Integrands are evaluated on the whole node array at once: ``phi``
receives an ``(N, d)`` array and returns an ``(N, ...)`` array.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import QuadratureBudgetError, QuadratureEvaluationError
from .tensor import SymTensor

GAUSS_HERMITE = "gauss_hermite_tensor"
MONTE_CARLO = "monte_carlo"
NODE_BUDGET = 10**7


@lru_cache(maxsize=64)
def _gauss_hermite_1d(level):
    # Jacobi matrix of the monic He_k recurrence: He_{k+1} = x He_k - k He_{k-1}
    off = np.sqrt(np.arange(1, level, dtype=float))
    J = np.diag(off, 1) + np.diag(off, -1)
    nodes = np.linalg.eigvalsh(J)
    # exact symmetry about zero
    nodes = 0.5 * (nodes - nodes[::-1])
    # Christoffel weights 1 / sum_k p_k(x)^2 with orthonormal p_k = He_k / sqrt(k!);
    # unlike squared eigenvector entries these keep relative accuracy in the tails
    p_prev, p = np.zeros_like(nodes), np.ones_like(nodes)
    total = np.ones_like(nodes)
    for k in range(1, level):
        p_prev, p = p, (nodes * p - np.sqrt(k - 1) * p_prev) / np.sqrt(k)
        total += p * p
    weights = 1.0 / total
    weights = 0.5 * (weights + weights[::-1])
    weights = weights / weights.sum()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_hermite_1d(level):
    """One-dimensional probabilists' Gauss-Hermite nodes and weights (summing to 1)."""
    return _gauss_hermite_1d(int(level))


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    kind: str
    dim: int
    level: int
    nodes: np.ndarray
    weights: np.ndarray
    seed: int | None = None

    @property
    def size(self):
        return self.nodes.shape[0]

    def describe(self):
        if self.kind == GAUSS_HERMITE:
            return f"gh:{self.level}"
        return f"mc:{self.level}:{self.seed}"


def build_rule(kind, dim, level, seed=None):
    """Construct a quadrature rule for ``E[phi(Z)]``, ``Z ~ N(0, I_dim)``.

    ``level`` is the nodes-per-axis count for Gauss-Hermite and the sample
    count for Monte Carlo.
    """
    dim, level = int(dim), int(level)
    if dim < 1 or level < 1:
        raise ValueError(f"dim and level must be >= 1, got dim={dim}, level={level}")
    if kind == GAUSS_HERMITE:
        if dim * np.log(level) > np.log(NODE_BUDGET) + 1e-12:
            raise QuadratureBudgetError(
                f"Gauss-Hermite rule with {level}^{dim} nodes exceeds the budget of "
                f"{NODE_BUDGET}; use kind='{MONTE_CARLO}' instead"
            )
        x, w = gauss_hermite_1d(level)
        nodes = np.array(list(itertools.product(x, repeat=dim)), dtype=float).reshape(-1, dim)
        weights = np.prod(np.array(list(itertools.product(w, repeat=dim))).reshape(-1, dim), axis=1)
        weights = weights / weights.sum()
        seed = None
    elif kind == MONTE_CARLO:
        if seed is None:
            raise ValueError("monte_carlo rules need an explicit seed")
        # Philox is counter-based: node j depends only on (seed, j)
        gen = np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))
        nodes = gen.standard_normal((level, dim))
        weights = np.full(level, 1.0 / level)
    else:
        raise ValueError(f"unknown quadrature kind {kind!r}")
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(kind, dim, level, nodes, weights, seed)


def default_rule(dim, seed=0):
    """Gauss-Hermite with 20 nodes per axis up to d=4, Monte Carlo beyond."""
    if dim <= 4:
        return build_rule(GAUSS_HERMITE, dim, 20)
    return build_rule(MONTE_CARLO, dim, 200_000, seed=seed)


def parse_rule(text, dim):
    """Parse ``gh:L`` or ``mc:M:seed`` into a rule."""
    parts = text.split(":")
    if parts[0] == "gh" and len(parts) == 2:
        return build_rule(GAUSS_HERMITE, dim, int(parts[1]))
    if parts[0] == "mc" and len(parts) == 3:
        return build_rule(MONTE_CARLO, dim, int(parts[1]), seed=int(parts[2]))
    raise ValueError(f"bad quadrature spec {text!r}; expected gh:L or mc:M:seed")


def _evaluate(rule, phi, points=None):
    pts = rule.nodes if points is None else points
    vals = np.asarray(phi(pts), dtype=float)
    if vals.shape[:1] != (rule.size,):
        raise ValueError(f"integrand returned shape {vals.shape}, expected leading axis {rule.size}")
    bad = ~np.isfinite(vals.reshape(rule.size, -1)).all(axis=1)
    if bad.any():
        j = int(np.argmax(bad))
        raise QuadratureEvaluationError(
            f"integrand is not finite at node {j} ({pts[j].tolist()})", node=j
        )
    return vals


def weighted_sum(rule, vals):
    return np.tensordot(rule.weights, vals, axes=(0, 0))


def expect_scalar(rule, phi):
    """``E[phi(Z)]`` for scalar-valued ``phi``."""
    return float(weighted_sum(rule, _evaluate(rule, phi)))


def expect_vector(rule, phi):
    """``E[phi(Z)]`` for vector-valued ``phi``."""
    return np.asarray(weighted_sum(rule, _evaluate(rule, phi)))


def expect_tensor(rule, phi):
    """``E[phi(Z)]`` for a symmetric-tensor-valued ``phi``; returns a SymTensor."""
    return SymTensor(weighted_sum(rule, _evaluate(rule, phi)))


def expect_array(rule, phi):
    """``E[phi(Z)]`` returned as a plain array of any shape."""
    return np.asarray(weighted_sum(rule, _evaluate(rule, phi)))
