"""Multivariate Hermite tensors, Hermite coefficients and the correction term.

Hermite tensors use the probabilists' convention ``H_k(x) = E[(x + iZ)^{⊗k}]``,
so that ``E[f(Z) H_k(Z)] = E[nabla^k f(Z)]`` for standard Gaussian ``Z``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PotentialError, ShapeError
from .quadrature import expect_array, expect_scalar
from .tensor import MAX_ORDER, SymTensor, inner, transform_k

T_NODES = 32


def hermite_array(k, X):
    """Batched Hermite tensors: ``X`` of shape ``(N, d)`` gives ``(N,) + (d,)*k``."""
    if not 0 <= k <= MAX_ORDER:
        raise ShapeError(f"Hermite order must be in 0..{MAX_ORDER}, got {k}")
    X = np.asarray(X, dtype=float)
    N, d = X.shape
    if k == 0:
        return np.ones(N)
    if k == 1:
        return X.copy()
    eye = np.eye(d)
    if k == 2:
        return np.einsum("ni,nj->nij", X, X) - eye
    if k == 3:
        xxx = np.einsum("ni,nj,nk->nijk", X, X, X)
        xI = np.einsum("ni,jk->nijk", X, eye)
        return xxx - xI - xI.transpose(0, 2, 1, 3) - xI.transpose(0, 2, 3, 1)
    xxxx = np.einsum("ni,nj,nk,nl->nijkl", X, X, X, X)
    xxI = np.einsum("ni,nj,kl->nijkl", X, X, eye)
    pairs = [(0, 1, 2, 3), (0, 2, 1, 3), (0, 3, 1, 2), (1, 2, 0, 3), (1, 3, 0, 2), (2, 3, 0, 1)]
    mixed = sum(xxI.transpose((0,) + tuple(1 + np.argsort(p))) for p in pairs)
    II = np.einsum("ij,kl->ijkl", eye, eye)
    const = II + II.transpose(0, 2, 1, 3) + II.transpose(0, 2, 3, 1)
    return xxxx - mixed + const


def hermite_tensor(k, x):
    """Hermite tensor ``H_k(x)`` for a single point ``x``; a float when ``k = 0``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = hermite_array(k, x[None])[0]
    return float(out) if k == 0 else SymTensor(out)


def hermite_1d(k, x):
    """Classical probabilists' Hermite polynomial via ``H_{j+1} = x H_j - j H_{j-1}``."""
    x = np.asarray(x, dtype=float)
    h_prev, h = np.ones_like(x), x.copy()
    if k == 0:
        return h_prev
    for j in range(1, k):
        h_prev, h = h, x * h - j * h_prev
    return h


@dataclass(frozen=True, eq=False)
class HermiteCoeffs:
    """Coefficients ``A_0, ..., A_K`` (``A_0`` a float, the rest SymTensors)."""

    tensors: tuple
    source: str
    rule: object = None

    @property
    def order(self):
        return len(self.tensors) - 1

    def __getitem__(self, k):
        return self.tensors[k]

    def partial_sum(self, x, upto):
        """``sum_{j < upto} <A_j, H_j(x)> / j!`` for a batch ``x`` of shape ``(N, d)``."""
        X = np.atleast_2d(np.asarray(x, dtype=float))
        total = np.zeros(X.shape[0])
        for j in range(min(upto, len(self.tensors))):
            A = self.tensors[j]
            H = hermite_array(j, X)
            if j == 0:
                total += A * H
            else:
                total += np.tensordot(H, A.entries, axes=j) / math.factorial(j)
        return total


def _wrap(k, arr):
    return float(arr) if k == 0 else SymTensor(arr)


def coeffs_via_derivatives(V0, rule, K=4):
    """``A_k = E[nabla^k V0(Z)]`` for ``k = 0..K`` (Gaussian integration by parts)."""
    if K > V0.max_order:
        raise PotentialError(f"{V0.label or 'potential'} provides derivatives only up to order {V0.max_order}")
    Z = rule.nodes
    tensors = tuple(_wrap(k, expect_array(rule, lambda _, k=k: V0.V_deriv(k, Z))) for k in range(K + 1))
    return HermiteCoeffs(tensors, "via_derivatives", rule)


def coeffs_via_projection(f, rule, K=4):
    """``A_k(f) = E[f(Z) H_k(Z)]`` for a batched scalar function ``f``."""
    Z = rule.nodes
    fz = np.asarray(f(Z), dtype=float)
    tensors = []
    for k in range(K + 1):
        Hk = hermite_array(k, Z)
        fz_b = fz.reshape((-1,) + (1,) * k)
        tensors.append(_wrap(k, expect_array(rule, lambda _, a=fz_b * Hk: a)))
    return HermiteCoeffs(tuple(tensors), "via_projection", rule)


def p3_eval(A3, x):
    """``p3(x) = <A3, H_3(x)> / 6``; ``x`` may be one point or a batch."""
    arr = A3.entries if isinstance(A3, SymTensor) else np.asarray(A3, dtype=float)
    if arr.ndim != 3:
        raise ShapeError(f"p3 needs an order-3 tensor, got order {arr.ndim}")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    vals = np.tensordot(hermite_array(3, np.atleast_2d(x)), arr, axes=3) / 6.0
    return float(vals[0]) if single else vals


class CorrectionTerm:
    """The first-order correction ``Q`` for a variational fit ``N(m, S)``.

    ``Q(x) = <B, (x-m) ⊗ S / 2 - (x-m)^{⊗3} / 6>`` with
    ``B = E_{X ~ N(m, S)}[nabla^3 V(X)]``.
    """

    def __init__(self, p, approx, rule):
        pts = approx.mean + rule.nodes @ approx.sqrt.T
        self._setup(SymTensor(expect_array(rule, lambda _: p.V_deriv(3, pts))), approx)

    @classmethod
    def from_third_derivative(cls, B, approx):
        """Build ``Q`` from a precomputed ``B = E[nabla^3 V]``."""
        obj = cls.__new__(cls)
        obj._setup(B if isinstance(B, SymTensor) else SymTensor(np.asarray(B, dtype=float)), approx)
        return obj

    def _setup(self, B, approx):
        self.mean = approx.mean
        self.cov = approx.cov
        self.inv_sqrt = approx.inv_sqrt
        self.B = B
        # A3 of V0 = B contracted with S^{1/2} in every slot
        self.A3 = SymTensor(transform_k(B.entries, approx.sqrt, 3))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        Y = np.atleast_2d(x) - self.mean
        B = self.B.entries
        quad = 0.5 * np.einsum("ijk,ni,jk->n", B, Y, self.cov, optimize=True)
        cub = np.einsum("ijk,ni,nj,nk->n", B, Y, Y, Y, optimize=True) / 6.0
        vals = quad - cub
        return float(vals[0]) if single else vals

    def via_p3(self, x):
        """Same function written as ``-p3(S^{-1/2}(x - m))``."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        T = (np.atleast_2d(x) - self.mean) @ self.inv_sqrt.T
        vals = -p3_eval(self.A3, T)
        return float(vals[0]) if single else vals


def q_eval(p, approx, rule, x):
    return CorrectionTerm(p, approx, rule)(x)


def q_logistic(spec, approx, rule, x):
    """Logistic form of ``Q`` built from ``b_i = E[psi'''(theta^T X_i)]``, ``theta ~ N(m, S)``."""
    from .potential import psi_derivs

    X = spec.X
    pts = approx.mean + rule.nodes @ approx.sqrt.T
    _, _, s2, _ = psi_derivs(pts @ X.T)
    b = expect_array(rule, lambda _: s2)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    Y = (np.atleast_2d(x) - approx.mean) @ X.T  # X_i^T (theta - m)
    quad_form = np.einsum("ri,ij,rj->r", X, approx.cov, X)
    vals = (0.5 * Y * quad_form - Y**3 / 6.0) @ b
    return float(vals[0]) if single else vals


def _legendre01(t_nodes):
    t, w = np.polynomial.legendre.leggauss(t_nodes)
    return 0.5 * (t + 1.0), 0.5 * w


def remainder_rk(V0, rule, k, x, t_nodes=T_NODES):
    """Integral form of the order-k Hermite remainder of ``V0`` at ``x``.

    ``r_k(x) = int_0^1 (1-t)^{k-1}/(k-1)! E<nabla^k V0((1-t)Z + t x), H_k(x) - Z ⊗ H_{k-1}(x)> dt``
    with Gauss-Legendre in ``t`` and ``rule`` in ``Z``.
    """
    if not 1 <= k <= MAX_ORDER:
        raise ShapeError(f"remainder order must be in 1..{MAX_ORDER}, got {k}")
    if k > V0.max_order:
        raise PotentialError(f"{V0.label or 'potential'} has no derivative of order {k}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    Z = rule.nodes
    Hk = hermite_array(k, x[None])[0]
    Hk1 = hermite_array(k - 1, x[None])[0]
    # kernel(Z) = H_k(x) - Z ⊗ H_{k-1}(x); only its contraction with a symmetric tensor matters
    kernel = Hk[None] - np.multiply.outer(Z, Hk1).reshape((Z.shape[0],) + Hk.shape)
    ts, ws = _legendre01(t_nodes)
    total = 0.0
    for t, w in zip(ts, ws):
        D = V0.V_deriv(k, (1.0 - t) * Z + t * x)
        integrand = np.sum((D * kernel).reshape(Z.shape[0], -1), axis=1)
        total += w * (1.0 - t) ** (k - 1) / math.factorial(k - 1) * expect_scalar(rule, lambda _, a=integrand: a)
    return float(total)


def truncation_residual(V0, coeffs, k, x):
    """Direct residual ``V0(x) - sum_{j<k} <A_j, H_j(x)> / j!``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(V0.V_deriv(0, x) - coeffs.partial_sum(x[None], k)[0])


def lot_inner(A3_V0, A3_f):
    """``<A3(V0), A3(f)> / 3!``, the integral of ``f p3`` against the standard Gaussian."""
    return inner(A3_V0, A3_f) / 6.0
