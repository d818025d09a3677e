"""Dense symmetric tensors of order 1-4 and their (weighted) operator norms."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._linalg import spd_eigh, sym
from .errors import ShapeError

MAX_ORDER = 4
_LETTERS = "abcdefgh"


def _canonical_gather(order, dim):
    idx = np.indices((dim,) * order).reshape(order, -1)
    return tuple(np.sort(idx, axis=0))


def _as_array(T):
    return T.entries if isinstance(T, SymTensor) else np.asarray(T, dtype=float)


def _check_shape(arr):
    if arr.ndim < 1 or arr.ndim > MAX_ORDER:
        raise ShapeError(f"tensor order must be in 1..{MAX_ORDER}, got {arr.ndim}")
    if len(set(arr.shape)) != 1:
        raise ShapeError(f"tensor must have shape d^k, got {arr.shape}")


def _symmetrized(arr):
    k = arr.ndim
    if k == 1:
        return arr.copy()
    perms = list(itertools.permutations(range(k)))
    if all(np.array_equal(arr, arr.transpose(p)) for p in perms[1:]):
        return arr.copy()
    avg = sum(arr.transpose(p) for p in perms) / len(perms)
    # copy each orbit's value from its sorted index so symmetry is bit-exact
    return avg[_canonical_gather(k, arr.shape[0])].reshape(arr.shape)


@dataclass(frozen=True, eq=False)
class SymTensor:
    """Symmetric tensor stored densely as a read-only ``d^k`` array.

    Construction always routes through :func:`symmetrize`, so entries are
    exactly invariant under index permutations.
    """

    entries: np.ndarray

    def __post_init__(self):
        arr = np.array(self.entries, dtype=float)
        _check_shape(arr)
        arr = _symmetrized(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @property
    def order(self):
        return self.entries.ndim

    @property
    def dim(self):
        return self.entries.shape[0]

    def frobenius(self):
        return float(np.sqrt(np.sum(self.entries**2)))

    def __repr__(self):
        return f"SymTensor(order={self.order}, dim={self.dim})"


def symmetrize(raw):
    """Average a dense order-k array over all k! index permutations."""
    return SymTensor(raw)


def inner(T, S):
    """Entrywise inner product of two tensors of equal shape."""
    a, b = _as_array(T), _as_array(S)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch in inner product: {a.shape} vs {b.shape}")
    return float(np.sum(a * b))


def apply(T, vectors):
    """Contract ``T`` with ``u1 ⊗ ... ⊗ uℓ`` over its leading slots.

    Returns a float when every slot is contracted, otherwise a SymTensor of
    order ``T.order - len(vectors)``.
    """
    arr = _as_array(T)
    vectors = [np.asarray(u, dtype=float) for u in vectors]
    if len(vectors) > arr.ndim:
        raise ShapeError(f"cannot contract {len(vectors)} vectors into an order-{arr.ndim} tensor")
    for u in vectors:
        if u.shape != (arr.shape[0],):
            raise ShapeError(f"vector of shape {u.shape} does not match dim {arr.shape[0]}")
    out = arr
    for u in vectors:
        out = np.tensordot(u, out, axes=(0, 0))
    if out.ndim == 0:
        return float(out)
    return SymTensor(out)


def transform_k(arr, A, k):
    """Apply the matrix ``A`` to each of the trailing ``k`` tensor slots.

    Leading axes of ``arr`` are treated as batch axes.
    """
    if k == 0:
        return np.asarray(arr, dtype=float)
    src = _LETTERS[:k]
    dst = "pqrs"[:k]
    ops = ",".join(f"{s}{t}" for s, t in zip(src, dst))
    return np.einsum(f"...{src},{ops}->...{dst}", arr, *([A] * k), optimize=True)


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """SPD weight matrix ``H`` defining ``||x||_H = sqrt(x^T H x)``."""

    H: np.ndarray
    _eig: tuple = field(init=False, repr=False)

    def __post_init__(self):
        H = np.array(self.H, dtype=float)
        w, U = spd_eigh(H, "weight matrix")
        H.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "_eig", (w, U))

    @property
    def dim(self):
        return self.H.shape[0]

    @cached_property
    def inv_sqrt(self):
        w, U = self._eig
        return sym((U / np.sqrt(w)) @ U.T)

    @cached_property
    def sqrt(self):
        w, U = self._eig
        return sym((U * np.sqrt(w)) @ U.T)

    @property
    def min_eig(self):
        return float(self._eig[0][0])

    def norm(self, x):
        x = np.asarray(x, dtype=float)
        return np.sqrt(np.einsum("...i,ij,...j->...", x, self.H, x))


def _power_iteration(arrs, restarts, tol, max_iter, rng):
    """Shifted symmetric higher-order power method on a batch of order-k tensors.

    ``arrs`` has shape ``(B,) + (d,)*k``; returns ``max <T_b, u^k>`` over the
    unit sphere for each ``b``.
    """
    B, k, d = arrs.shape[0], arrs.ndim - 1, arrs.shape[1]
    fro = np.sqrt(np.sum(arrs.reshape(B, -1) ** 2, axis=1))
    alpha = (k - 1) * fro  # shift makes the iteration monotone
    U = rng.standard_normal((B, restarts, d))
    U /= np.linalg.norm(U, axis=-1, keepdims=True)

    def contract(U):
        # G[b, r] = T_b(u, ..., u, .) is (1/k) times the gradient at u
        G = np.broadcast_to(arrs[:, None], (B, restarts) + arrs.shape[1:])
        for _ in range(k - 1):
            G = np.einsum("br...i,bri->br...", G, U)
        return G, np.einsum("bri,bri->br", G, U)

    G, f_old = contract(U)
    for _ in range(max_iter):
        U_new = G + alpha[:, None, None] * U
        norms = np.linalg.norm(U_new, axis=-1, keepdims=True)
        U = np.where(norms > 0, U_new / np.where(norms > 0, norms, 1.0), U)
        G, f_new = contract(U)
        done = np.abs(f_new - f_old) <= tol * np.maximum(1.0, np.abs(f_new))
        f_old = f_new
        if done.all():
            break
    return np.max(f_old, axis=1)


def op_norm_many(arrs, H=None, restarts=16, tol=1e-10, max_iter=20000, seed=0):
    """Operator norms of a batch of order-k tensors of shape ``(B,) + (d,)*k``."""
    arrs = np.asarray(arrs, dtype=float)
    if arrs.ndim < 2:
        raise ShapeError("expected a batch of tensors")
    _check_shape(arrs[0])
    k = arrs.ndim - 1
    if H is not None:
        W = H if isinstance(H, WeightMatrix) else WeightMatrix(H)
        if W.dim != arrs.shape[1]:
            raise ShapeError(f"weight matrix dim {W.dim} does not match tensor dim {arrs.shape[1]}")
        arrs = transform_k(arrs, W.inv_sqrt, k)
    if k == 1:
        return np.linalg.norm(arrs, axis=1)
    if k == 2:
        return np.max(np.abs(np.linalg.eigvalsh(0.5 * (arrs + arrs.transpose(0, 2, 1)))), axis=1)
    rng = np.random.default_rng(seed)
    best = _power_iteration(arrs, restarts, tol, max_iter, rng)
    if k % 2 == 0:
        best = np.maximum(best, _power_iteration(-arrs, restarts, tol, max_iter, rng))
    return np.maximum(best, 0.0)


def op_norm(T, H=None, restarts=16, tol=1e-10, max_iter=20000, seed=0):
    """Operator norm ``sup_{||u||_H = 1} |<T, u^{⊗k}>|``.

    Exact for orders 1 and 2. Orders 3 and 4 use a shifted symmetric power
    iteration from ``restarts`` random starts (deterministic given ``seed``).
    """
    arr = _as_array(T)
    _check_shape(arr)
    return float(op_norm_many(arr[None], H, restarts, tol, max_iter, seed)[0])


def identity(dim):
    return SymTensor(np.eye(dim))


def outer_power(u, k):
    u = np.asarray(u, dtype=float)
    out = u
    for _ in range(k - 1):
        out = np.multiply.outer(out, u)
    return SymTensor(out)
