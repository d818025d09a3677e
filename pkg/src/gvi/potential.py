"""Target measures ``pi ∝ exp(-n v)`` with analytic derivatives up to order four.

Every evaluator is batched: it takes an ``(N, d)`` array of points and returns
``(N,)``, ``(N, d)``, ``(N, d, d)``, ... arrays. :meth:`Potential.v_deriv`
also accepts a single point of shape ``(d,)``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._linalg import spd_eigh, spd_power, sym
from .errors import ModeFindingError, NotSPDError, PotentialError
from .tensor import SymTensor, WeightMatrix, op_norm_many, transform_k


@dataclass(frozen=True, eq=False)
class Potential:
    """Normalized potential ``v`` together with the sample size ``n``.

    The measure of interest is ``exp(-V)`` with ``V = n v``.
    """

    dim: int
    n: float
    value: Callable
    grad: Callable
    hess: Callable
    third: Callable
    fourth: Callable | None = None
    label: str = ""
    spec: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.dim < 1:
            raise PotentialError(f"dimension must be >= 1, got {self.dim}")
        if not (np.isfinite(self.n) and self.n > 0):
            raise PotentialError(f"sample size n must be positive, got {self.n}")

    @property
    def max_order(self):
        return 4 if self.fourth is not None else 3

    def _evaluator(self, k):
        fns = (self.value, self.grad, self.hess, self.third, self.fourth)
        if k < 0 or k > 4 or fns[k] is None:
            raise PotentialError(f"{self.label or 'potential'} has no derivative of order {k}")
        return fns[k]

    def v_deriv(self, k, x):
        """k-th derivative of ``v``; ``x`` is one point ``(d,)`` or a batch ``(N, d)``."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[-1] != self.dim:
            raise PotentialError(f"point has dimension {X.shape[-1]}, potential has {self.dim}")
        out = np.asarray(self._evaluator(k)(X), dtype=float)
        return out[0] if single else out

    def V_deriv(self, k, x):
        """k-th derivative of ``V = n v``."""
        return self.n * self.v_deriv(k, x)

    def hessian_V(self, x):
        return self.n * self.v_deriv(2, x)

    def to_json(self):
        if self.spec is None:
            raise PotentialError(f"{self.label or 'potential'} is not serializable")
        return json.dumps(self.spec)


@dataclass(frozen=True)
class AssumptionConstants:
    a3: float
    a4: float
    q: float
    c0: float
    provenance: str  # "analytic" or "estimated" (applies to c0)
    a3_provenance: str = "estimated"

    def eps(self, d, n):
        return d / np.sqrt(n)

    def condition(self, d, n):
        """Left side of ``a3 d/sqrt(n) + a4 d^2/n <= 1``."""
        e = self.eps(d, n)
        return self.a3 * e + self.a4 * e**2

    def check(self, d, n):
        val = self.condition(d, n)
        if val > 1.0:
            warnings.warn(
                f"a3*d/sqrt(n) + a4*d^2/n = {val:.3g} exceeds 1; accuracy guarantees do not apply",
                stacklevel=2,
            )
        return {"second_condition": val, "second_ok": val <= 1.0, "first_condition": "not checkable"}


@dataclass(frozen=True)
class LogisticPosteriorSpec:
    X: np.ndarray
    Y: np.ndarray
    prior_precision: np.ndarray | None = None

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        Y = np.array(self.Y, dtype=float)
        if X.ndim != 2:
            raise PotentialError(f"features must be an (n, d) matrix, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise PotentialError("feature matrix has non-finite entries")
        if Y.shape != (X.shape[0],):
            raise PotentialError(f"labels must have shape ({X.shape[0]},), got {Y.shape}")
        if not np.all((Y == 0) | (Y == 1)):
            raise PotentialError("labels must be 0 or 1")
        P = np.zeros((X.shape[1],) * 2) if self.prior_precision is None else np.array(self.prior_precision, dtype=float)
        if P.shape != (X.shape[1],) * 2:
            raise PotentialError(f"prior precision must be {X.shape[1]}x{X.shape[1]}, got {P.shape}")
        if np.any(np.linalg.eigvalsh(sym(P)) < -1e-12 * max(1.0, np.abs(P).max())):
            raise PotentialError("prior precision must be positive semidefinite")
        for name, arr in (("X", X), ("Y", Y), ("prior_precision", P)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]


# ---------------------------------------------------------------- families


def make_gaussian_potential(mean, cov, n=1.0):
    """``v(x) = (x-mu)^T C^{-1} (x-mu) / (2n)``, so that ``pi = N(mu, C)``."""
    mu = np.atleast_1d(np.asarray(mean, dtype=float))
    C = np.atleast_2d(np.asarray(cov, dtype=float))
    if C.shape != (mu.size, mu.size):
        raise PotentialError(f"covariance shape {C.shape} does not match mean of length {mu.size}")
    spd_eigh(C, "covariance")
    d = mu.size
    P = sym(np.linalg.inv(C)) / n

    def value(X):
        D = X - mu
        return 0.5 * np.einsum("ni,ij,nj->n", D, P, D)

    def grad(X):
        return (X - mu) @ P

    def hess(X):
        return np.broadcast_to(P, (X.shape[0], d, d)).copy()

    def third(X):
        return np.zeros((X.shape[0],) + (d,) * 3)

    def fourth(X):
        return np.zeros((X.shape[0],) + (d,) * 4)

    spec = {"family": "gaussian", "d": d, "n": float(n), "mean": mu.tolist(), "cov": C.ravel().tolist()}
    return Potential(d, float(n), value, grad, hess, third, fourth, label="gaussian", spec=spec)


def _as_sym(T, order, d):
    if T is None:
        return np.zeros((d,) * order)
    arr = T.entries if isinstance(T, SymTensor) else np.asarray(T, dtype=float)
    if arr.shape != (d,) * order:
        raise PotentialError(f"order-{order} coefficient must have shape {(d,) * order}, got {arr.shape}")
    return SymTensor(arr).entries


def _polynomial_unbounded(value, d, rng):
    # radial probes: along a ray where the highest-order part is negative,
    # v keeps decreasing without bound
    U = rng.standard_normal((2000, d))
    U = np.vstack([U, np.eye(d), -np.eye(d)])
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    v0 = float(value(np.zeros((1, d)))[0])
    far = value(1e4 * U)
    farther = value(1e5 * U)
    return bool(np.any((farther < far) & (far < v0 - 1.0)))


def make_polynomial_potential(A, T3=None, T4=None, n=1.0, allow_unbounded=False, label="polynomial"):
    """``v(x) = x^T A x / 2 + <T3, x^3>/6 + <T4, x^4>/24``.

    The cubic-only family is unbounded below; pass ``allow_unbounded=True``
    to use it with solvers and oracles restricted to the basin of the
    minimum at the origin.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = A.shape[0]
    spd_eigh(A, "quadratic coefficient")
    A = sym(A)
    T3a = _as_sym(T3, 3, d)
    T4a = _as_sym(T4, 4, d)

    def value(X):
        return (
            0.5 * np.einsum("ni,ij,nj->n", X, A, X)
            + np.einsum("ijk,ni,nj,nk->n", T3a, X, X, X, optimize=True) / 6.0
            + np.einsum("ijkl,ni,nj,nk,nl->n", T4a, X, X, X, X, optimize=True) / 24.0
        )

    def grad(X):
        return (
            X @ A
            + np.einsum("ijk,nj,nk->ni", T3a, X, X, optimize=True) / 2.0
            + np.einsum("ijkl,nj,nk,nl->ni", T4a, X, X, X, optimize=True) / 6.0
        )

    def hess(X):
        return (
            A[None]
            + np.einsum("ijk,nk->nij", T3a, X, optimize=True)
            + np.einsum("ijkl,nk,nl->nij", T4a, X, X, optimize=True) / 2.0
        )

    def third(X):
        return T3a[None] + np.einsum("ijkl,nl->nijk", T4a, X, optimize=True)

    def fourth(X):
        return np.broadcast_to(T4a, (X.shape[0],) + T4a.shape).copy()

    if not allow_unbounded and _polynomial_unbounded(value, d, np.random.default_rng(0)):
        raise PotentialError("polynomial potential is unbounded below along a probe direction")
    spec = {
        "family": "polynomial",
        "d": d,
        "n": float(n),
        "A": A.ravel().tolist(),
        "T3": T3a.ravel().tolist(),
        "T4": T4a.ravel().tolist(),
        "allow_unbounded": bool(allow_unbounded),
    }
    return Potential(d, float(n), value, grad, hess, third, fourth, label=label, spec=spec)


def softplus(t):
    """``log(1 + e^t)`` without overflow."""
    t = np.asarray(t, dtype=float)
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def sigmoid(t):
    t = np.asarray(t, dtype=float)
    e = np.exp(-np.abs(t))
    return np.where(t >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def psi_derivs(t):
    """Derivatives 1 through 4 of ``psi(t) = log(1 + e^t)``."""
    s = sigmoid(t)
    s1 = s * (1.0 - s)
    return s, s1, s1 * (1.0 - 2.0 * s), s1 * (1.0 - 6.0 * s + 6.0 * s * s)


def make_logistic_posterior(spec):
    """Normalized negative log posterior of logistic regression."""
    if not isinstance(spec, LogisticPosteriorSpec):
        spec = LogisticPosteriorSpec(*spec)
    X, P = spec.X, spec.prior_precision
    n, d = X.shape
    xy = X.T @ spec.Y

    def value(T):
        t = T @ X.T
        return (-T @ xy + softplus(t).sum(axis=1) + 0.5 * np.einsum("ni,ij,nj->n", T, P, T)) / n

    def grad(T):
        s = sigmoid(T @ X.T)
        return (-xy[None] + s @ X + T @ P) / n

    def hess(T):
        _, s1, _, _ = psi_derivs(T @ X.T)
        return (np.einsum("nr,ri,rj->nij", s1, X, X, optimize=True) + P[None]) / n

    def third(T):
        _, _, s2, _ = psi_derivs(T @ X.T)
        return np.einsum("nr,ri,rj,rk->nijk", s2, X, X, X, optimize=True) / n

    def fourth(T):
        _, _, _, s3 = psi_derivs(T @ X.T)
        return np.einsum("nr,ri,rj,rk,rl->nijkl", s3, X, X, X, X, optimize=True) / n

    payload = {
        "family": "logistic",
        "d": d,
        "n": n,
        "X": X.ravel().tolist(),
        "Y": spec.Y.astype(int).tolist(),
        "prior_precision": P.ravel().tolist(),
    }
    pot = Potential(d, float(n), value, grad, hess, third, fourth, label="logistic", spec=payload)
    object.__setattr__(pot, "logistic", spec)
    return pot


def potential_from_json(doc):
    """Inverse of :meth:`Potential.to_json`; accepts a string or a dict."""
    if isinstance(doc, str):
        doc = json.loads(doc)
    try:
        family, d, n = doc["family"], int(doc["d"]), float(doc["n"])
    except KeyError as exc:
        raise PotentialError(f"potential document is missing field {exc}") from None
    if family == "gaussian":
        return make_gaussian_potential(
            np.asarray(doc["mean"], dtype=float), np.asarray(doc["cov"], dtype=float).reshape(d, d), n
        )
    if family == "polynomial":
        return make_polynomial_potential(
            np.asarray(doc["A"], dtype=float).reshape(d, d),
            np.asarray(doc.get("T3", np.zeros(d**3)), dtype=float).reshape((d,) * 3),
            np.asarray(doc.get("T4", np.zeros(d**4)), dtype=float).reshape((d,) * 4),
            n,
            allow_unbounded=bool(doc.get("allow_unbounded", False)),
        )
    if family == "logistic":
        X = np.asarray(doc["X"], dtype=float).reshape(-1, d)
        P = doc.get("prior_precision")
        P = np.zeros((d, d)) if P is None else np.asarray(P, dtype=float).reshape(d, d)
        return make_logistic_posterior(LogisticPosteriorSpec(X, np.asarray(doc["Y"], dtype=float), P))
    raise PotentialError(f"unknown potential family {family!r}")


# ---------------------------------------------------------------- rescaling


def affine_pullback(p, center, A, label=None):
    """Potential ``x -> v(center + A x)`` with the same ``n``."""
    c = np.asarray(center, dtype=float)
    A = np.asarray(A, dtype=float)
    d = p.dim

    def wrap(k):
        fn = p._evaluator(k) if k <= p.max_order else None
        if fn is None:
            return None

        def f(X):
            return transform_k(fn(c + X @ A.T), A, k)

        return f

    return Potential(
        d, p.n, wrap(0), wrap(1), wrap(2), wrap(3), wrap(4) if p.fourth is not None else None,
        label=label or f"{p.label}[affine]",
    )


def rescale_to_W(p, m_star, H_V):
    """``W(x) = V(m* + H_V^{-1/2} x)``: minimum at 0 with unit Hessian."""
    return affine_pullback(p, m_star, spd_power(H_V, -0.5, "H_V"), label=f"{p.label}[W]")


def rescale_to_V0(p, approx):
    """``V0(x) = V(m + S^{1/2} x)`` for a Gaussian approximation ``N(m, S)``."""
    return affine_pullback(p, approx.mean, approx.sqrt, label=f"{p.label}[V0]")


# ---------------------------------------------------------------- mode


def find_mode(p, start=None, max_iter=200):
    """Damped Newton for the minimizer of ``v``; returns ``(m*, WeightMatrix(H_v))``."""
    x = np.zeros(p.dim) if start is None else np.array(start, dtype=float)
    g0 = p.v_deriv(1, x)
    target = 1e-10 * max(1.0, float(np.linalg.norm(g0)))
    fx = float(p.v_deriv(0, x))
    g = g0
    trace = []
    for it in range(max_iter + 1):
        gn = float(np.linalg.norm(g))
        trace.append((it, fx, gn))
        if gn <= target:
            break
        if it == max_iter:
            raise ModeFindingError(
                f"mode finding did not converge in {max_iter} iterations (|grad v| = {gn:.3g})", trace=trace
            )
        H = sym(p.v_deriv(2, x))
        try:
            w, U = np.linalg.eigh(H)
            newton = w[0] > 0
        except np.linalg.LinAlgError:
            newton = False
        if newton:
            step = -(U @ ((U.T @ g) / w))
        else:
            step = -g
        slope = float(g @ step)
        if slope >= 0:
            step, slope = -g, -gn * gn
        # near the optimum the predicted decrease is below the rounding level of
        # v, so progress is judged on the gradient norm instead
        flat = -slope <= 1e-12 * max(1.0, abs(fx))
        t = 1.0
        while True:
            x_new = x + t * step
            f_new = float(p.v_deriv(0, x_new))
            if flat:
                if np.linalg.norm(p.v_deriv(1, x_new)) < gn:
                    break
            elif np.isfinite(f_new) and f_new <= fx + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-20:
                break
        if t < 1e-20:
            # no decrease possible in floating point; accept if gradient is tiny
            if gn <= 1e3 * target:
                break
            raise ModeFindingError(f"line search failed at |grad v| = {gn:.3g}", trace=trace)
        x, fx = x_new, f_new
        g = p.v_deriv(1, x)
    H = sym(p.v_deriv(2, x))
    try:
        W = WeightMatrix(H)
    except NotSPDError:
        raise ModeFindingError(
            f"Hessian at the critical point {x.tolist()} is not positive definite (saddle or degenerate)"
        ) from None
    return x, W


# ---------------------------------------------------------------- constants


def estimate_assumption_constants(
    p, m_star, H_v, probe_radius_multiples=None, sample_count=1000, seed=0, q=0.0, convex=False
):
    """Probe-based estimates of the growth constants ``a3, a4`` and ``c0``.

    Probes sit at ``m* + H_v^{-1/2} r sqrt(d/n) u`` with ``u`` uniform on the
    sphere and ``r`` drawn from ``probe_radius_multiples`` (default: a grid
    on ``[1/2, 20]``). ``a_k`` is the largest weighted operator norm of
    ``nabla^k v`` seen, discounted by ``(1 v r)^q``; ``c0`` is the smallest
    ratio ``(v(x) - v(m*)) / (sqrt(d/n) |x - m*|_{H_v})`` unless ``convex``
    is set, in which case the analytic value 1/8 is used.
    """
    Hw = H_v if isinstance(H_v, WeightMatrix) else WeightMatrix(H_v)
    d, n = p.dim, p.n
    radii = np.geomspace(0.5, 20.0, 12) if probe_radius_multiples is None else np.asarray(probe_radius_multiples, float)
    if sample_count < 1 or radii.size == 0:
        raise PotentialError("probe set is empty")
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((int(sample_count), d))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    r = radii[np.arange(int(sample_count)) % radii.size]
    scale = np.sqrt(d / n)
    pts = m_star + (r * scale)[:, None] * (U @ Hw.inv_sqrt)
    discount = np.maximum(1.0, r) ** q

    def norms(k):
        if k > p.max_order:
            return np.array([np.nan])
        return op_norm_many(p.v_deriv(k, pts), Hw, restarts=8, tol=1e-12) / discount

    a3 = float(np.max(norms(3)))
    a4 = float(np.max(norms(4)))
    if convex:
        c0, prov = 1.0 / 8.0, "analytic"
    else:
        shell = r >= 0.5
        v0 = float(p.v_deriv(0, m_star))
        gap = p.v_deriv(0, pts[shell]) - v0
        c0, prov = float(np.min(gap / (scale * r[shell] * scale))), "estimated"
    return AssumptionConstants(a3=a3, a4=a4, q=float(q), c0=c0, provenance=prov)
