"""Laplace and Gaussian variational approximations.

The variational fit solves the stationarity conditions

    E[grad V(m + S^{1/2} Z)] = 0,    E[hess V(m + S^{1/2} Z)] = S^{-1}

for the canonical solution near the Laplace point, either by the nested
contraction in whitened coordinates (:func:`vi_fit_contraction`, the
reference solver) or by a damped fixed-point iteration
(:func:`vi_fit_fixed_point`).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._linalg import opnorm, spd_eigh, spd_power, sym
from .errors import NotSPDError, RegionError, SolverError
from .potential import find_mode, rescale_to_W
from .quadrature import default_rule, expect_array

LAPLACE = "laplace"
VI_CONTRACTION = "vi_contraction"
VI_FIXED_POINT = "vi_fixed_point"
SANDWICH = (2.0 / 3.0, 2.0)
REGION_RADIUS2 = 8.0


def spd_sqrt(M):
    """Symmetric positive definite square root via eigendecomposition."""
    return spd_power(M, 0.5, "matrix")


@dataclass(frozen=True, eq=False)
class GaussianApprox:
    mean: np.ndarray
    cov: np.ndarray
    method: str

    def __post_init__(self):
        m = np.atleast_1d(np.array(self.mean, dtype=float))
        S = np.atleast_2d(np.array(self.cov, dtype=float))
        if S.shape != (m.size, m.size):
            raise NotSPDError(f"covariance shape {S.shape} does not match mean of length {m.size}")
        spd_eigh(S, "covariance")
        S = sym(S)
        m.setflags(write=False)
        S.setflags(write=False)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", S)

    @property
    def dim(self):
        return self.mean.size

    @cached_property
    def sqrt(self):
        return spd_power(self.cov, 0.5, "covariance")

    @cached_property
    def inv(self):
        return spd_power(self.cov, -1.0, "covariance")

    @cached_property
    def inv_sqrt(self):
        return spd_power(self.cov, -0.5, "covariance")

    def to_dict(self):
        return {"method": self.method, "mean": self.mean.tolist(), "cov": self.cov.ravel().tolist()}


@dataclass
class SolveReport:
    outer_iterations: int = 0
    inner_iterations: list = field(default_factory=list)
    grad_residual: float = float("nan")
    hess_residual: float = float("nan")
    step_norms: list = field(default_factory=list)
    contraction_factors: list = field(default_factory=list)
    wall_time: float = 0.0
    rule: str = ""

    def to_dict(self):
        return {
            "outer_iterations": self.outer_iterations,
            "inner_iterations": list(self.inner_iterations),
            "grad_residual": self.grad_residual,
            "hess_residual": self.hess_residual,
            "contraction_factors": list(self.contraction_factors),
            "wall_time": self.wall_time,
            "rule": self.rule,
        }


def fit_to_json(approx, report=None):
    doc = approx.to_dict()
    if report is not None:
        doc["report"] = report.to_dict()
    return json.dumps(doc)


def laplace_fit(p, start=None, mode=None):
    """``N(m*, (n hess v(m*))^{-1})``."""
    m_star, Hv = find_mode(p, start) if mode is None else mode
    return GaussianApprox(m_star, np.linalg.inv(p.n * Hv.H), LAPLACE)


def gaussian_moments(p, rule, mean, sqrt):
    """``E[grad V(m + S^{1/2} Z)]`` and ``E[hess V(m + S^{1/2} Z)]``."""
    pts = mean + rule.nodes @ sqrt.T
    g = expect_array(rule, lambda _: p.V_deriv(1, pts))
    H = sym(expect_array(rule, lambda _: p.V_deriv(2, pts)))
    return g, H


def stationarity_residuals(p, rule, approx):
    """Whitened residuals ``|S^{1/2} E grad V|`` and ``|S^{1/2} E hess V S^{1/2} - I|``.

    Both are dimensionless and invariant under affine reparametrization.
    """
    g, H = gaussian_moments(p, rule, approx.mean, approx.sqrt)
    R = approx.sqrt
    grad_res = float(np.linalg.norm(R @ g))
    hess_res = opnorm(R @ H @ R - np.eye(p.dim))
    return grad_res, hess_res, g, H


def _check_rule(p, rule):
    if rule is None:
        return default_rule(p.dim)
    if rule.dim != p.dim:
        raise SolverError(f"quadrature rule has dim {rule.dim}, potential has dim {p.dim}")
    return rule


def vi_fit_contraction(p, rule=None, tol=1e-10, max_outer=100, max_inner=50, mode=None, slack=1e-8):
    """Canonical variational fit by nested contraction in whitened coordinates.

    Works with ``W(x) = V(m* + H_V^{-1/2} x)``. For fixed ``sigma`` the inner
    Newton loop solves ``E[grad W(m + sigma Z)] = 0``; the outer loop maps
    ``sigma`` to ``E[hess W(m(sigma) + sigma Z)]^{-1/2}``. Returns
    ``m = m* + H_V^{-1/2} m_W`` and ``S = H_V^{-1/2} sigma^2 H_V^{-1/2}``.
    """
    t0 = time.perf_counter()
    rule = _check_rule(p, rule)
    m_star, Hv = find_mode(p) if mode is None else mode
    H_V = p.n * Hv.H
    Hm = spd_power(H_V, -0.5, "H_V")
    W = rescale_to_W(p, m_star, H_V)
    d = p.dim
    Z = rule.nodes
    report = SolveReport(rule=rule.describe())

    def moments(m, sigma, order):
        pts = m + Z @ sigma.T
        return expect_array(rule, lambda _: W.V_deriv(order, pts))

    def check_region(m, sigma, where):
        r2 = opnorm(sigma) ** 2 + float(m @ m)
        if r2 > REGION_RADIUS2 + slack:
            raise RegionError(
                f"{where}: iterate left the uniqueness region (|sigma|^2 + |m|^2 = {r2:.4g} > 8)",
                m=m.tolist(),
                sigma=sigma.tolist(),
            )

    def solve_m(sigma, m):
        for it in range(1, max_inner + 1):
            g = moments(m, sigma, 1)
            J = sym(moments(m, sigma, 2))
            try:
                w, U = spd_eigh(J, "E[hess W]")
            except NotSPDError as exc:
                raise SolverError(
                    f"E[hess W] is not positive definite at m={m.tolist()}; iterate left the basin",
                    m=m.tolist(),
                    sigma=sigma.tolist(),
                ) from exc
            step = U @ ((U.T @ g) / w)
            m = m - step
            if np.linalg.norm(step) <= tol / 10:
                return m, it
        raise SolverError(f"inner Newton did not converge in {max_inner} iterations", sigma=sigma.tolist())

    sigma = np.eye(d)
    m = np.zeros(d)
    prev_step = None
    for outer in range(1, max_outer + 1):
        m, inner_its = solve_m(sigma, m)
        report.inner_iterations.append(inner_its)
        check_region(m, sigma, f"outer iteration {outer}")
        J = sym(moments(m, sigma, 2))
        try:
            sigma_new = spd_power(J, -0.5, "E[hess W]")
        except NotSPDError as exc:
            raise SolverError(
                f"E[hess W] is not positive definite at outer iteration {outer}; iterate left the basin",
                m=m.tolist(),
                sigma=sigma.tolist(),
            ) from exc
        step = float(np.linalg.norm(sigma_new - sigma))
        report.step_norms.append(step)
        if prev_step is not None and prev_step > 0:
            report.contraction_factors.append(step / prev_step)
        prev_step = step
        sigma = sigma_new
        report.outer_iterations = outer
        if step <= tol:
            m, inner_its = solve_m(sigma, m)
            report.inner_iterations.append(inner_its)
            break
    else:
        raise SolverError(f"outer iteration did not converge in {max_outer} steps (last step {prev_step:.3g})")

    check_region(m, sigma, "solution")
    eig = np.linalg.eigvalsh(sigma)
    lo, hi = np.sqrt(SANDWICH[0]), np.sqrt(SANDWICH[1])
    if eig[0] < lo - slack or eig[-1] > hi + slack:
        raise RegionError(
            f"solution sigma has eigenvalues [{eig[0]:.6g}, {eig[-1]:.6g}] outside [{lo:.6g}, {hi:.6g}]",
            sigma=sigma.tolist(),
        )
    mean = m_star + Hm @ m
    cov = sym(Hm @ sigma @ sigma @ Hm)
    approx = GaussianApprox(mean, cov, VI_CONTRACTION)
    report.grad_residual, report.hess_residual, _, _ = stationarity_residuals(p, rule, approx)
    report.wall_time = time.perf_counter() - t0
    return approx, report


def vi_fit_fixed_point(p, rule=None, damping=1.0, tol=1e-10, max_iter=500, start=None):
    """Damped fixed-point iteration on the stationarity conditions.

    Each step sets ``S <- (1-b) S + b E[hess V]^{-1}`` and then
    ``m <- m - b S E[grad V]`` with the updated ``S``. Starts from the
    Laplace approximation unless ``start`` is given.
    """
    if not 0.0 < damping <= 1.0:
        raise ValueError(f"damping must lie in (0, 1], got {damping}")
    t0 = time.perf_counter()
    rule = _check_rule(p, rule)
    approx = laplace_fit(p) if start is None else start
    m, S = approx.mean.copy(), approx.cov.copy()
    report = SolveReport(rule=rule.describe())
    for it in range(1, max_iter + 1):
        R = spd_power(S, 0.5, "covariance")
        _, H = gaussian_moments(p, rule, m, R)
        try:
            H_inv = spd_power(H, -1.0, "E[hess V]")
        except NotSPDError as exc:
            raise SolverError(f"E[hess V] is not positive definite at iteration {it}", m=m.tolist()) from exc
        S_new = sym((1.0 - damping) * S + damping * H_inv)
        R_new = spd_power(S_new, 0.5, "covariance")
        g, _ = gaussian_moments(p, rule, m, R_new)
        m_new = m - damping * S_new @ g
        step = float(np.linalg.norm(S_new - S) + np.linalg.norm(m_new - m))
        if report.step_norms and report.step_norms[-1] > 0:
            report.contraction_factors.append(step / report.step_norms[-1])
        report.step_norms.append(step)
        m, S = m_new, S_new
        report.outer_iterations = it
        cand = GaussianApprox(m, S, VI_FIXED_POINT)
        gr, hr, _, _ = stationarity_residuals(p, rule, cand)
        if gr <= tol and hr <= tol:
            report.grad_residual, report.hess_residual = gr, hr
            report.wall_time = time.perf_counter() - t0
            return cand, report
    raise SolverError(f"fixed-point iteration did not converge in {max_iter} iterations (residuals {gr:.3g}, {hr:.3g})")


def sandwich_eigenvalues(approx, H_V):
    """Eigenvalues of ``H_V^{1/2} S H_V^{1/2}``; the canonical fit has them in [2/3, 2]."""
    R = spd_power(H_V, 0.5, "H_V")
    return np.linalg.eigvalsh(sym(R @ approx.cov @ R))
