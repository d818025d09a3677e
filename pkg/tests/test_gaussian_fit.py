import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import cubic, gh, logistic, quartic
from gvi.errors import NotSPDError, RegionError, SolverError
from gvi.gaussian_fit import (
    GaussianApprox,
    fit_to_json,
    laplace_fit,
    sandwich_eigenvalues,
    spd_sqrt,
    stationarity_residuals,
    vi_fit_contraction,
    vi_fit_fixed_point,
)
from gvi.hermite import coeffs_via_derivatives
from gvi.potential import find_mode, make_polynomial_potential, rescale_to_V0


def bisect(f, lo, hi, iters=200):
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def quartic_sigma2_by_bisection(n):
    """Root of n E[v''(sigma Z)] - sigma^{-2} using a 200-node rule for the expectation."""
    rule = gh(1, 200)
    z = rule.nodes[:, 0]

    def f(s):
        return n * float(rule.weights @ (1 + 3 * (s * z) ** 2)) - 1 / s**2

    return bisect(f, 1e-3, 1.0) ** 2


def cubic_kl_grid_minimizer(n, alpha=0.1):
    """Minimize KL(N(m, s^2) || pi) for V = n(x^2/2 + alpha x^3) by a zooming 2-D grid.

    Up to a constant the objective is E[V(m + sZ)] - log s with
    E[V] = n((m^2 + s^2)/2 + alpha(m^3 + 3 m s^2)).
    """

    def kl(m, s):
        return n * ((m**2 + s**2) / 2 + alpha * (m**3 + 3 * m * s**2)) - np.log(s)

    m0, s0 = 0.0, 1 / math.sqrt(n)
    hm, hs = 0.5 * s0, 0.5 * s0
    for _ in range(12):
        M, S = np.meshgrid(np.linspace(m0 - hm, m0 + hm, 201), np.linspace(max(s0 - hs, 1e-6), s0 + hs, 201))
        j = np.argmin(kl(M, S))
        m0, s0 = M.flat[j], S.flat[j]
        hm, hs = hm / 10, hs / 10
    return m0, s0


class TestSpdSqrt:
    def test_examples(self):
        np.testing.assert_allclose(spd_sqrt(np.eye(3)), np.eye(3))
        np.testing.assert_allclose(spd_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))

    def test_random_multiply_back(self, rng):
        A = rng.standard_normal((5, 5))
        M = A @ A.T + 0.1 * np.eye(5)
        R = spd_sqrt(M)
        assert np.linalg.norm(R @ R - M) / np.linalg.norm(M) < 1e-11
        assert np.all(np.linalg.eigvalsh(R) > 0)
        np.testing.assert_array_equal(R, R.T)

    def test_rejects_non_spd(self):
        with pytest.raises(NotSPDError):
            spd_sqrt(np.diag([1.0, 0.0]))
        with pytest.raises(NotSPDError):
            spd_sqrt(np.array([[1.0, 2.0], [0.0, 1.0]]))


class TestGaussianApprox:
    def test_cached_roots(self, rng):
        A = rng.standard_normal((3, 3))
        a = GaussianApprox(np.zeros(3), A @ A.T + np.eye(3), "laplace")
        np.testing.assert_allclose(a.sqrt @ a.sqrt, a.cov, atol=1e-10)
        np.testing.assert_allclose(a.inv @ a.cov, np.eye(3), atol=1e-10)

    def test_rejects_bad_covariance(self):
        with pytest.raises(NotSPDError):
            GaussianApprox([0.0, 0.0], np.diag([1.0, -1.0]), "laplace")

    def test_json(self):
        a = GaussianApprox([1.0], [[2.0]], "laplace")
        assert '"mean": [1.0]' in fit_to_json(a)


class TestLaplace:
    def test_gaussian_exact(self, gaussian2d):
        mu, C, p = gaussian2d
        a = laplace_fit(p)
        np.testing.assert_allclose(a.mean, mu, atol=1e-10)
        np.testing.assert_allclose(a.cov, C, atol=1e-10)

    def test_quartic(self):
        a = laplace_fit(quartic(n=10))
        assert a.mean[0] == pytest.approx(0.0, abs=1e-12)
        assert a.cov[0, 0] == pytest.approx(0.1)

    def test_logistic_hessian_matches_fd(self):
        p = logistic(n=250, seed=8)
        a = laplace_fit(p)
        m, h = a.mean, 1e-4
        fd = np.empty((2, 2))
        for i in range(2):
            for j in range(2):
                ei, ej = np.eye(2)[i] * h, np.eye(2)[j] * h
                fd[i, j] = (
                    p.V_deriv(0, m + ei + ej) - p.V_deriv(0, m + ei - ej) - p.V_deriv(0, m - ei + ej) + p.V_deriv(0, m - ei - ej)
                ) / (4 * h * h)
        np.testing.assert_allclose(np.linalg.inv(a.cov), fd, rtol=1e-5)


class TestContraction:
    def test_gaussian_one_outer_iteration(self, gaussian2d):
        mu, C, p = gaussian2d
        a, rep = vi_fit_contraction(p, gh(2, 20))
        assert rep.outer_iterations == 1
        np.testing.assert_allclose(a.mean, mu, atol=1e-10)
        np.testing.assert_allclose(a.cov, C, atol=1e-10)

    def test_quartic_golden(self):
        golden = quartic_sigma2_by_bisection(10.0)
        # closed form of 10(1 + 3 s) = 1/s cross-checks the bisection oracle
        assert golden == pytest.approx((-10 + math.sqrt(220)) / 60, abs=1e-14)
        a, _ = vi_fit_contraction(quartic(n=10), gh(1, 20), tol=1e-10)
        assert a.mean[0] == pytest.approx(0.0, abs=1e-14)
        assert a.cov[0, 0] == pytest.approx(golden, abs=1e-10)
        tight, _ = vi_fit_contraction(quartic(n=10), gh(1, 20), tol=1e-12)
        assert tight.cov[0, 0] == pytest.approx(golden, abs=1e-13)

    def test_cubic_matches_kl_grid(self):
        m_ref, s_ref = cubic_kl_grid_minimizer(50.0)
        a, _ = vi_fit_contraction(cubic(n=50), gh(1, 20))
        assert a.mean[0] == pytest.approx(m_ref, abs=1e-4)
        assert math.sqrt(a.cov[0, 0]) == pytest.approx(s_ref, abs=1e-4)

    def test_stationarity_and_cancellation(self, logistic2d):
        rule = gh(2, 20)
        a, rep = vi_fit_contraction(logistic2d, rule, tol=1e-10)
        gr, hr, g, H = stationarity_residuals(logistic2d, rule, a)
        assert gr <= 1e-10 and hr <= 1e-10
        np.testing.assert_allclose(H, a.inv, rtol=1e-9)
        A = coeffs_via_derivatives(rescale_to_V0(logistic2d, a), rule, 2)
        np.testing.assert_allclose(A[1].entries, 0.0, atol=1e-9)
        np.testing.assert_allclose(A[2].entries, np.eye(2), atol=1e-9)

    def test_sandwich_and_contraction_factor(self, logistic2d):
        a, rep = vi_fit_contraction(logistic2d, gh(2, 20))
        m, Hv = find_mode(logistic2d)
        eig = sandwich_eigenvalues(a, logistic2d.n * Hv.H)
        assert 2 / 3 - 1e-6 <= eig[0] <= eig[-1] <= 2 + 1e-6
        assert all(f <= 0.9 for f in rep.contraction_factors)

    def test_region_violation(self):
        # at n = 1 the quartic is far from Gaussian and the map leaves the sandwich
        p = make_polynomial_potential([[1.0]], None, [[[[6.0]]]], n=1.0)
        with pytest.raises(RegionError):
            vi_fit_contraction(p, gh(1, 20))

    def test_dimension_mismatch(self):
        with pytest.raises(SolverError):
            vi_fit_contraction(quartic(), gh(2, 5))

    @settings(max_examples=15, deadline=None)
    @given(st.floats(20, 2000), st.floats(-0.3, 0.3))
    def test_sandwich_property_on_cubics(self, n, alpha):
        p = make_polynomial_potential([[1.0]], [[[6 * alpha]]], [[[[1.0]]]], n=n)
        a, rep = vi_fit_contraction(p, gh(1, 20))
        eig = sandwich_eigenvalues(a, n * p.v_deriv(2, find_mode(p)[0]))
        assert 2 / 3 - 1e-6 <= eig[0] and eig[-1] <= 2 + 1e-6
        assert rep.grad_residual <= 1e-9


class TestFixedPoint:
    def test_gaussian_two_iterations(self, gaussian2d):
        mu, C, p = gaussian2d
        a, rep = vi_fit_fixed_point(p, gh(2, 20), damping=1.0)
        assert rep.outer_iterations <= 2
        np.testing.assert_allclose(a.cov, C, atol=1e-10)

    def test_quartic_matches_golden(self):
        a, _ = vi_fit_fixed_point(quartic(n=10), gh(1, 20))
        assert a.cov[0, 0] == pytest.approx(quartic_sigma2_by_bisection(10.0), abs=1e-8)

    def test_logistic_converges_fast(self, logistic2d):
        a, rep = vi_fit_fixed_point(logistic2d, gh(2, 20), damping=1.0, tol=1e-9)
        assert rep.outer_iterations <= 100
        assert rep.grad_residual <= 1e-9 and rep.hess_residual <= 1e-9

    @pytest.mark.parametrize("make", [quartic, cubic, lambda: logistic(n=120, seed=2), lambda: logistic(n=500, seed=6)])
    def test_agrees_with_contraction(self, make):
        p = make()
        tol = 1e-10
        rule = gh(p.dim, 20)
        a, _ = vi_fit_contraction(p, rule, tol=tol)
        b, _ = vi_fit_fixed_point(p, rule, tol=tol, damping=0.7)
        scale = math.sqrt(np.max(np.diag(a.cov)))
        np.testing.assert_allclose(a.mean / scale, b.mean / scale, atol=10 * tol)
        np.testing.assert_allclose(a.cov / scale**2, b.cov / scale**2, atol=10 * tol)

    def test_bad_damping(self):
        with pytest.raises(ValueError):
            vi_fit_fixed_point(quartic(), gh(1, 5), damping=0.0)

    def test_iteration_cap(self):
        with pytest.raises(SolverError):
            vi_fit_fixed_point(logistic(n=100), gh(2, 10), tol=1e-30, max_iter=3)
