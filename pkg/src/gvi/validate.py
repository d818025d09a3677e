"""Invariant suites run by ``gvi validate``.

Each check raises ``AssertionError`` with a short explanation on failure.
Module functions are looked up at call time so that a patched
implementation is what gets checked.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass

import numpy as np

from . import diagnostics, gaussian_fit, hermite, logreg_bench, oracle, potential, quadrature, tensor


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _close(a, b, tol, what):
    err = float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))
    assert err <= tol, f"{what}: deviation {err:.3g} > {tol:.1g}"
    return err


def _gh(d, L):
    return quadrature.build_rule(quadrature.GAUSS_HERMITE, d, L)


# ---------------------------------------------------------------- fixtures


def quartic_1d(n=10.0):
    return potential.make_polynomial_potential([[1.0]], None, [[[[6.0]]]], n=n, label="quartic-1d")


def cubic_1d(n=50.0, alpha=0.1):
    return potential.make_polynomial_potential([[1.0]], [[[6.0 * alpha]]], None, n=n, allow_unbounded=True, label="cubic-1d")


def logistic_2d(n=200, seed=3):
    cfg = logreg_bench.BenchConfig(seed=seed)
    return potential.make_logistic_posterior(logreg_bench.generate_dataset(cfg, n, 0))


def quartic_golden_var(n=10.0):
    # n(1 + 3 s) = 1/s for s = sigma^2, positive root
    return (-n + math.sqrt(n * n + 12 * n)) / (6 * n)


# ---------------------------------------------------------------- checks


def check_symmetrize():
    rng = np.random.default_rng(0)
    raw = rng.standard_normal((3, 3, 3))
    T = tensor.symmetrize(raw)
    assert np.array_equal(T.entries, T.entries.transpose(1, 0, 2)), "not exactly symmetric"
    _close(tensor.symmetrize(T.entries).entries, T.entries, 0.0, "idempotence")
    return "symmetrize exact and idempotent"


def check_op_norm():
    rng = np.random.default_rng(1)
    T = tensor.symmetrize(rng.standard_normal((2, 2, 2)))
    th = np.linspace(0, 2 * np.pi, 20001)
    U = np.stack([np.cos(th), np.sin(th)], axis=1)
    brute = np.max(np.abs(np.einsum("ijk,ni,nj,nk->n", T.entries, U, U, U)))
    _close(tensor.op_norm(T), brute, 1e-7, "op_norm vs circle scan")
    return f"op_norm={brute:.6f}"


def check_gh_exactness():
    rng = np.random.default_rng(2)
    for d, L in ((1, 6), (2, 4), (3, 3)):
        rule = _gh(d, L)
        for _ in range(5):
            powers = rng.integers(0, 2 * L, size=d)
            while powers.sum() > 2 * L - 1:
                powers[np.argmax(powers)] -= 1
            exact = np.prod([0.0 if p % 2 else float(np.prod(np.arange(p - 1, 0, -2))) for p in powers])
            got = quadrature.expect_scalar(rule, lambda Z: np.prod(Z**powers, axis=1))
            _close(got, exact, 1e-9, f"moment {powers.tolist()} with L={L}")
    return "monomials of degree <= 2L-1 exact"


def check_mc_determinism():
    a = quadrature.build_rule(quadrature.MONTE_CARLO, 2, 1000, seed=7)
    b = quadrature.build_rule(quadrature.MONTE_CARLO, 2, 1000, seed=7)
    assert np.array_equal(a.nodes, b.nodes), "same seed gave different nodes"
    return "seeded nodes reproducible"


def check_finite_differences():
    rng = np.random.default_rng(4)
    pots = [quartic_1d(), cubic_1d(), logistic_2d(n=60)]
    h = 1e-5
    for p in pots:
        for _ in range(5):
            x = rng.standard_normal(p.dim) * 0.5
            u = rng.standard_normal(p.dim)
            u /= np.linalg.norm(u)
            for k in range(1, p.max_order + 1):
                fd = (p.v_deriv(k - 1, x + h * u) - p.v_deriv(k - 1, x - h * u)) / (2 * h)
                an = np.tensordot(p.v_deriv(k, x), u, axes=([0], [0]))
                scale = max(1.0, float(np.max(np.abs(an))))
                _close(fd / scale, an / scale, 1e-5, f"{p.label} order {k} finite difference")
    return "orders 1-4 consistent"


def check_hermite_definition():
    rng = np.random.default_rng(5)
    rule = _gh(2, 12)
    Zc = 1j * rule.nodes
    for k in range(5):
        x = rng.standard_normal(2)
        Y = x + Zc
        outer = np.ones(rule.size, dtype=complex)
        for _ in range(k):
            outer = np.einsum("n...,ni->n...i", outer, Y)
        ref = np.real(np.tensordot(rule.weights, outer, axes=(0, 0)))
        got = hermite.hermite_tensor(k, x)
        got = got if k == 0 else got.entries
        _close(got, ref, 1e-10, f"H_{k} vs E[(x+iZ)^k]")
    xs = np.linspace(-3, 3, 7)
    for k in range(5):
        diag = [hermite.hermite_tensor(k, [x]) for x in xs]
        diag = [h if k == 0 else float(h.entries.ravel()[0]) for h in diag]
        _close(diag, hermite.hermite_1d(k, xs), 1e-10, f"1-D H_{k} recurrence")
    return "matches complex-shift expectation and 1-D recurrence"


def check_hermite_orthogonality():
    rule = _gh(2, 8)
    d = 2
    feats = []
    for k in range(5):
        H = np.stack([np.ravel(hermite.hermite_tensor(k, z).entries if k else [1.0]) for z in rule.nodes])
        idx = np.indices((d,) * k).reshape(k, -1).T if k else np.zeros((1, 0), dtype=int)
        for j, multi in enumerate(idx):
            if k and list(multi) != sorted(multi):
                continue
            gamma = np.bincount(multi, minlength=d) if k else np.zeros(d, dtype=int)
            feats.append((tuple(gamma), H[:, j]))
    G = np.array([[rule.weights @ (a * b) for _, b in feats] for _, a in feats])
    expected = np.diag([float(np.prod([math.factorial(g) for g in gam])) for gam, _ in feats])
    _close(G, expected, 1e-10, "E[H_g H_g'] = g! delta")
    return f"{len(feats)} multi-indices orthogonal"


def check_remainder():
    rng = np.random.default_rng(6)
    rule = _gh(1, 40)
    p = potential.make_polynomial_potential([[1.0]], None, [[[[0.24]]]], n=1.0)
    coeffs = hermite.coeffs_via_derivatives(p, rule, 4)
    for x in rng.uniform(-2, 2, 5):
        for k in (3, 4):
            _close(hermite.remainder_rk(p, rule, k, [x]), hermite.truncation_residual(p, coeffs, k, [x]), 1e-7, f"r_{k}({x:.3f})")
    return "integral remainder equals direct truncation"


def check_gaussian_exactness():
    mu, C = np.array([0.3, -1.0]), np.array([[2.0, 0.4], [0.4, 0.5]])
    p = potential.make_gaussian_potential(mu, C, n=7.0)
    rule = _gh(2, 20)
    vi, _ = gaussian_fit.vi_fit_contraction(p, rule)
    lap = gaussian_fit.laplace_fit(p)
    for a in (vi, lap):
        _close(a.mean, mu, 1e-10, f"{a.method} mean")
        _close(a.cov, C, 1e-10, f"{a.method} covariance")
    return "VI and Laplace exact"


def check_quartic_golden():
    p = quartic_1d()
    rule = _gh(1, 20)
    a, _ = gaussian_fit.vi_fit_contraction(p, rule)
    b, _ = gaussian_fit.vi_fit_fixed_point(p, rule)
    ref = quartic_golden_var()
    _close(a.cov[0, 0], ref, 1e-10, "contraction variance")
    _close(b.cov[0, 0], ref, 1e-8, "fixed-point variance")
    return f"variance {ref:.12f}"


def check_stationarity_and_cancellation():
    rule = _gh(2, 20)
    p = logistic_2d()
    approx, rep = gaussian_fit.vi_fit_contraction(p, rule)
    assert rep.grad_residual <= 1e-8, f"gradient residual {rep.grad_residual:.3g}"
    assert rep.hess_residual <= 1e-6, f"Hessian residual {rep.hess_residual:.3g}"
    V0 = potential.rescale_to_V0(p, approx)
    A = hermite.coeffs_via_derivatives(V0, rule, 2)
    _close(A[1].entries, 0.0, 1e-6, "A1(V0)")
    _close(A[2].entries, np.eye(2), 1e-6, "A2(V0)")
    mode = potential.find_mode(p)
    eig = gaussian_fit.sandwich_eigenvalues(approx, p.n * mode[1].H)
    assert 2 / 3 - 1e-6 <= eig[0] and eig[-1] <= 2 + 1e-6, f"sandwich eigenvalues {eig}"
    return f"residuals {rep.grad_residual:.1e}/{rep.hess_residual:.1e}"


def check_oracle_gaussian():
    mu, C = np.array([0.5, -0.2]), np.array([[1.0, 0.3], [0.3, 0.8]]) / 50
    p = potential.make_gaussian_potential(mu, C, n=50.0)
    ev = oracle.GridEvaluation(p, oracle.default_grid(p, 256))
    m, S = ev.moments()
    _close(m, mu, 1e-8, "grid mean")
    _close(S, C, 1e-8, "grid covariance")
    return "Gaussian moments recovered"


def check_oracle_tv():
    p = potential.make_gaussian_potential([0.0], [[1.0]], n=1.0)
    # |p - q| has a kink, so the trapezoid rule is only second order here
    ev = oracle.GridEvaluation(p, oracle.GridSpec((0.5,), (1.0,), 14.0, 16385))
    approx = gaussian_fit.GaussianApprox([1.0], [[1.0]], "laplace")
    ref = math.erf(0.5 / math.sqrt(2.0))  # 2 Phi(1/2) - 1
    _close(ev.tv(approx), ref, 2e-7, "TV(N(0,1), N(1,1))")
    return f"TV={ref:.10f}"


def check_slopes_and_rates():
    ns = np.arange(100, 1001, 100)
    fit = diagnostics.fit_loglog_slope(list(zip(ns, 10.0 / ns)))
    _close(fit.slope, -1.0, 1e-12, "slope of 10/n")
    _close(fit.r2, 1.0, 1e-12, "r^2")
    r = diagnostics.rate_prediction(potential.AssumptionConstants(1, 1, 0, 0.125, "analytic"), 2, 100)
    _close([r.general, r.even, r.linear], [0.24, 0.08, 0.0176], 1e-12, "rates")
    return "slope fitter and rate arithmetic exact"


def check_oracle_refinement():
    for p in (cubic_1d(n=100.0), logistic_2d(n=300)):
        grid = oracle.default_grid(p, 256 if p.dim == 1 else 128)
        rep = oracle.refinement_check(p, grid)
        assert rep.passed, f"{p.label}: refinement change {rep.max_rel_change:.3g}"
    return "P -> 2P stable"


def check_remainder_fixtures():
    rng = np.random.default_rng(7)
    fixtures = [
        (potential.make_polynomial_potential([[1.0]], [[[0.3]]], [[[[0.5]]]], n=1.0), _gh(1, 40)),
        (quartic_1d(n=1.0), _gh(1, 40)),
        (potential.rescale_to_V0(logistic_2d(n=100), gaussian_fit.laplace_fit(logistic_2d(n=100))), _gh(2, 30)),
    ]
    for p, rule in fixtures:
        coeffs = hermite.coeffs_via_derivatives(p, rule, 4)
        for _ in range(50):
            x = rng.uniform(-2, 2, p.dim)
            for k in (3, 4):
                _close(
                    hermite.remainder_rk(p, rule, k, x), hermite.truncation_residual(p, coeffs, k, x), 1e-7,
                    f"{p.label} r_{k}",
                )
    return "three fixtures x 50 probes"


def check_solver_agreement():
    rule = _gh(2, 20)
    p = logistic_2d(n=150)
    a, _ = gaussian_fit.vi_fit_contraction(p, rule)
    b, rep = gaussian_fit.vi_fit_fixed_point(p, rule, tol=1e-10)
    _close(a.mean, b.mean, 1e-9, "means")
    _close(a.cov, b.cov, 1e-9, "covariances")
    return f"fixed point converged in {rep.outer_iterations} iterations"


def check_bench_determinism():
    cfg = logreg_bench.BenchConfig(n_grid=(100, 200, 400), replicates=3, grid_points=128, seed=11)
    outs = []
    for _ in range(2):
        with tempfile.TemporaryDirectory() as tmp:
            recs, summ = logreg_bench.run_benchmark(cfg)
            paths = logreg_bench.emit_outputs(recs, summ, tmp, cfg)
            outs.append(tuple(open(paths[k]).read() for k in ("records", "summary", "slopes")))
    assert outs[0] == outs[1], "benchmark outputs differ between identical runs"
    return "reduced benchmark byte-identical"


QUICK = [
    check_symmetrize,
    check_op_norm,
    check_gh_exactness,
    check_mc_determinism,
    check_finite_differences,
    check_hermite_definition,
    check_hermite_orthogonality,
    check_remainder,
    check_gaussian_exactness,
    check_quartic_golden,
    check_stationarity_and_cancellation,
    check_oracle_gaussian,
    check_oracle_tv,
    check_slopes_and_rates,
]
FULL = QUICK + [check_oracle_refinement, check_remainder_fixtures, check_solver_agreement, check_bench_determinism]


def run_suite(level="quick"):
    checks = {"quick": QUICK, "full": FULL}[level]
    results = []
    for fn in checks:
        name = fn.__name__.removeprefix("check_")
        t0 = time.perf_counter()
        try:
            detail, ok = fn(), True
        except Exception as exc:  # every failure is reported, none aborts the suite
            detail, ok = f"{type(exc).__name__}: {exc}", False
        results.append(CheckResult(name, ok, detail, time.perf_counter() - t0))
    return results
