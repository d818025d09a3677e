"""Error metrics, correction-term accuracy, rate predictions and slope fits."""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from ._linalg import opnorm, sym
from .errors import DiagnosticsError
from .gaussian_fit import LAPLACE, stationarity_residuals
from .hermite import CorrectionTerm, p3_eval
from .oracle import MAX_DIM
from .quadrature import default_rule, expect_scalar

LINEAR, EVEN, GENERAL = "linear", "even", "general"


@dataclass(frozen=True)
class GFunction:
    """A batched scalar test function ``g`` and the rate class it belongs to."""

    name: str
    fn: object
    kind: str

    def __call__(self, X):
        return self.fn(X)


def default_g_suite(center):
    """Coordinates, centred squares, a half-space indicator and a coordinate cube."""
    c = np.asarray(center, dtype=float)
    suite = []
    for i in range(c.size):
        suite.append(GFunction(f"x{i + 1}", lambda X, i=i: X[:, i], LINEAR))
    for i in range(c.size):
        suite.append(GFunction(f"(x{i + 1}-m{i + 1})^2", lambda X, i=i: (X[:, i] - c[i]) ** 2, EVEN))
    suite.append(GFunction("1{x1>=m1}", lambda X: (X[:, 0] >= c[0]).astype(float), GENERAL))
    suite.append(GFunction("(x1-m1)^3", lambda X: (X[:, 0] - c[0]) ** 3, GENERAL))
    return suite


@dataclass
class GError:
    name: str
    kind: str
    truth: float
    approx: float
    raw: float
    correction: float | None = None
    corrected: float | None = None
    sd: float = float("nan")  # Var_{approx}(g)^{1/2}


@dataclass
class ErrorReport:
    method: str
    d: int
    n: float
    eps: float
    mean_err: float = float("nan")
    mean_err_scaled: float = float("nan")
    mean_err_weighted: float = float("nan")
    cov_err: float = float("nan")
    cov_err_scaled: float = float("nan")
    cov_err_weighted: float = float("nan")
    tv: float = float("nan")
    grad_residual: float = float("nan")
    hess_residual: float = float("nan")
    g_errors: list = field(default_factory=list)
    oracle_available: bool = True
    flag: str = ""

    def rows(self, label="", replicate=0):
        """Long-format rows ``(label, d, n, replicate, method, metric, value)``."""
        out = []
        for key in (
            "mean_err", "mean_err_scaled", "mean_err_weighted", "cov_err", "cov_err_scaled",
            "cov_err_weighted", "tv", "grad_residual", "hess_residual",
        ):
            out.append((label, self.d, self.n, replicate, self.method, key, getattr(self, key)))
        for ge in self.g_errors:
            out.append((label, self.d, self.n, replicate, self.method, f"raw[{ge.name}]", ge.raw))
            if ge.corrected is not None:
                out.append((label, self.d, self.n, replicate, self.method, f"corrected[{ge.name}]", ge.corrected))
        return out

    def to_dict(self):
        return asdict(self)


def error_report(p, vi, laplace, oracle_eval=None, g_suite=None, rule=None):
    """Compare a variational and a Laplace fit against the grid oracle.

    Returns ``(vi_report, laplace_report)``. The corrected column
    ``|int g dpi - int g dvi - int g Q dvi|`` is filled for the variational
    fit only. Gaussian-side integrals are taken on the oracle grid so that
    discontinuous ``g`` are handled consistently. Without an oracle (d > 3)
    the reports carry residuals only and are flagged.
    """
    d, n = p.dim, p.n
    rule = default_rule(d) if rule is None else rule
    suite = default_g_suite(vi.mean) if g_suite is None else g_suite
    reports = []
    Q = CorrectionTerm(p, vi, rule)
    truth_mean = truth_cov = None
    if oracle_eval is not None:
        truth_mean, truth_cov = oracle_eval.moments()
        truths = {g.name: oracle_eval.integrate(g) for g in suite}
    for approx in (vi, laplace):
        rep = ErrorReport(approx.method, d, n, d / math.sqrt(n))
        rep.grad_residual, rep.hess_residual, _, _ = stationarity_residuals(p, rule, approx)
        if oracle_eval is None:
            rep.oracle_available = False
            rep.flag = "unverified dimension" if d > MAX_DIM else "oracle unavailable"
            reports.append(rep)
            continue
        dm = approx.mean - truth_mean
        rep.mean_err = float(np.linalg.norm(dm))
        rep.mean_err_scaled = math.sqrt(n) * rep.mean_err
        rep.mean_err_weighted = float(np.linalg.norm(approx.inv_sqrt @ dm))
        dC = approx.cov - truth_cov
        rep.cov_err = opnorm(dC)
        rep.cov_err_scaled = n * rep.cov_err
        rep.cov_err_weighted = opnorm(sym(approx.inv_sqrt @ dC @ approx.inv_sqrt))
        rep.tv = oracle_eval.tv(approx)
        for g in suite:
            gi = oracle_eval.gaussian_integrate(approx, g)
            g2 = oracle_eval.gaussian_integrate(approx, lambda X, g=g: g(X) ** 2)
            ge = GError(g.name, g.kind, truths[g.name], gi, abs(truths[g.name] - gi), sd=math.sqrt(max(g2 - gi * gi, 0.0)))
            if approx.method != LAPLACE:
                ge.correction = oracle_eval.gaussian_integrate(approx, lambda X, g=g: g(X) * Q(X))
                ge.corrected = abs(truths[g.name] - gi - ge.correction)
            rep.g_errors.append(ge)
        reports.append(rep)
    return reports[0], reports[1]


def correction_integral_whitened(p, approx, rule, g):
    """``-int f p3 dgamma`` with ``f(z) = g(m + S^{1/2} z)``; equals ``int g Q d approx``."""
    Q = CorrectionTerm(p, approx, rule)
    pts = approx.mean + rule.nodes @ approx.sqrt.T
    return -expect_scalar(rule, lambda Z: g(pts) * p3_eval(Q.A3, Z))


def reports_to_csv(reports, label="", replicate=0):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "d", "n", "replicate", "method", "metric", "value"])
    for rep in reports:
        for row in rep.rows(label, replicate):
            w.writerow(list(row[:-1]) + [repr(float(row[-1]))])
    return buf.getvalue()


def reports_to_json(reports):
    return json.dumps([r.to_dict() for r in reports], default=float)


# ---------------------------------------------------------------- rates


@dataclass(frozen=True)
class RatePrediction:
    eps: float
    general: float
    even: float
    linear: float


def rate_prediction(consts, d, n):
    """Constant-free error rates for general, even and linear test functions."""
    a3, a4 = float(consts.a3), float(consts.a4)
    if not (math.isfinite(a3) and math.isfinite(a4)):
        raise DiagnosticsError("assumption constants must be finite")
    e = d / math.sqrt(n)
    return RatePrediction(
        eps=e,
        general=a3 * e + a4 * e**2,
        even=(a3**2 + a4) * e**2,
        linear=(a3**3 + a3 * a4) * e**3 + a4**2 * e**4,
    )


# ---------------------------------------------------------------- g condition


@dataclass
class GConditionCheck:
    passed: bool
    R_g: float
    witness: list | None = None
    excess: float = 0.0
    alpha: float | None = None
    C_f: float | None = None


def r_g_sufficient(C_f, alpha, c0):
    """Radius from the sufficient condition ``|f(y) - f(0)| <= exp(C_f sqrt(d) |y|^alpha)``."""
    if not 0.0 <= alpha < 1.0 or C_f <= 0 or c0 <= 0:
        raise DiagnosticsError("need 0 <= alpha < 1, C_f > 0 and c0 > 0")
    first = max(1.0, 4.0 / c0 * (C_f + math.log(2.0))) ** (1.0 / (1.0 - alpha))
    second = 4.0 / c0 * (C_f * (4.0 * C_f + 3.0) ** alpha + math.log(4.0))
    return max(first, second)


def check_g_condition(g, approx, c0, R_g, probes=2000, seed=0, rule=None, radius_multiples=None):
    """Probe ``|g(x) - int g d approx| <= exp(c0 sqrt(d) |x - m|_{S^{-1}} / 4)`` outside ``R_g sqrt(d)``.

    Comparisons are made on the log scale so that fast-growing ``g`` do not
    overflow. Returns the first violating probe as the witness.
    """
    if R_g < 0:
        raise DiagnosticsError(f"R_g must be non-negative, got {R_g}")
    d = approx.dim
    rule = default_rule(d) if rule is None else rule
    pts = approx.mean + rule.nodes @ approx.sqrt.T
    with np.errstate(over="ignore", invalid="ignore"):
        gp = np.asarray(g(pts), dtype=float)
    mean_g = float(rule.weights @ gp) if np.all(np.isfinite(gp)) else float("inf")
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((probes, d))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    mult = np.geomspace(1.0, 50.0, 25) if radius_multiples is None else np.asarray(radius_multiples, float)
    r = max(R_g, 1e-12) * math.sqrt(d) * mult[np.arange(probes) % mult.size]
    X = approx.mean + (r[:, None] * U) @ approx.sqrt.T
    with np.errstate(over="ignore", invalid="ignore"):
        dev = np.abs(np.asarray(g(X), dtype=float) - mean_g)
        log_dev = np.where(dev > 0, np.log(np.where(dev > 0, dev, 1.0)), -np.inf)
    log_dev = np.where(np.isnan(log_dev), np.inf, log_dev)
    bound = c0 * math.sqrt(d) * r / 4.0
    bad = log_dev > bound
    if bad.any():
        j = int(np.argmax(bad))
        return GConditionCheck(False, float(R_g), witness=X[j].tolist(), excess=float(log_dev[j] - bound[j]))
    return GConditionCheck(True, float(R_g))


# ---------------------------------------------------------------- slopes


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r2: float
    used: int
    dropped: int


def fit_loglog_slope(pairs):
    """OLS fit of ``log(error)`` on ``log(n)``; non-positive errors are dropped."""
    arr = np.asarray([(float(a), float(b)) for a, b in pairs], dtype=float).reshape(-1, 2)
    keep = np.isfinite(arr[:, 1]) & (arr[:, 1] > 0) & (arr[:, 0] > 0)
    dropped = int((~keep).sum())
    if dropped:
        warnings.warn(f"dropping {dropped} non-positive or non-finite error values from slope fit", stacklevel=2)
    arr = arr[keep]
    if arr.shape[0] < 3:
        raise DiagnosticsError(f"slope fit needs at least 3 positive points, got {arr.shape[0]}")
    x, y = np.log(arr[:, 0]), np.log(arr[:, 1])
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx == 0:
        raise DiagnosticsError("slope fit needs at least two distinct n values")
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    ss_res = float(np.sum((y - intercept - slope * x) ** 2))
    ss_tot = float(np.sum((y - ym) ** 2))
    # a flat series leaves only rounding noise in ss_tot; call it a perfect fit
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 1e-20 * max(1.0, float(np.sum(y * y))) else 1.0
    return SlopeFit(slope, intercept, r2, int(arr.shape[0]), dropped)
