"""Dense-grid reference values for ``pi ∝ exp(-V)`` in dimension at most 3.

The trapezoid rule on a box of ``+-12`` Laplace standard deviations is
spectrally accurate for the smooth, rapidly decaying densities used here;
the box and the boundary-mass guard are what actually need checking.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ._linalg import sym
from .errors import OracleError
from .potential import find_mode
from .quadrature import expect_scalar

MAX_DIM = 3
DEFAULT_POINTS = {1: 4096, 2: 1024, 3: 160}
BOUNDARY_TOL = 1e-10
_CHUNK = 1 << 16


@dataclass(frozen=True)
class GridSpec:
    """Box ``center +- half_widths * sd`` sampled at ``points`` nodes per axis."""

    center: tuple
    sd: tuple
    half_width: float = 12.0
    points: int = 1024

    def __post_init__(self):
        d = len(self.center)
        if not 1 <= d <= MAX_DIM:
            raise OracleError(f"grid oracle supports 1 <= d <= {MAX_DIM}, got d={d} (unverified dimension)")
        if len(self.sd) != d or min(self.sd) <= 0:
            raise OracleError("grid scales must be positive and match the center")
        if self.points < 64:
            raise OracleError(f"need at least 64 points per axis, got {self.points}")
        if float(self.points) ** d > 1e8:
            raise OracleError(f"{self.points}^{d} grid points exceed the 1e8 cap")

    @property
    def dim(self):
        return len(self.center)

    @property
    def axes(self):
        return [
            np.linspace(c - self.half_width * s, c + self.half_width * s, self.points)
            for c, s in zip(self.center, self.sd)
        ]

    @property
    def steps(self):
        return tuple(2 * self.half_width * s / (self.points - 1) for s in self.sd)

    def refined(self):
        return GridSpec(self.center, self.sd, self.half_width, 2 * self.points - 1)

    def to_dict(self):
        return {"center": list(self.center), "sd": list(self.sd), "half_width": self.half_width, "points": self.points}


def default_grid(p, points=None, half_width=12.0, mode=None):
    """Box centred at the mode with Laplace marginal standard deviations as units."""
    m_star, Hv = find_mode(p) if mode is None else mode
    cov = np.linalg.inv(p.n * Hv.H)
    sd = np.sqrt(np.diag(cov))
    P = DEFAULT_POINTS.get(p.dim, 64) if points is None else int(points)
    return GridSpec(tuple(float(c) for c in m_star), tuple(float(s) for s in sd), half_width, P)


def _trapezoid_weights(P, h):
    w = np.full(P, h)
    w[0] = w[-1] = 0.5 * h
    return w


def gaussian_logpdf(approx, X):
    D = X - approx.mean
    Y = D @ approx.inv_sqrt.T
    logdet = np.linalg.slogdet(approx.cov)[1]
    return -0.5 * np.sum(Y * Y, axis=1) - 0.5 * (approx.dim * np.log(2 * np.pi) + logdet)


class GridEvaluation:
    """Normalized density of ``pi`` on a grid, computed once and reused."""

    def __init__(self, p, grid):
        if p.dim != grid.dim:
            raise OracleError(f"grid has dim {grid.dim}, potential has dim {p.dim}")
        self.p = p
        self.grid = grid
        axes = grid.axes
        mesh = np.meshgrid(*axes, indexing="ij")
        self.points = np.stack([m.ravel() for m in mesh], axis=1)
        w = _trapezoid_weights(grid.points, grid.steps[0])
        for h in grid.steps[1:]:
            w = np.multiply.outer(w, _trapezoid_weights(grid.points, h))
        self.weights = np.asarray(w).ravel()
        V = np.empty(self.points.shape[0])
        for s in range(0, V.size, _CHUNK):
            V[s : s + _CHUNK] = p.V_deriv(0, self.points[s : s + _CHUNK])
        if not np.all(np.isfinite(V)):
            j = int(np.argmax(~np.isfinite(V)))
            raise OracleError(f"potential is not finite at grid point {self.points[j].tolist()}")
        self.V_min = float(V.min())
        u = np.exp(-(V - self.V_min))
        self.Z_norm = float(np.sum(self.weights * u))
        self.density = u / self.Z_norm
        self.log_Z = np.log(self.Z_norm) - self.V_min
        self.boundary_mass = self._boundary_mass()
        if self.boundary_mass > BOUNDARY_TOL:
            raise OracleError(
                f"boundary-shell mass {self.boundary_mass:.3g} exceeds {BOUNDARY_TOL}; widen the box",
                boundary_mass=self.boundary_mass,
            )

    def _boundary_mass(self):
        shape = (self.grid.points,) * self.grid.dim
        dens = (self.weights * self.density).reshape(shape)
        mask = np.zeros(shape, dtype=bool)
        for ax in range(self.grid.dim):
            idx = [slice(None)] * self.grid.dim
            idx[ax] = [0, 1, -2, -1]
            mask[tuple(idx)] = True
        return float(dens[mask].sum())

    def integrate(self, g):
        """``int g dpi`` for a batched scalar function ``g``."""
        vals = np.asarray(g(self.points), dtype=float)
        return float(np.sum(self.weights * self.density * vals))

    def moments(self):
        wd = self.weights * self.density
        mean = wd @ self.points
        D = self.points - mean
        cov = sym((D * wd[:, None]).T @ D)
        return mean, cov

    def approx_density(self, approx):
        return np.exp(gaussian_logpdf(approx, self.points))

    def tv(self, approx):
        """``TV(pi, approx) = (1/2) int |pi - approx|`` on the grid."""
        return 0.5 * float(np.sum(self.weights * np.abs(self.density - self.approx_density(approx))))

    def gaussian_integrate(self, approx, g):
        """``int g d approx`` by the same trapezoid rule (handles discontinuous g)."""
        vals = np.asarray(g(self.points), dtype=float)
        return float(np.sum(self.weights * self.approx_density(approx) * vals))

    def to_dict(self):
        mean, cov = self.moments()
        return {
            "grid": self.grid.to_dict(),
            "Z_norm": self.Z_norm,
            "log_Z": self.log_Z,
            "mean": mean.tolist(),
            "cov": cov.ravel().tolist(),
            "boundary_mass": self.boundary_mass,
        }


def posterior_moments(p, grid=None):
    """``(Z_norm, mean, covariance)`` of ``pi`` by trapezoid quadrature.

    ``Z_norm`` is the integral of ``exp(-(V - min V))`` over the box.
    """
    ev = GridEvaluation(p, default_grid(p) if grid is None else grid)
    mean, cov = ev.moments()
    return ev.Z_norm, mean, cov


def integrate_g(p, grid, g):
    return GridEvaluation(p, grid).integrate(g)


def tv_distance(p, approx, grid=None):
    return GridEvaluation(p, default_grid(p) if grid is None else grid).tv(approx)


def gaussian_expectation_g(approx, rule, g):
    """``int g d N(m, S)`` via ``rule`` after ``z -> m + S^{1/2} z``."""
    pts = approx.mean + rule.nodes @ approx.sqrt.T
    return expect_scalar(rule, lambda _: g(pts))


@dataclass
class RefinementReport:
    coarse: dict
    fine: dict
    max_rel_change: float
    passed: bool = field(default=False)


def refinement_check(p, grid, rtol=1e-6):
    """Compare oracle moments at ``P`` and ``2P - 1`` points per axis."""
    a, b = GridEvaluation(p, grid), GridEvaluation(p, grid.refined())
    (ma, ca), (mb, cb) = a.moments(), b.moments()
    scale_m = np.sqrt(np.max(np.diag(cb)))
    rel = max(
        float(np.max(np.abs(ma - mb)) / scale_m),
        float(np.max(np.abs(ca - cb)) / np.max(np.abs(cb))),
    )
    return RefinementReport(a.to_dict(), b.to_dict(), rel, rel < rtol)


def oracle_to_json(ev):
    return json.dumps(ev.to_dict())
