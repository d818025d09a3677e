"""Small dense SPD helpers used across modules."""

import numpy as np

from .errors import NotSPDError


def sym(M):
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + M.T)


def spd_eigh(M, what="matrix"):
    """Eigendecomposition of a symmetric matrix that must be positive definite."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise NotSPDError(f"{what} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NotSPDError(f"{what} has non-finite entries")
    asym = np.max(np.abs(M - M.T)) if M.size else 0.0
    if asym > 1e-8 * max(1.0, np.max(np.abs(M))):
        raise NotSPDError(f"{what} is not symmetric (max asymmetry {asym:.3g})")
    w, U = np.linalg.eigh(sym(M))
    if w[0] <= 0.0:
        raise NotSPDError(f"{what} is not positive definite (min eigenvalue {w[0]:.3g})")
    return w, U


def spd_power(M, p, what="matrix"):
    w, U = spd_eigh(M, what)
    return sym((U * w**p) @ U.T)


def opnorm(M):
    """Spectral norm of a matrix (largest singular value)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return float(np.linalg.norm(M, 2))
