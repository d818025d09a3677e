"""Gaussian variational inference and Laplace approximations with accuracy diagnostics."""

from .errors import GVIError
from .gaussian_fit import GaussianApprox, laplace_fit, spd_sqrt, vi_fit_contraction, vi_fit_fixed_point
from .hermite import CorrectionTerm, hermite_tensor, p3_eval, q_eval, remainder_rk
from .oracle import GridSpec, default_grid, posterior_moments, tv_distance
from .potential import (
    Potential,
    find_mode,
    make_gaussian_potential,
    make_logistic_posterior,
    make_polynomial_potential,
    rescale_to_V0,
    rescale_to_W,
)
from .quadrature import build_rule, expect_scalar, expect_tensor, expect_vector
from .tensor import SymTensor, op_norm, symmetrize

__version__ = "0.1.0"
