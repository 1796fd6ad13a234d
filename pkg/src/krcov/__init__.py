"""Structured inverses of crossed random-effects covariance matrices.

Covariances of two-way crossed designs with unequal cell counts are kept in
a compressed cell-block form whose products and inverses cost O((gh)^3),
independent of the number of observations.
"""

from .algebra import CellBlockMatrix, Norm, SingularSystemError, cbm_inverse, khatri_rao_dense
from .covariance import VarianceComponents, build_D, build_I_delta, build_V, build_V_check, theta
from .design import Design, DesignError, balanced_design, new_design, sample_design_delta, sample_design_uniform
from .inverse import (
    NumericalBreakdown,
    asymptotic_inverse,
    balanced_inverse,
    dense_inverse_oracle,
    exact_structured_inverse,
    neumann_inverse,
    sherman_morrison_inverse,
    vcheck_inverse,
    vcheck_inverse_truncated,
)
from .spectral import Spectrum, eigenvalue_spectrum

__version__ = "0.1.0"
