"""Exact and approximate inverses of the crossed-model covariance V.

Structured results come back as :class:`CellBlockMatrix` values; the
rank-one recursion and the factorization oracle return dense arrays.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.linalg import blas

from .algebra import CellBlockMatrix, Norm, cbm_inverse
from .covariance import VarianceComponents, build_I_delta, build_V
from .design import Design
from .spectral import Spectrum, eigenvalue_spectrum


class NumericalBreakdown(ArithmeticError):
    """A factorization or rank-one update lost positivity."""


class OutsideHypothesisWarning(UserWarning):
    """Neumann truncation requested for a design with unbalance >= 1/2."""


@dataclass(frozen=True)
class VcheckCoefficients:
    """Coefficients of the closed-form inverse of the modified covariance.

    ``delta01`` multiplies J̄_g ⊗ I_h and ``delta10`` multiplies I_g ⊗ J̄_h,
    i.e. the subscripts are read right-to-left as binary digits.
    """

    delta00: float
    delta01: float
    delta10: float
    delta11: float
    spectrum: Spectrum


def vcheck_coefficients(design: Design, th: VarianceComponents) -> VcheckCoefficients:
    sp = eigenvalue_spectrum(design, th)
    l0, l1, l3, l5, l7 = sp.lambda0, sp.lambda1, sp.lambda3, sp.lambda5, sp.lambda7
    return VcheckCoefficients(
        delta00=1 / l7 - 1 / l0,
        delta01=1 / l5 - 1 / l7,
        delta10=1 / l3 - 1 / l7,
        delta11=1 / l1 - 1 / l3 - 1 / l5 + 1 / l7,
        spectrum=sp,
    )


def _avg(k):
    return np.full((k, k), 1.0 / k)


def vcheck_inverse(design: Design, th: VarianceComponents) -> CellBlockMatrix:
    """Closed-form inverse of V̌ = (σ²_e/m_U) I^M_m + D."""
    c = vcheck_coefficients(design, th)
    g, h, mU = design.g, design.h, design.m_U
    Ig, Ih, Jg, Jh = np.eye(g), np.eye(h), _avg(g), _avg(h)
    K = mU * (c.delta00 * np.kron(Ig, Ih)
              + c.delta01 * np.kron(Jg, Ih)
              + c.delta10 * np.kron(Ig, Jh)
              + c.delta11 * np.kron(Jg, Jh))
    d = mU / (c.spectrum.lambda0 * design.sizes)
    return CellBlockMatrix(design, d, K, Norm.BAR)


def vcheck_inverse_truncated(design: Design, th: VarianceComponents) -> CellBlockMatrix:
    """Block-diagonal two-term approximation of the V̌ inverse (large g, h)."""
    sp = eigenvalue_spectrum(design, th)
    mU = design.m_U
    d = mU / (sp.lambda0 * design.sizes)
    K = (mU / sp.lambda7 - mU / sp.lambda0) * np.eye(design.gh)
    return CellBlockMatrix(design, d, K, Norm.BAR)


def balanced_inverse(design: Design, th: VarianceComponents) -> CellBlockMatrix:
    """Five-projector expansion of V^{-1} for a balanced layout."""
    if not design.is_balanced:
        raise ValueError(f"balanced_inverse needs equal cell sizes (delta={design.delta:.3g})")
    sp = eigenvalue_spectrum(design, th)
    g, h = design.g, design.h
    Ig, Ih, Jg, Jh = np.eye(g), np.eye(h), _avg(g), _avg(h)
    # 1/λ0 [I ⊗ I ⊗ (I_m - J̃_m)] contributes the diagonal and -1/λ0 on the cell kernel
    K = (-np.kron(Ig, Ih) / sp.lambda0
         + np.kron(Ig - Jg, Ih - Jh) / sp.lambda7
         + np.kron(Ig - Jg, Jh) / sp.lambda3
         + np.kron(Jg, Ih - Jh) / sp.lambda5
         + np.kron(Jg, Jh) / sp.lambda1)
    return CellBlockMatrix(design, np.full(design.gh, 1.0 / sp.lambda0), K, Norm.TILDE).to_bar()


def asymptotic_inverse(design: Design, th: VarianceComponents) -> CellBlockMatrix:
    """(1/σ²_e) I - (σ²_γ/σ²_e) blockdiag[J_{m_c} / (σ²_e + m_c σ²_γ)]."""
    se, sg = th.sigma2_e, th.sigma2_gamma
    m = design.sizes.astype(float)
    k = -sg * m * m / (se * (se + m * sg))
    return CellBlockMatrix(design, np.full(design.gh, 1.0 / se), np.diag(k), Norm.BAR)


def neumann_hypothesis_holds(design: Design) -> bool:
    return design.delta < 0.5


def _apply_vcheck_kernel(design: Design, c: VcheckCoefficients, X: np.ndarray) -> np.ndarray:
    """K X for the closed-form V̌^{-1} kernel K, using row/column averages in O((gh)^2 k)."""
    g, h = design.g, design.h
    Y = X.reshape(g, h, -1)
    row_avg = Y.mean(axis=0, keepdims=True)  # (J̄_g ⊗ I_h) X
    col_avg = Y.mean(axis=1, keepdims=True)  # (I_g ⊗ J̄_h) X
    both = row_avg.mean(axis=1, keepdims=True)
    out = c.delta00 * Y + c.delta01 * row_avg + c.delta10 * col_avg + c.delta11 * both
    return design.m_U * out.reshape(X.shape)


def neumann_inverse(design: Design, th: VarianceComponents, r: int) -> CellBlockMatrix:
    """r-th order expansion of V^{-1} around V̌^{-1}.

    Sum over l = 0..r of (-σ²_e)^l (V̌^{-1} I^Δ_m)^l V̌^{-1}, evaluated in the
    compressed algebra.  Each step left-multiplies by V̌^{-1}, whose kernel is a
    combination of averaging operators, so a step costs O((gh)^2).  A warning
    is issued when the unbalance is 1/2 or more.
    """
    if r < 0:
        raise ValueError("truncation order must be >= 0")
    if not neumann_hypothesis_holds(design):
        warnings.warn(f"delta={design.delta:.3f} >= 0.5: expansion may diverge",
                      OutsideHypothesisWarning, stacklevel=2)
    base = vcheck_inverse(design, th)
    c = vcheck_coefficients(design, th)
    w = build_I_delta(design)
    minv = 1.0 / design.sizes.astype(float)
    b_d, b_K = base.diag, base.kernel
    t_d, t_K = b_d, b_K
    tot_d, tot_K = b_d.copy(), b_K.copy()
    for _ in range(r):
        # term <- -σ²_e V̌^{-1} (I^Δ term), the BAR product rule written out
        s_d, s_K = w * t_d, w[:, None] * t_K
        t_K = -th.sigma2_e * (b_d[:, None] * s_K + b_K * s_d[None, :]
                              + _apply_vcheck_kernel(design, c, minv[:, None] * s_K))
        t_d = -th.sigma2_e * b_d * s_d
        tot_d += t_d
        tot_K += t_K
    return CellBlockMatrix(design, tot_d, tot_K, Norm.BAR)


def neumann_inverse_generic(design: Design, th: VarianceComponents, r: int) -> CellBlockMatrix:
    """Same expansion through plain cbm products; reference path for tests."""
    base = vcheck_inverse(design, th)
    w = build_I_delta(design)
    term, total = base, base
    for _ in range(r):
        term = (-th.sigma2_e) * (base @ term.sandwich(w, "left"))
        total = total + term
    return total


def exact_structured_inverse(design: Design, th: VarianceComponents) -> CellBlockMatrix:
    return cbm_inverse(build_V(design, th))


def dense_inverse_oracle(design: Design, th: VarianceComponents) -> np.ndarray:
    """V^{-1} via a dense Cholesky factorization."""
    V = build_V(design, th).to_dense()
    try:
        factor = scipy.linalg.cho_factor(V, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalBreakdown(f"Cholesky failed: {exc}") from None
    Vinv = scipy.linalg.cho_solve(factor, np.eye(design.n), check_finite=False)
    return (Vinv + Vinv.T) / 2


def sherman_morrison_inverse(design: Design, th: VarianceComponents) -> np.ndarray:
    """V^{-1} from V̌^{-1} by one rank-one update per observation.

    Observations are visited in stacking order; cells at the maximum size add
    nothing and are skipped.
    """
    W = np.asfortranarray(vcheck_inverse(design, th).to_dense())
    bump = th.sigma2_e * build_I_delta(design)
    for c in np.flatnonzero(bump > 0):
        e = bump[c]
        start = design.offsets[c]
        for p in range(start, start + design.sizes[c]):
            denom = 1.0 + e * W[p, p]
            if not denom > 0:
                raise NumericalBreakdown(f"rank-one update at observation {p} has 1 + tr(W^-1 E) = {denom}")
            col = W[:, p].copy()
            W = blas.dger(-e / denom, col, col, a=W, overwrite_a=True)
    W = np.ascontiguousarray(W)
    return (W + W.T) / 2


METHODS = ("exact-dense", "exact-structured", "exact-sm", "vcheck", "vcheck-truncated",
           "asymptotic", "neumann", "balanced")


def invert(design: Design, th: VarianceComponents, method: str, r: int = 0):
    """Dispatch by method name; returns a CellBlockMatrix or a dense array."""
    if method == "exact-dense":
        return dense_inverse_oracle(design, th)
    if method == "exact-structured":
        return exact_structured_inverse(design, th)
    if method == "exact-sm":
        return sherman_morrison_inverse(design, th)
    if method == "vcheck":
        return vcheck_inverse(design, th)
    if method == "vcheck-truncated":
        return vcheck_inverse_truncated(design, th)
    if method == "asymptotic":
        return asymptotic_inverse(design, th)
    if method == "neumann":
        return neumann_inverse(design, th, r)
    if method == "balanced":
        return balanced_inverse(design, th)
    raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
