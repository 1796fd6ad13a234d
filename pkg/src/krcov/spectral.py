"""Closed-form eigenstructure of the weighted modified covariance.

For any design, ``m_U Ĩ V̌ Ĩ = σ²_e I + m_U (S)_cell ⊛ J̃_m`` where ``S`` is
the gh x gh effect covariance, so its spectrum is ``σ²_e`` plus ``m_U`` times
the spectrum of ``S``.  ``S`` splits over the four Kronecker projectors built
from J̄_g and J̄_h:

========  =========================  ===============  ==========
root      value                      projector        multiplicity
========  =========================  ===============  ==========
lambda1   λ3 + λ5 - λ7               J̄g ⊗ J̄h          1
lambda3   λ7 + h m_U σ²_α            (I-J̄g) ⊗ J̄h      g - 1
lambda5   λ7 + g m_U σ²_β            J̄g ⊗ (I-J̄h)      h - 1
lambda7   σ²_e + m_U σ²_γ            (I-J̄g) ⊗ (I-J̄h)  (g-1)(h-1)
lambda0   σ²_e                       remainder        n - gh
========  =========================  ===============  ==========

The row-effect root lambda3 lives on row contrasts, hence multiplicity g - 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebra import CellBlockMatrix, Norm
from .covariance import VarianceComponents, build_V_check
from .design import Design


@dataclass(frozen=True)
class Spectrum:
    lambda0: float
    lambda1: float
    lambda3: float
    lambda5: float
    lambda7: float
    mult0: int
    mult1: int
    mult3: int
    mult5: int
    mult7: int

    def pairs(self) -> list[tuple[str, float, int]]:
        return [
            ("lambda0", self.lambda0, self.mult0),
            ("lambda7", self.lambda7, self.mult7),
            ("lambda3", self.lambda3, self.mult3),
            ("lambda5", self.lambda5, self.mult5),
            ("lambda1", self.lambda1, self.mult1),
        ]

    @property
    def n(self) -> int:
        return self.mult0 + self.mult1 + self.mult3 + self.mult5 + self.mult7

    def multiset(self) -> np.ndarray:
        """All n eigenvalues, ascending."""
        vals = np.concatenate([np.full(k, v) for _, v, k in self.pairs()])
        return np.sort(vals)

    @property
    def distinct(self) -> int:
        return len({v for _, v, k in self.pairs() if k > 0})


def eigenvalue_spectrum(design: Design, th: VarianceComponents) -> Spectrum:
    g, h, mU = design.g, design.h, design.m_U
    sa, sb, sg, se = th.as_tuple()
    lam0 = se
    lam7 = se + mU * sg
    lam3 = lam7 + h * mU * sa
    lam5 = lam7 + g * mU * sb
    lam1 = lam3 + lam5 - lam7
    return Spectrum(
        lambda0=lam0, lambda1=lam1, lambda3=lam3, lambda5=lam5, lambda7=lam7,
        mult0=design.n - design.gh, mult1=1, mult3=g - 1, mult5=h - 1, mult7=(g - 1) * (h - 1),
    )


@dataclass(frozen=True)
class ContrastBasis:
    k: int
    vectors: np.ndarray  # (k-1, k), rows orthonormal and orthogonal to 1_k

    def gram(self) -> np.ndarray:
        return self.vectors @ self.vectors.T


def contrast_basis(k: int) -> ContrastBasis:
    """Helmert contrasts: vector i has i entries 1/sqrt(i(i+1)), then -i/sqrt(i(i+1)), then zeros."""
    if k < 2:
        raise ValueError("a contrast basis needs k >= 2")
    V = np.zeros((k - 1, k))
    for i in range(1, k):
        c = 1.0 / np.sqrt(i * (i + 1))
        V[i - 1, :i] = c
        V[i - 1, i] = -i * c
    return ContrastBasis(k, V)


def _avg(k: int) -> np.ndarray:
    return np.full((k, k), 1.0 / k)


def projectors(design: Design) -> dict[str, CellBlockMatrix]:
    """Eigenprojectors onto the four cell-level eigenspaces, in TILDE form.

    Keys follow the eigenvalue each projector carries: ``P1``, ``P3``
    (row contrasts), ``P5`` (column contrasts) and ``P7`` (interaction
    contrasts).  Their sum is ``(I_g ⊗ I_h)_cell ⊛ J̃_m``.
    """
    g, h = design.g, design.h
    Jg, Jh = _avg(g), _avg(h)
    Cg, Ch = np.eye(g) - Jg, np.eye(h) - Jh
    kernels = {
        "P1": np.kron(Jg, Jh),
        "P3": np.kron(Cg, Jh),
        "P5": np.kron(Jg, Ch),
        "P7": np.kron(Cg, Ch),
    }
    return {k: CellBlockMatrix.khatri_rao(design, S, blocks="tilde") for k, S in kernels.items()}


def weighted_vcheck(design: Design, th: VarianceComponents) -> CellBlockMatrix:
    """``m_U Ĩ_m V̌ Ĩ_m``."""
    w = 1.0 / np.sqrt(design.sizes.astype(float))
    return design.m_U * build_V_check(design, th).sandwich(w, "both")


def spectral_reconstruction(design: Design, th: VarianceComponents) -> CellBlockMatrix:
    """λ1 P1 + λ3 P3 + λ5 P5 + λ7 P7 + λ0 (I - ΣP), built from projectors only."""
    sp = eigenvalue_spectrum(design, th)
    P = projectors(design)
    K = (sp.lambda1 * P["P1"].kernel + sp.lambda3 * P["P3"].kernel
         + sp.lambda5 * P["P5"].kernel + sp.lambda7 * P["P7"].kernel
         - sp.lambda0 * np.eye(design.gh))
    return CellBlockMatrix(design, np.full(design.gh, sp.lambda0), K, Norm.TILDE)


@dataclass(frozen=True)
class DiagonalizationReport:
    residual_max: float
    eig_mismatch: float
    lambda1: float

    def ok(self, tol_residual: float = 1e-10, tol_eig_rel: float = 1e-8) -> bool:
        return self.residual_max <= tol_residual and self.eig_mismatch <= tol_eig_rel * self.lambda1


def verify_diagonalization(design: Design, th: VarianceComponents) -> DiagonalizationReport:
    """Dense check of the projector identity and the eigenvalue multiset."""
    W = weighted_vcheck(design, th).to_dense()
    R = spectral_reconstruction(design, th).to_dense()
    residual = float(np.abs(W - R).max())
    eig = np.linalg.eigvalsh((W + W.T) / 2)
    sp = eigenvalue_spectrum(design, th)
    mismatch = float(np.abs(np.sort(eig) - sp.multiset()).max())
    return DiagonalizationReport(residual, mismatch, sp.lambda1)
