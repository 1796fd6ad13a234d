"""Covariance matrices of the two-way crossed random-effects model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebra import CellBlockMatrix
from .design import Design


@dataclass(frozen=True)
class VarianceComponents:
    """Row, column, interaction and error variances."""

    sigma2_alpha: float
    sigma2_beta: float
    sigma2_gamma: float
    sigma2_e: float

    def __post_init__(self):
        vals = self.as_tuple()
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("variance components must be finite")
        if min(vals) < 0:
            raise ValueError(f"variance components must be nonnegative, got {vals}")
        if self.sigma2_e <= 0:
            raise ValueError("sigma2_e must be strictly positive")

    @classmethod
    def default(cls) -> VarianceComponents:
        """The simulation setting (5, 7, 3, 4)."""
        return cls(5.0, 7.0, 3.0, 4.0)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.sigma2_alpha, self.sigma2_beta, self.sigma2_gamma, self.sigma2_e)

    @property
    def has_interaction(self) -> bool:
        return self.sigma2_gamma > 0


def theta(sa2, sb2, sg2, se2) -> VarianceComponents:
    return VarianceComponents(float(sa2), float(sb2), float(sg2), float(se2))


def effect_kernel(design: Design, th: VarianceComponents) -> np.ndarray:
    """gh x gh cell covariance σ²_α I_g⊗J_h + σ²_β J_g⊗I_h + σ²_γ I_gh."""
    g, h = design.g, design.h
    return (th.sigma2_alpha * np.kron(np.eye(g), np.ones((h, h)))
            + th.sigma2_beta * np.kron(np.ones((g, g)), np.eye(h))
            + th.sigma2_gamma * np.eye(g * h))


def build_D(design: Design, th: VarianceComponents) -> CellBlockMatrix:
    return CellBlockMatrix.khatri_rao(design, effect_kernel(design, th), blocks="ones")


def build_V(design: Design, th: VarianceComponents) -> CellBlockMatrix:
    D = build_D(design, th)
    return CellBlockMatrix(design, np.full(design.gh, th.sigma2_e), D.kernel)


def build_V_check(design: Design, th: VarianceComponents) -> CellBlockMatrix:
    """Modified covariance with cell-scaled noise σ²_e m_c / m_U."""
    D = build_D(design, th)
    return CellBlockMatrix(design, th.sigma2_e * design.sizes / design.m_U, D.kernel)


def build_I_delta(design: Design) -> np.ndarray:
    """Per-cell weights 1 - m_c/m_U of the unbalance correction."""
    return 1.0 - design.sizes / design.m_U


def sample_responses(design: Design, th: VarianceComponents, mu: float = 0.0, seed=None) -> np.ndarray:
    """One draw of y = mu + Z1 α + Z2 β + Z3 γ + e with Gaussian effects."""
    rng = np.random.default_rng(seed)
    alpha = rng.normal(0.0, np.sqrt(th.sigma2_alpha), design.g)
    beta = rng.normal(0.0, np.sqrt(th.sigma2_beta), design.h)
    gamma = rng.normal(0.0, np.sqrt(th.sigma2_gamma), design.gh)
    e = rng.normal(0.0, np.sqrt(th.sigma2_e), design.n)
    cell = design.obs_cell
    row, col = np.divmod(cell, design.h)
    return mu + alpha[row] + beta[col] + gamma[cell] + e
