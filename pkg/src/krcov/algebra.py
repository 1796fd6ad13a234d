"""Compressed algebra of cell-block matrices.

A cell-block matrix on a design with cell sizes ``m`` is the ``n x n`` matrix

    R(d, K) = blockdiag(d_c I_{m_c}) + [K_ab * s_ab * J_{m_a x m_b}]_{a,b}

where ``s_ab = 1/(m_a m_b)`` for the BAR normalization and
``s_ab = 1/sqrt(m_a m_b)`` for TILDE.  With ``U`` the ``n x gh`` matrix whose
column ``c`` is the normalized indicator of cell ``c``, the kernel part is
``U K U^T``; BAR gives ``U^T U = M^{-1}`` and TILDE gives ``U^T U = I``.  That
single fact turns products, inverses and Khatri-Rao identities into
``gh x gh`` linear algebra that never touches ``n``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .design import Design

ATOL = 1e-12
RTOL = 1e-10


class Norm(enum.Enum):
    BAR = "bar"      # blocks scaled by 1/(m_a m_b)
    TILDE = "tilde"  # blocks scaled by 1/sqrt(m_a m_b)


class SingularSystemError(ArithmeticError):
    """The reduced gh x gh system of a structured inverse is singular."""


def _is_diagonal(K: np.ndarray) -> bool:
    return np.count_nonzero(K - np.diag(np.diag(K))) == 0


@dataclass(frozen=True, eq=False)
class CellBlockMatrix:
    design: Design
    diag: np.ndarray    # (gh,)
    kernel: np.ndarray  # (gh, gh)
    norm: Norm = Norm.BAR

    def __post_init__(self):
        gh = self.design.gh
        d = np.array(self.diag, dtype=float).reshape(-1)
        if d.size == 1 and gh != 1:
            d = np.full(gh, d[0])
        K = np.array(self.kernel, dtype=float)
        if d.shape != (gh,) or K.shape != (gh, gh):
            raise ValueError(f"need diag ({gh},) and kernel ({gh}, {gh}); got {d.shape}, {K.shape}")
        d.setflags(write=False)
        K.setflags(write=False)
        object.__setattr__(self, "diag", d)
        object.__setattr__(self, "kernel", K)

    # -- constructors ---------------------------------------------------
    @classmethod
    def zeros(cls, design: Design, norm: Norm = Norm.BAR) -> CellBlockMatrix:
        return cls(design, np.zeros(design.gh), np.zeros((design.gh, design.gh)), norm)

    @classmethod
    def identity(cls, design: Design, scale: float = 1.0) -> CellBlockMatrix:
        return cls(design, np.full(design.gh, float(scale)), np.zeros((design.gh, design.gh)))

    @classmethod
    def cell_diagonal(cls, design: Design, w) -> CellBlockMatrix:
        """blockdiag(w_c I_{m_c})."""
        return cls(design, np.asarray(w, dtype=float), np.zeros((design.gh, design.gh)))

    @classmethod
    def khatri_rao(cls, design: Design, S, blocks: str = "bar") -> CellBlockMatrix:
        """``(S)_cell ⊛ J`` for the all-ones block family named by ``blocks``.

        ``"bar"`` uses J̄_m (blocks / (m_a m_b)), ``"tilde"`` uses J̃_m
        (blocks / sqrt(m_a m_b)) and ``"ones"`` the unnormalized J_m, stored
        in BAR form as ``M S M``.
        """
        S = np.asarray(S, dtype=float)
        zero = np.zeros(design.gh)
        if blocks == "bar":
            return cls(design, zero, S, Norm.BAR)
        if blocks == "tilde":
            return cls(design, zero, S, Norm.TILDE)
        if blocks == "ones":
            m = design.sizes.astype(float)
            return cls(design, zero, m[:, None] * S * m[None, :], Norm.BAR)
        raise ValueError(f"unknown block family {blocks!r}")

    # -- normalization ----------------------------------------------------
    def _block_scale(self) -> np.ndarray:
        m = self.design.sizes.astype(float)
        return 1.0 / m if self.norm is Norm.BAR else 1.0 / np.sqrt(m)

    def to_bar(self) -> CellBlockMatrix:
        if self.norm is Norm.BAR:
            return self
        r = np.sqrt(self.design.sizes.astype(float))
        return CellBlockMatrix(self.design, self.diag, r[:, None] * self.kernel * r[None, :], Norm.BAR)

    def to_tilde(self) -> CellBlockMatrix:
        if self.norm is Norm.TILDE:
            return self
        r = 1.0 / np.sqrt(self.design.sizes.astype(float))
        return CellBlockMatrix(self.design, self.diag, r[:, None] * self.kernel * r[None, :], Norm.TILDE)

    def as_norm(self, norm: Norm) -> CellBlockMatrix:
        return self.to_bar() if norm is Norm.BAR else self.to_tilde()

    # -- arithmetic -------------------------------------------------------
    def _check_same_design(self, other: CellBlockMatrix):
        if not isinstance(other, CellBlockMatrix):
            raise TypeError(f"expected CellBlockMatrix, got {type(other).__name__}")
        if other.design is not self.design and other.design != self.design:
            raise ValueError("operands live on different designs")

    def __add__(self, other):
        if not isinstance(other, CellBlockMatrix):
            return NotImplemented
        return cbm_add(self, other)

    def __sub__(self, other):
        if not isinstance(other, CellBlockMatrix):
            return NotImplemented
        return cbm_add(self, -other)

    def __neg__(self):
        return CellBlockMatrix(self.design, -self.diag, -self.kernel, self.norm)

    def __mul__(self, s):
        if isinstance(s, CellBlockMatrix) or not np.isscalar(s):
            return NotImplemented
        return CellBlockMatrix(self.design, s * self.diag, s * self.kernel, self.norm)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, CellBlockMatrix):
            return cbm_mul(self, other)
        x = np.asarray(other)
        if x.ndim == 1:
            return cbm_matvec(self, x)
        if x.ndim == 2:
            return cbm_matmat(self, x)
        return NotImplemented

    @property
    def T(self) -> CellBlockMatrix:
        return CellBlockMatrix(self.design, self.diag, self.kernel.T, self.norm)

    def sandwich(self, w, side: str = "both") -> CellBlockMatrix:
        return cbm_cell_diag_sandwich(self, w, side)

    def inverse(self) -> CellBlockMatrix:
        return cbm_inverse(self)

    def to_dense(self) -> np.ndarray:
        return cbm_to_dense(self)

    # -- entrywise summaries without expansion ----------------------------
    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.kernel, self.kernel.T))

    def max_abs(self) -> float:
        """Largest absolute entry of the represented n x n matrix."""
        s = self._block_scale()
        B = self.kernel * s[:, None] * s[None, :]
        m = self.design.sizes
        diag_entries = np.abs(self.diag + np.diag(B))
        # off-diagonal entries of a diagonal block exist only when m_c >= 2
        mask = np.ones_like(B, dtype=bool)
        np.fill_diagonal(mask, m >= 2)
        off = np.abs(B[mask]).max() if mask.any() else 0.0
        return float(max(diag_entries.max(), off))

    def frobenius(self) -> float:
        """Frobenius norm of the represented matrix, in O((gh)^2)."""
        A = self.to_bar()
        m = A.design.sizes.astype(float)
        K, d = A.kernel, A.diag
        total = (m * d * d).sum() + 2.0 * (d * np.diag(K) / m).sum() + ((K * K) / np.outer(m, m)).sum()
        return float(np.sqrt(max(total, 0.0)))

    def minus_identity(self) -> CellBlockMatrix:
        return CellBlockMatrix(self.design, self.diag - 1.0, self.kernel, self.norm)


def _align(A: CellBlockMatrix, B: CellBlockMatrix) -> tuple[CellBlockMatrix, CellBlockMatrix]:
    A._check_same_design(B)
    if A.norm is B.norm:
        return A, B
    return A.to_bar(), B.to_bar()


def cbm_add(A: CellBlockMatrix, B: CellBlockMatrix) -> CellBlockMatrix:
    A._check_same_design(B)
    if A.norm is not B.norm:
        raise ValueError("normalization mismatch; convert with to_bar()/to_tilde() first")
    return CellBlockMatrix(A.design, A.diag + B.diag, A.kernel + B.kernel, A.norm)


def _kernel_product(KA: np.ndarray, gram: np.ndarray, KB: np.ndarray) -> np.ndarray:
    # KA @ diag(gram) @ KB with a shortcut when either side is diagonal
    if _is_diagonal(KB):
        return KA * (gram * np.diag(KB))[None, :]
    if _is_diagonal(KA):
        return (np.diag(KA) * gram)[:, None] * KB
    return (KA * gram[None, :]) @ KB


def cbm_mul(A: CellBlockMatrix, B: CellBlockMatrix) -> CellBlockMatrix:
    """Matrix product, closed in the algebra.

    Two TILDE operands multiply natively (kernel ``K_A K_B``); anything else is
    carried out in BAR form (kernel ``K_A M^{-1} K_B``).
    """
    A, B = _align(A, B)
    design = A.design
    if A.norm is Norm.TILDE:
        gram = np.ones(design.gh)
    else:
        gram = 1.0 / design.sizes.astype(float)
    K = A.diag[:, None] * B.kernel + A.kernel * B.diag[None, :] + _kernel_product(A.kernel, gram, B.kernel)
    return CellBlockMatrix(design, A.diag * B.diag, K, A.norm)


def cbm_cell_diag_sandwich(A: CellBlockMatrix, w, side: str = "both") -> CellBlockMatrix:
    """Multiply by blockdiag(w_c I_{m_c}) on the left, right, or both sides."""
    w = np.asarray(w, dtype=float)
    if w.shape != (A.design.gh,):
        raise ValueError(f"weights must have length {A.design.gh}")
    if side == "left":
        return CellBlockMatrix(A.design, w * A.diag, w[:, None] * A.kernel, A.norm)
    if side == "right":
        return CellBlockMatrix(A.design, A.diag * w, A.kernel * w[None, :], A.norm)
    if side == "both":
        return CellBlockMatrix(A.design, w * w * A.diag, w[:, None] * A.kernel * w[None, :], A.norm)
    raise ValueError(f"side must be 'left', 'right' or 'both', not {side!r}")


def cell_sums(design: Design, x: np.ndarray) -> np.ndarray:
    return np.add.reduceat(x, design.offsets)


def cbm_matvec(A: CellBlockMatrix, x) -> np.ndarray:
    """``to_dense(A) @ x`` in O(n + (gh)^2)."""
    x = np.asarray(x, dtype=float)
    design = A.design
    if x.shape != (design.n,):
        raise ValueError(f"vector length {x.shape} does not match n={design.n}")
    s = A._block_scale()
    t = cell_sums(design, x) * s
    u = (A.kernel @ t) * s
    return np.repeat(A.diag, design.sizes) * x + np.repeat(u, design.sizes)


def cbm_matmat(A: CellBlockMatrix, X) -> np.ndarray:
    """``to_dense(A) @ X`` for a dense n x k block, in O(n k + (gh)^2 k)."""
    X = np.asarray(X, dtype=float)
    design = A.design
    if X.ndim != 2 or X.shape[0] != design.n:
        raise ValueError(f"matrix with {X.shape} rows does not match n={design.n}")
    s = A._block_scale()
    T = np.add.reduceat(X, design.offsets, axis=0) * s[:, None]
    U = (A.kernel @ T) * s[:, None]
    out = np.repeat(U, design.sizes, axis=0)
    out += np.repeat(A.diag, design.sizes)[:, None] * X
    return out


def cbm_to_dense(A: CellBlockMatrix) -> np.ndarray:
    design = A.design
    s = A._block_scale()
    idx = design.obs_cell
    B = (A.kernel * s[:, None] * s[None, :])[np.ix_(idx, idx)]
    B[np.diag_indices_from(B)] += A.diag[idx]
    return B


def cbm_inverse(A: CellBlockMatrix) -> CellBlockMatrix:
    """Exact inverse, O((gh)^3) regardless of the cell sizes.

    Writing the inverse as ``R(1/d, K')`` in BAR form, ``A A^{-1} = I`` reduces
    to ``(D_d + K M^{-1}) K' = -K D_{1/d}``.
    """
    A = A.to_bar()
    d = A.diag
    if np.any(d == 0):
        raise SingularSystemError("zero cell diagonal; structured inverse undefined")
    minv = 1.0 / A.design.sizes.astype(float)
    dinv = 1.0 / d
    if _is_diagonal(A.kernel):
        k = np.diag(A.kernel)
        den = d + k * minv
        if np.any(den == 0):
            raise SingularSystemError("singular reduced system")
        return CellBlockMatrix(A.design, dinv, np.diag(-k * dinv / den))
    lhs = np.diag(d) + A.kernel * minv[None, :]
    rhs = -A.kernel * dinv[None, :]
    try:
        Kp = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"singular reduced system: {exc}") from None
    return CellBlockMatrix(A.design, dinv, Kp)


def max_abs_diff(A, B) -> float:
    """Largest absolute entrywise difference, dense or structured."""
    if isinstance(A, CellBlockMatrix) and isinstance(B, CellBlockMatrix):
        A, B = _align(A, B)
        return (A - B).max_abs()
    A = A.to_dense() if isinstance(A, CellBlockMatrix) else np.asarray(A)
    B = B.to_dense() if isinstance(B, CellBlockMatrix) else np.asarray(B)
    return float(np.abs(A - B).max())


def close(A, B, atol: float = ATOL, rtol: float = RTOL) -> bool:
    """max|A-B| <= atol + rtol * max(|A|, |B|)."""
    scale = max(_max_abs(A), _max_abs(B))
    return max_abs_diff(A, B) <= atol + rtol * scale


def _max_abs(A) -> float:
    if isinstance(A, CellBlockMatrix):
        return A.max_abs()
    A = np.asarray(A)
    return float(np.abs(A).max()) if A.size else 0.0


# -- dense Khatri-Rao product -------------------------------------------------

def _check_parts(parts, total, what):
    parts = [int(p) for p in parts]
    if any(p < 0 for p in parts) or sum(parts) != total:
        raise ValueError(f"{what} partition {parts} does not tile dimension {total}")
    return parts


def khatri_rao_dense(A, row_parts_A, col_parts_A, B, row_parts_B, col_parts_B) -> np.ndarray:
    """Blockwise Kronecker product of two conformally partitioned matrices.

    Block ``(i, j)`` of the result is ``A_ij ⊗ B_ij``.

    >>> A = np.arange(1, 10).reshape(3, 3)
    >>> B = np.arange(1, 10).reshape(3, 3).T
    >>> khatri_rao_dense(A, [2, 1], [2, 1], B, [1, 2], [1, 2]).astype(int).tolist()
    [[1, 2, 12, 21], [4, 5, 24, 42], [14, 16, 45, 72], [21, 24, 54, 81]]
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    ra = _check_parts(row_parts_A, A.shape[0], "row (A)")
    ca = _check_parts(col_parts_A, A.shape[1], "column (A)")
    rb = _check_parts(row_parts_B, B.shape[0], "row (B)")
    cb = _check_parts(col_parts_B, B.shape[1], "column (B)")
    if len(ra) != len(rb) or len(ca) != len(cb):
        raise ValueError("A and B need the same number of row and column partitions")
    ra_off, ca_off = np.cumsum([0] + ra), np.cumsum([0] + ca)
    rb_off, cb_off = np.cumsum([0] + rb), np.cumsum([0] + cb)
    out_r = np.cumsum([0] + [p * q for p, q in zip(ra, rb)])
    out_c = np.cumsum([0] + [p * q for p, q in zip(ca, cb)])
    out = np.zeros((out_r[-1], out_c[-1]))
    for i in range(len(ra)):
        for j in range(len(ca)):
            Aij = A[ra_off[i]:ra_off[i + 1], ca_off[j]:ca_off[j + 1]]
            Bij = B[rb_off[i]:rb_off[i + 1], cb_off[j]:cb_off[j + 1]]
            out[out_r[i]:out_r[i + 1], out_c[j]:out_c[j + 1]] = np.kron(Aij, Bij)
    return out


def dense_ones_blocks(design: Design, norm: str = "ones") -> np.ndarray:
    """Dense J_m, J̄_m or J̃_m: all-ones blocks with the chosen normalization."""
    m = design.sizes.astype(float)
    if norm == "ones":
        v = np.ones(design.n)
    elif norm == "bar":
        v = 1.0 / m[design.obs_cell]
    elif norm == "tilde":
        v = 1.0 / np.sqrt(m[design.obs_cell])
    else:
        raise ValueError(norm)
    return np.outer(v, v)


def dense_cell_khatri_rao(design: Design, S, norm: str = "ones") -> np.ndarray:
    """``(S)_cell ⊛ J`` assembled by the dense Khatri-Rao product (oracle path)."""
    parts = design.sizes
    ones = [1] * design.gh
    return khatri_rao_dense(np.asarray(S, dtype=float), ones, ones, dense_ones_blocks(design, norm), parts, parts)
