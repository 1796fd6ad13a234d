"""Property checks for the Khatri-Rao identities and the bounding inequalities.

Identity checks build the left-hand side by dense blockwise Kronecker
assembly and the right-hand side through the compressed algebra (or a direct
cell loop), then report max-abs discrepancies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .algebra import CellBlockMatrix, dense_ones_blocks, khatri_rao_dense
from .covariance import VarianceComponents
from .design import Design, sample_design_uniform
from .spectral import verify_diagonalization

IDENTITY_TOL = 1e-12
INEQ_SLACK = 1e-12


def _parts(design):
    return [1] * design.gh, list(design.sizes)


def _kr_vec(design, v, c):
    """(v)_row ⊛ c for a length-gh cell vector v and an n-vector c."""
    ones, parts = _parts(design)
    return khatri_rao_dense(np.asarray(v)[:, None], ones, [1], np.asarray(c)[:, None], parts, [1])[:, 0]


def _kr_mat(design, S, R):
    """(S)_cell ⊛ R for a gh x gh matrix S and an n x n block matrix R."""
    ones, parts = _parts(design)
    return khatri_rao_dense(S, ones, ones, R, parts, parts)


def _dense_diff(L, R) -> float:
    L, R = np.asarray(L, float), np.asarray(R, float)
    return float(np.abs(L - R).max())


def _random_f(design, rng):
    # f is a scalar function of the cell size: one random value per distinct size
    table = {int(m): rng.uniform(0.5, 2.0) for m in np.unique(design.sizes)}
    return np.array([table[int(m)] for m in design.sizes])


# -- identities --------------------------------------------------------------

def check_lemma1(design: Design, seed) -> dict[str, float]:
    """Five mixed-product identities for KR products with all-ones blocks."""
    rng = np.random.default_rng(seed)
    g, h = design.g, design.h
    P, R = rng.uniform(-1, 1, (2, g, g))
    Q, S = rng.uniform(-1, 1, (2, h, h))
    a, b = rng.uniform(-1, 1, g), rng.uniform(-1, 1, h)
    f = _random_f(design, rng)
    f_obs = f[design.obs_cell]
    m = design.sizes.astype(float)
    PQ, RS = np.kron(P, Q), np.kron(R, S)
    Jt, Jb = dense_ones_blocks(design, "tilde"), dense_ones_blocks(design, "bar")
    ones_t = 1.0 / np.sqrt(m[design.obs_cell])

    out = {}
    # 1: vector times tilde kernel
    lhs = _kr_vec(design, np.kron(a, b), ones_t) @ _kr_mat(design, PQ, Jt)
    rhs = np.repeat(np.kron(a @ P, b @ Q) / np.sqrt(m), design.sizes)
    out["identity1"] = _dense_diff(lhs, rhs)
    # 2: tilde product
    lhs = _kr_mat(design, PQ, Jt) @ _kr_mat(design, RS, Jt)
    rhs = (CellBlockMatrix.khatri_rao(design, PQ, "tilde") @ CellBlockMatrix.khatri_rao(design, RS, "tilde"))
    out["identity2"] = _dense_diff(lhs, rhs.to_dense())
    # 3: bar product picks up M^{-1}
    A_bar, B_bar = CellBlockMatrix.khatri_rao(design, PQ, "bar"), CellBlockMatrix.khatri_rao(design, RS, "bar")
    lhs = _kr_mat(design, PQ, Jb) @ _kr_mat(design, RS, Jb)
    out["identity3"] = _dense_diff(lhs, (A_bar @ B_bar).to_dense())
    # 4: cell weights on the right of the first factor
    lhs = _kr_mat(design, PQ, Jb * f_obs[None, :]) @ _kr_mat(design, RS, Jb)
    out["identity4"] = _dense_diff(lhs, (A_bar.sandwich(f, "right") @ B_bar).to_dense())
    # 5: cell weights on the left carry through to the product
    lhs = _kr_mat(design, PQ, f_obs[:, None] * Jb) @ _kr_mat(design, RS, Jb)
    out["identity5"] = _dense_diff(lhs, (A_bar @ B_bar).sandwich(f, "left").to_dense())
    return out


def check_lemma2(design: Design, seed) -> dict[str, float]:
    """Bilinearity and the four inner/matrix product formulas with general blocks.

    The row-vector formula is checked in the form
    ``block (i,j) = sum_{s,t} a_s b_t p_si q_tj c_st^T R[st : ij]``.
    """
    rng = np.random.default_rng(seed)
    g, h, n = design.g, design.h, design.n
    P, P1 = rng.uniform(-1, 1, (2, g, g))
    Q, Q1 = rng.uniform(-1, 1, (2, h, h))
    R, R1 = rng.uniform(-1, 1, (2, n, n))
    a, d = rng.uniform(-1, 1, (2, g))
    b, e = rng.uniform(-1, 1, (2, h))
    c, f = rng.uniform(-1, 1, (2, n))
    off = np.append(design.offsets, n)
    blk = [slice(off[k], off[k + 1]) for k in range(design.gh)]

    out = {}
    bil = 0.0
    for sign in (1.0, -1.0):
        bil = max(bil,
                  _dense_diff(_kr_mat(design, np.kron(P, Q + sign * Q1), R),
                                     _kr_mat(design, np.kron(P, Q), R) + sign * _kr_mat(design, np.kron(P, Q1), R)),
                  _dense_diff(_kr_mat(design, np.kron(P + sign * P1, Q), R),
                                     _kr_mat(design, np.kron(P, Q), R) + sign * _kr_mat(design, np.kron(P1, Q), R)),
                  _dense_diff(_kr_mat(design, np.kron(P, Q), R + sign * R1),
                                     _kr_mat(design, np.kron(P, Q), R) + sign * _kr_mat(design, np.kron(P, Q), R1)))
    out["bilinearity"] = bil

    x = _kr_vec(design, np.kron(a, b), c)
    y = _kr_vec(design, np.kron(d, e), f)
    ab, de = np.kron(a, b), np.kron(d, e)
    cf = np.add.reduceat(c * f, design.offsets)
    out["inner_product"] = _dense_diff(x @ y, (ab * de * cf).sum())

    out["outer_product"] = _dense_diff(np.outer(x, y),
                                              _kr_mat(design, np.kron(np.outer(a, d), np.outer(b, e)), np.outer(c, f)))

    PQ = np.kron(P, Q)  # PQ[st, ij] = p_si q_tj
    KR = _kr_mat(design, PQ, R)
    lhs = x @ KR
    rhs = np.empty(n)
    for ij in range(design.gh):
        acc = np.zeros(design.sizes[ij])
        for st in range(design.gh):
            acc += ab[st] * PQ[st, ij] * (c[blk[st]] @ R[blk[st], blk[ij]])
        rhs[blk[ij]] = acc
    out["row_vector"] = _dense_diff(lhs, rhs)

    lhs = x @ KR @ y
    rhs = 0.0
    for ij in range(design.gh):
        for st in range(design.gh):
            rhs += ab[ij] * de[st] * PQ[ij, st] * (c[blk[ij]] @ R[blk[ij], blk[st]] @ f[blk[st]])
    out["bilinear_form"] = _dense_diff(lhs, rhs)
    return out


# -- inequalities --------------------------------------------------------------

@dataclass
class Lemma3Report:
    weak_holds: bool
    strict_condition: bool
    strict_holds: bool

    @property
    def ok(self) -> bool:
        # weak inequality always, and strictness exactly when the row/column condition says so
        return self.weak_holds and self.strict_condition == self.strict_holds


def _lemma3_eval(A, B, C) -> Lemma3Report:
    AB, CB = A @ B, C @ B
    weak = bool(np.all(AB <= CB + INEQ_SLACK * max(1.0, np.abs(CB).max())))
    pos_gap = (C - A) > 0
    # (C-A)B > 0 at (i, j) iff some k has C_ik > A_ik and B_kj > 0
    cond = bool(np.all((pos_gap.astype(int) @ (B > 0).astype(int)) > 0))
    strict = bool(np.all(AB < CB))
    return Lemma3Report(weak, cond, strict)


def check_lemma3(dimension: int, seed) -> list[Lemma3Report]:
    """Nonnegative A <= C implies AB <= CB, with the stated strictness condition.

    Three instances: a sparse random one, C = A + positive perturbation with
    positive B (strict), and C = A (equality, not strict).
    """
    rng = np.random.default_rng(seed)
    k = dimension
    A = rng.uniform(0, 1, (k, k)) * (rng.uniform(size=(k, k)) < 0.6)
    C = A + rng.uniform(0, 1, (k, k)) * (rng.uniform(size=(k, k)) < 0.3)
    B = rng.uniform(0, 1, (k, k)) * (rng.uniform(size=(k, k)) < 0.5)
    reports = [_lemma3_eval(A, B, C)]
    Bpos = rng.uniform(0.1, 1, (k, k))
    reports.append(_lemma3_eval(A, Bpos, A + rng.uniform(0.1, 1, (k, k))))
    reports.append(_lemma3_eval(A, Bpos, A.copy()))
    return reports


@dataclass
class Lemma4Report:
    m_L: int
    max_violation: dict[int, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(v <= 0 for v in self.max_violation.values())


def check_lemma4(design: Design, l_max: int = 4) -> Lemma4Report:
    """Entrywise bound on powers of the three averaging Khatri-Rao terms."""
    g, h = design.g, design.h
    Jg, Jh = np.full((g, g), 1.0 / g), np.full((h, h), 1.0 / h)
    Jb = dense_ones_blocks(design, "bar")
    A = _kr_mat(design, np.kron(Jg, np.eye(h)), Jb)
    B = _kr_mat(design, np.kron(np.eye(g), Jh), Jb)
    C = _kr_mat(design, np.kron(Jg, Jh), Jb)
    T = A + B + C
    mL = design.m_L
    rep = Lemma4Report(mL)
    Tl = np.eye(design.n)
    for l in range(1, l_max + 1):
        Tl = Tl @ T
        bound = (A + B + (3 ** l - 2) * C) / mL ** (l - 1)
        rep.max_violation[l] = float((Tl - bound - INEQ_SLACK * np.abs(bound).max()).max())
    return rep


@dataclass
class Lemma5Report:
    d2: float
    epsilon: float
    G_epsilon: float
    verified_range: tuple[float, float]
    lower_ok: bool
    upper_ok: bool
    lower_all_g_ok: bool

    @property
    def ok(self) -> bool:
        return self.lower_ok and self.upper_ok and self.lower_all_g_ok


def check_lemma5(d2: float, epsilon: float, decades: float = 6.0, points: int = 400) -> Lemma5Report:
    """G_eps = exp((log d2)^2 / eps^2) and the sandwich bound on a log grid above it.

    Everything is compared in log space: log(d2^sqrt(log g) / g) against
    (-1 -/+ eps) log g, so large G_eps does not overflow.
    """
    if not d2 > 1:
        raise ValueError("d2 must exceed 1")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    ld = math.log(d2)
    log_G = ld * ld / (epsilon * epsilon)
    lo = max(log_G, math.log(2.0))
    log_g = np.linspace(lo, lo + decades * math.log(10.0), points)
    mid = np.sqrt(log_g) * ld - log_g
    tol = INEQ_SLACK * log_g
    lower = bool(np.all((-1 - epsilon) * log_g <= mid + tol))
    upper = bool(np.all(mid <= (-1 + epsilon) * log_g + tol))
    # lower bound needs nothing beyond g > 1
    lg_any = np.linspace(1e-3, lo + decades * math.log(10.0), points)
    lower_any = bool(np.all((-1 - epsilon) * lg_any <= np.sqrt(lg_any) * ld - lg_any))
    return Lemma5Report(d2, epsilon, _safe_exp(log_G), (_safe_exp(lo), _safe_exp(log_g[-1])),
                        lower, upper, lower_any)


def _safe_exp(x: float) -> float:
    return math.exp(x) if x < 709 else math.inf


# -- suites ----------------------------------------------------------------

@dataclass
class SuiteResult:
    name: str
    instances: int
    worst: float
    passed: bool
    failures: list[str] = field(default_factory=list)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name:<10} {status}  instances={self.instances:<4d} worst={self.worst:.3e}"


SUITES = ("lemma1", "lemma2", "lemma3", "lemma4", "lemma5", "spectral")


def _small_design(rng, gmax=5, hmax=5, mmax=4):
    g, h = int(rng.integers(2, gmax + 1)), int(rng.integers(2, hmax + 1))
    return sample_design_uniform(g, h, 1, mmax, rng)


def run_suite(name: str, seed: int = 0, instances: int = 50) -> SuiteResult:
    rng = np.random.default_rng([seed, SUITES.index(name) if name in SUITES else 99])
    fails: list[str] = []
    worst = 0.0
    if name in ("lemma1", "lemma2"):
        fn = check_lemma1 if name == "lemma1" else check_lemma2
        for _ in range(instances):
            d = _small_design(rng, mmax=4 if name == "lemma1" else 3)
            s = int(rng.integers(2 ** 31))
            rep = fn(d, s)
            w = max(rep.values())
            worst = max(worst, w)
            if w > IDENTITY_TOL:
                fails.append(f"{d!r} cells={d.cells.tolist()} seed={s}: {rep}")
    elif name == "lemma3":
        for _ in range(instances):
            k, s = int(rng.integers(2, 21)), int(rng.integers(2 ** 31))
            for rep in check_lemma3(k, s):
                if not rep.ok:
                    fails.append(f"dimension={k} seed={s}: {rep}")
    elif name == "lemma4":
        for _ in range(instances):
            d = _small_design(rng)
            rep = check_lemma4(d, 4)
            worst = max(worst, max(rep.max_violation.values()))
            if not rep.ok:
                fails.append(f"cells={d.cells.tolist()}: {rep.max_violation}")
    elif name == "lemma5":
        for _ in range(instances):
            d2, eps = float(np.exp(rng.uniform(1e-4, 3.0))), float(rng.uniform(0.05, 0.95))
            rep = check_lemma5(d2, eps)
            if not rep.ok:
                fails.append(f"d2={d2} eps={eps}: {rep}")
    elif name == "spectral":
        for _ in range(instances):
            d = sample_design_uniform(int(rng.integers(2, 7)), int(rng.integers(2, 7)), 1, 8, rng)
            th = VarianceComponents(*rng.uniform(0.1, 10, 4))
            rep = verify_diagonalization(d, th)
            worst = max(worst, rep.residual_max, rep.eig_mismatch / rep.lambda1)
            if not rep.ok():
                fails.append(f"cells={d.cells.tolist()} theta={th.as_tuple()}: {rep}")
    else:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)} or all")
    return SuiteResult(name, instances, worst, not fails, fails)


def run_all(seed: int = 0, instances: int = 50) -> list[SuiteResult]:
    return [run_suite(s, seed, instances) for s in SUITES]
