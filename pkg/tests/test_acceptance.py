"""Acceptance criteria 1-11, each at its stated tolerance and runtime.

Run under pytest for a summary block with one PASS/FAIL line per criterion,
or directly (``python3 tests/test_acceptance.py``) to print the same lines.
Criterion 11 reruns 1-6 with the interaction variance set to zero.
"""

import time
import warnings

import numpy as np
import pytest

from krcov.algebra import khatri_rao_dense, max_abs_diff
from krcov.covariance import VarianceComponents, build_V, build_V_check, theta
from krcov.design import balanced_design, sample_design_delta, sample_design_uniform
from krcov.inverse import (
    OutsideHypothesisWarning, asymptotic_inverse, balanced_inverse, dense_inverse_oracle,
    exact_structured_inverse, neumann_inverse, sherman_morrison_inverse, vcheck_inverse,
)
from krcov.sim import SimConfig, run_case1, run_case2
from krcov.spectral import eigenvalue_spectrum, verify_diagonalization, weighted_vcheck
from krcov.verify import IDENTITY_TOL, run_suite

DEFAULT = (5.0, 7.0, 3.0, 4.0)


def _theta(vals, no_interaction):
    vals = list(vals)
    if no_interaction:
        vals[2] = 0.0
    return theta(*vals)


def random_suite(no_interaction=False, count=50, seed=1001):
    """(design, theta) pairs: g, h in 2..6, cells in 1..8, components uniform on [0.1, 10]."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        d = sample_design_uniform(int(rng.integers(2, 7)), int(rng.integers(2, 7)), 1, 8, rng)
        out.append((d, _theta(rng.uniform(0.1, 10, 4), no_interaction)))
    return out


def inf_resid(A_dense, B_dense):
    return float(np.abs(A_dense @ B_dense - np.eye(A_dense.shape[0])).max())


# -- criteria ------------------------------------------------------------------

def criterion_1(no_interaction=False):
    t0 = time.perf_counter()
    worst = max(inf_resid(build_V_check(d, th).to_dense(), vcheck_inverse(d, th).to_dense())
                for d, th in random_suite(no_interaction))
    el = time.perf_counter() - t0
    return worst <= 1e-10 and el < 10, f"max |V̌ V̌^-1 - I| = {worst:.2e}, {el:.1f}s"


def criterion_2(no_interaction=False):
    t0 = time.perf_counter()
    worst_eig = worst_res = 0.0
    refuted = asym = 0
    for d, th in random_suite(no_interaction):
        rep = verify_diagonalization(d, th)
        worst_eig = max(worst_eig, rep.eig_mismatch / rep.lambda1)
        worst_res = max(worst_res, rep.residual_max)
        sp = eigenvalue_spectrum(d, th)
        if d.g != d.h and sp.lambda3 != sp.lambda5:
            # the alternative pairing (row root with h-1 copies) against the dense spectrum
            asym += 1
            W = weighted_vcheck(d, th).to_dense()
            eig = np.sort(np.linalg.eigvalsh((W + W.T) / 2))
            alt = np.sort(np.concatenate([np.full(sp.mult0, sp.lambda0), np.full(sp.mult7, sp.lambda7),
                                          np.full(d.h - 1, sp.lambda3), np.full(d.g - 1, sp.lambda5),
                                          [sp.lambda1]]))
            refuted += np.abs(eig - alt).max() > 1e-8 * sp.lambda1
    el = time.perf_counter() - t0
    ok = worst_eig <= 1e-8 and worst_res <= 1e-10 and el < 30 and refuted == asym
    return ok, (f"eig dev/λ1 = {worst_eig:.1e}, projector resid = {worst_res:.1e}, {el:.1f}s; "
                f"multiplicities λ3:g-1, λ5:h-1 (swapped pairing refuted on {refuted}/{asym} g≠h designs)")


def criterion_3(no_interaction=False):
    d = balanced_design(3, 4, 5)
    th = _theta(DEFAULT, no_interaction)
    B = balanced_inverse(d, th)
    r = inf_resid(build_V(d, th).to_dense(), B.to_dense())
    gap = max_abs_diff(B.to_dense(), vcheck_inverse(d, th).to_dense())
    return r <= 1e-10 and gap <= 1e-12, f"|V B - I| = {r:.1e}, |B - V̌^-1| = {gap:.1e}"


def criterion_4(no_interaction=False):
    rng = np.random.default_rng(404)
    t0 = time.perf_counter()
    worst, count = 0.0, 0
    while count < 20:
        d = sample_design_uniform(int(rng.integers(2, 7)), int(rng.integers(2, 7)), 1, 8, rng)
        if d.is_balanced or d.n > 300:
            continue
        count += 1
        th = _theta(rng.uniform(0.1, 10, 4), no_interaction)
        worst = max(worst, float(np.abs(sherman_morrison_inverse(d, th) - dense_inverse_oracle(d, th)).max()))
    el = time.perf_counter() - t0
    return worst <= 1e-8 and el < 60, f"max |SM - oracle| = {worst:.1e} over 20 designs, {el:.1f}s"


def criterion_5(no_interaction=False):
    worst = max(float(np.abs(exact_structured_inverse(d, th).to_dense() - dense_inverse_oracle(d, th)).max())
                for d, th in random_suite(no_interaction))
    d = sample_design_uniform(20, 20, 10, 15, 505)
    th = _theta(DEFAULT, no_interaction)
    t0 = time.perf_counter()
    S = exact_structured_inverse(d, th)
    t_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    O = dense_inverse_oracle(d, th)
    t_d = time.perf_counter() - t0
    big = float(np.abs(S.to_dense() - O).max())
    ratio = t_s / t_d
    ok = worst <= 1e-9 and big <= 1e-9 and ratio <= 0.1
    return ok, (f"max |structured - oracle| = {worst:.1e} (suite), {big:.1e} at n={d.n}; "
                f"time {t_s * 1e3:.1f}ms vs {t_d * 1e3:.0f}ms, ratio {ratio:.4f}")


def criterion_6(no_interaction=False):
    rng = np.random.default_rng(606)
    th = _theta(DEFAULT, no_interaction)
    worst_excess, count, mono = -np.inf, 0, True
    while count < 10:
        d = sample_design_delta(int(rng.integers(3, 6)), int(rng.integers(3, 6)), int(rng.integers(4, 11)),
                                float(rng.uniform(0.1, 0.45)), rng)
        if d.is_balanced or d.n > 300:
            continue
        count += 1
        O = dense_inverse_oracle(d, th)
        err = [float(np.abs(neumann_inverse(d, th, r).to_dense() - O).max()) for r in range(6)]
        mono &= all(b <= a for a, b in zip(err, err[1:]))
        bound = d.delta / (1 - d.delta) + 0.1
        for r in (1, 2, 3):
            ratio = err[r + 1] / err[r]
            if ratio < 0:
                mono = False
            worst_excess = max(worst_excess, ratio - bound)
    ok = mono and worst_excess <= 0
    return ok, f"monotone over r=0..5: {mono}; max(ratio - (Δ/(1-Δ)+0.1)) = {worst_excess:.3f}"


def criterion_7():
    t0 = time.perf_counter()
    rep = run_case1(SimConfig.desk("case1", record_timing=False))
    el = time.perf_counter() - t0
    a = {gh: rep.mean_air(g=gh[0], h=gh[1]) for gh in ((10, 15), (20, 25), (50, 45))}
    ok = a[(50, 45)] < a[(10, 15)] and a[(20, 25)] < a[(10, 15)] and el < 300
    return ok, "mean AIR " + ", ".join(f"{g}x{h}={v:.4f}" for (g, h), v in a.items()) + f", {el:.0f}s"


def criterion_8():
    t0 = time.perf_counter()
    rep = run_case2(SimConfig.desk("case2", record_timing=False))
    el = time.perf_counter() - t0
    deltas, orders = (0.15, 0.25, 0.35, 0.45), range(6)
    A = np.array([[rep.mean_air(delta_target=dl, r=r) for r in orders] for dl in deltas])
    dec_r = bool(np.all(np.diff(A, axis=1) < 0))
    inc_d = bool(np.all(np.diff(A, axis=0) > 0))
    ok = dec_r and inc_d and el < 300
    return ok, f"decreasing in r: {dec_r}, increasing in Δ: {inc_d}, AIR range {A.min():.1e}..{A.max():.1e}, {el:.0f}s"


def criterion_9():
    th = theta(*DEFAULT)
    err = {}
    for k in (20, 40):
        d = sample_design_uniform(k, k, 2, 6, 909)
        err[k] = max_abs_diff(asymptotic_inverse(d, th), exact_structured_inverse(d, th))
    ratio = err[40] / err[20]
    return ratio <= 0.7, f"error 20x20 = {err[20]:.2e}, 40x40 = {err[40]:.2e}, ratio {ratio:.3f}"


def criterion_10():
    results = [run_suite(s, seed=10, instances=50) for s in ("lemma1", "lemma2", "lemma3", "lemma4", "lemma5")]
    A = np.arange(1, 10).reshape(3, 3)
    kr = khatri_rao_dense(A, [2, 1], [2, 1], A.T, [1, 2], [1, 2])
    kr_ok = np.array_equal(kr, [[1, 2, 12, 21], [4, 5, 24, 42], [14, 16, 45, 72], [21, 24, 54, 81]])
    ident = max(r.worst for r in results[:2])
    ok = all(r.passed for r in results) and ident <= IDENTITY_TOL and kr_ok
    fails = [r.name for r in results if not r.passed]
    return ok, f"identity worst {ident:.1e}; failing suites {fails or 'none'}; 4x4 example exact: {kr_ok}"


def criterion_11():
    sp = eigenvalue_spectrum(balanced_design(2, 3, 3), _theta(DEFAULT, True))
    collapsed = sp.lambda7 == sp.lambda0 and sp.distinct == 4
    parts = []
    ok = collapsed
    for k, fn in enumerate((criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6), 1):
        good, _ = fn(no_interaction=True)
        ok &= good
        parts.append(f"{k}:{'ok' if good else 'FAIL'}")
    return ok, f"λ7 = λ0 with 4 distinct roots: {collapsed}; rerun " + " ".join(parts)


CRITERIA = {
    1: ("closed-form inverse of the modified covariance", criterion_1),
    2: ("eigenvalues and multiplicities of the weighted modified covariance", criterion_2),
    3: ("balanced five-projector inverse", criterion_3),
    4: ("rank-one update recursion is exact", criterion_4),
    5: ("structured exact inverse agrees and is >= 10x faster", criterion_5),
    6: ("truncated expansion error decays geometrically", criterion_6),
    7: ("case 1 AIR falls as the grid grows", criterion_7),
    8: ("case 2 AIR falls in r and rises in unbalance", criterion_8),
    9: ("block-diagonal approximation error halves with the grid", criterion_9),
    10: ("identity and inequality suites", criterion_10),
    11: ("no-interaction model: collapsed spectrum, criteria 1-6 rerun", criterion_11),
}


def _check(number, record_property):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OutsideHypothesisWarning)
        ok, detail = CRITERIA[number][1]()
    record_property("detail", detail)
    assert ok, detail


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_acceptance(number, record_property, request):
    request.node.add_marker(pytest.mark.acceptance(number, CRITERIA[number][0]))
    _check(number, record_property)


if __name__ == "__main__":
    for k, (title, fn) in CRITERIA.items():
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OutsideHypothesisWarning)
            ok, detail = fn()
        print(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {title}  [{detail}]", flush=True)
