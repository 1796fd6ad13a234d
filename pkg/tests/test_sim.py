import csv
import io

import numpy as np
import pytest

from krcov.algebra import CellBlockMatrix
from krcov.covariance import VarianceComponents, build_V
from krcov.design import balanced_design, new_design, sample_design_uniform
from krcov.inverse import asymptotic_inverse, dense_inverse_oracle, exact_structured_inverse
from krcov.sim import (
    CSV_HEADER, SimConfig, air, bench_timing, replicate_seed, residual_stats, run_case1, run_case2,
)

TH = VarianceComponents.default()
SMALL = new_design(2, 3, [[2, 1, 3], [1, 2, 1]])


def test_air_examples():
    V = build_V(SMALL, TH)
    assert air(V, exact_structured_inverse(SMALL, TH)) <= 1e-12
    assert air(V, dense_inverse_oracle(SMALL, TH)) <= 1e-12
    assert air(V, CellBlockMatrix.zeros(SMALL)) == pytest.approx(1 / np.sqrt(SMALL.n))
    assert air(V, np.zeros((SMALL.n, SMALL.n))) == pytest.approx(1 / np.sqrt(SMALL.n))
    a = air(V, asymptotic_inverse(SMALL, TH))
    assert 0 < a < np.inf
    with pytest.raises(ValueError):
        air(V, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        air(V, CellBlockMatrix.zeros(balanced_design(2, 3, 1)))


def test_structured_and_dense_residuals_agree():
    d = sample_design_uniform(4, 5, 1, 6, 0)
    V = build_V(d, TH)
    est = asymptotic_inverse(d, TH)
    dense = residual_stats(V, est, dense_cap=10 ** 9)
    structured = residual_stats(V, est, dense_cap=0)
    assert structured == pytest.approx(dense, rel=1e-10)


def small_case1(**kw):
    return SimConfig(case="case1", grid=((3, 4), (4, 5)), N=3, record_timing=False, **kw)


def test_case1_rows_and_determinism():
    rep = run_case1(small_case1())
    assert len(rep.rows) == 6
    assert all(r.r == -1 and r.m_L == -1 and r.delta_target == -1 for r in rep.rows)
    assert all(r.air > 0 and r.elapsed_ms == -1 and r.method == "asymptotic" for r in rep.rows)
    assert [r.sort_key() for r in rep.rows] == sorted(r.sort_key() for r in rep.rows)
    assert rep.to_csv() == run_case1(small_case1()).to_csv()
    assert rep.to_csv() == run_case1(small_case1(threads=3)).to_csv()
    one = SimConfig(case="case1", grid=((3, 4),), N=1, record_timing=False)
    assert run_case1(one).rows == run_case1(one).rows


def test_csv_schema(tmp_path):
    rep = run_case1(small_case1())
    path = tmp_path / "out.csv"
    text = rep.to_csv(path)
    assert path.read_text() == text
    rows = list(csv.reader(io.StringIO(text)))
    assert tuple(rows[0]) == CSV_HEADER
    assert rows[0] == "case,g,h,m_L,delta_target,realized_delta,r,replicate,n,air,max_resid,elapsed_ms,method,seed".split(",")
    assert all(len(r) == len(CSV_HEADER) for r in rows)
    assert rows[1][3] == "-1" and rows[1][4] == "-1" and rows[1][6] == "-1"


def test_replicate_seed_is_recorded_and_used():
    rep = run_case1(small_case1())
    row = rep.rows[0]
    assert row.seed == replicate_seed(small_case1().seed, row.g, row.h, 0, 0, row.replicate)
    d = sample_design_uniform(row.g, row.h, 1, 15, row.seed)
    assert d.n == row.n and d.delta == row.realized_delta


def test_balanced_override_matches_direct_residual():
    cfg = SimConfig(case="case1", grid=((3, 4),), N=2, cell_range=(4, 4), record_timing=False)
    rep = run_case1(cfg)
    d = balanced_design(3, 4, 4)
    expected = air(build_V(d, TH), asymptotic_inverse(d, TH))
    assert all(r.air == pytest.approx(expected, rel=1e-12) for r in rep.rows)


def test_case2_balanced_and_exact():
    cfg = SimConfig(case="case2", grid=((3, 4),), N=2, m_L=(5,), deltas=(0.0,), r=(0, 1, 2), record_timing=False)
    rep = run_case2(cfg)
    assert len(rep.rows) == 6
    assert all(r.air <= 1e-10 and r.realized_delta == 0 for r in rep.rows)
    ex = SimConfig(case="case2", grid=((3, 4),), N=2, m_L=(5,), deltas=(0.45,), method="exact-structured")
    rows = run_case2(ex).rows
    assert len(rows) == 2 and all(r.air <= 1e-9 and r.r == -1 for r in rows)


def test_case2_orders_reuse_one_design():
    cfg = SimConfig(case="case2", grid=((4, 5),), N=2, m_L=(10,), deltas=(0.35,), r=(0, 3), record_timing=False)
    rep = run_case2(cfg)
    by_rep = {}
    for r in rep.rows:
        by_rep.setdefault(r.replicate, []).append(r)
    for rows in by_rep.values():
        assert len({(r.n, r.seed, r.realized_delta) for r in rows}) == 1
        assert rows[1].air < rows[0].air


@pytest.mark.parametrize("kw", [dict(N=0), dict(grid=()), dict(case="case3"), dict(method="cholesky"),
                                dict(case="case2", r=()), dict(r=(-1,)), dict(threads=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SimConfig(**kw)


def test_config_presets():
    assert SimConfig.desk("case1").grid == ((10, 15), (20, 25), (50, 45))
    assert SimConfig.desk("case2").method == "neumann"
    full = SimConfig.full_scale("case1")
    assert full.N == 200 and len(full.grid) == 25
    assert len(SimConfig.full_scale("case2").grid) == 4


def test_bench_small_design():
    rows = bench_timing(SMALL, TH, ("exact-dense", "exact-structured", "exact-sm", "vcheck", "neumann", "asymptotic"))
    assert {r.method for r in rows} == {"exact-dense", "exact-structured", "exact-sm", "vcheck", "neumann", "asymptotic"}
    for r in rows:
        assert r.elapsed_ms < 10
        if r.method.startswith("exact"):
            assert r.max_resid < 1e-10
    assert len(bench_timing(SMALL, TH, ("exact-dense",), dense_cap=5)) == 0


def test_bench_neumann_cheaper_than_exact_solve():
    d = sample_design_uniform(20, 20, 10, 13, 0)
    rows = {r.method: r.elapsed_ms for r in bench_timing(d, TH, ("exact-structured", "neumann"), repeats=3)}
    assert rows["neumann"] < rows["exact-structured"]
