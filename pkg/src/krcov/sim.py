"""Monte Carlo harness for the inversion-residual experiments.

Every replicate draws its design from a seed derived from
``(seed, g, h, m_L index, delta index, replicate)`` through
:class:`numpy.random.SeedSequence`, so rows do not depend on scheduling and
the CSV is a pure function of the configuration.
"""

from __future__ import annotations

import csv
import io
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .algebra import CellBlockMatrix
from .covariance import VarianceComponents, build_V
from .design import Design, sample_design_delta, sample_design_uniform
from .inverse import OutsideHypothesisWarning, invert

CSV_HEADER = ("case", "g", "h", "m_L", "delta_target", "realized_delta", "r", "replicate",
              "n", "air", "max_resid", "elapsed_ms", "method", "seed")
DENSE_CAP = 5000
SIM_METHODS = ("asymptotic", "neumann", "vcheck", "exact-structured")

CASE1_GRID = ((10, 15), (20, 25), (50, 45))
CASE2_GRID = ((10, 15),)
FULL_CASE1_GRID = tuple((g, h) for g in (10, 20, 50, 70, 100) for h in (15, 25, 45, 75, 95))
FULL_CASE2_GRID = tuple((g, h) for g in (10, 20) for h in (15, 25))


# -- residuals -------------------------------------------------------------------

def residual_stats(V: CellBlockMatrix, Vinv_hat, dense_cap: int = DENSE_CAP) -> tuple[float, float]:
    """(AIR contribution, max-abs entry) of V V̂^{-1} - I.

    A dense V̂^{-1}, or any input with n <= dense_cap, goes through an explicit
    n x n product (V applied blockwise, O(n^2)); structured inputs above the cap
    stay in the compressed algebra.
    """
    n = V.design.n
    if isinstance(Vinv_hat, CellBlockMatrix):
        if Vinv_hat.design != V.design:
            raise ValueError("V and its inverse estimate live on different designs")
        if n > dense_cap:
            E = (V @ Vinv_hat).minus_identity()
            return E.frobenius() / n, E.max_abs()
        Vinv_hat = Vinv_hat.to_dense()
    X = np.asarray(Vinv_hat, dtype=float)
    if X.shape != (n, n):
        raise ValueError(f"inverse estimate has shape {X.shape}, expected ({n}, {n})")
    E = V @ X
    E[np.diag_indices(n)] -= 1.0
    return float(np.linalg.norm(E) / n), float(np.abs(E).max())


def air(V: CellBlockMatrix, Vinv_hat, dense_cap: int = DENSE_CAP) -> float:
    """(1/n) ||V V̂^{-1} - I||_F for one replicate."""
    return residual_stats(V, Vinv_hat, dense_cap)[0]


# -- configuration and report ---------------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    case: str = "case1"
    grid: tuple[tuple[int, int], ...] = CASE1_GRID
    theta: VarianceComponents = field(default_factory=VarianceComponents.default)
    N: int = 20
    cell_range: tuple[int, int] = (1, 15)
    m_L: tuple[int, ...] = (10,)
    deltas: tuple[float, ...] = (0.15, 0.25, 0.35, 0.45)
    r: tuple[int, ...] = (0, 1, 2, 3, 4, 5)
    seed: int = 20240531
    method: str = ""
    dense_cap: int = DENSE_CAP
    threads: int = 1
    record_timing: bool = True

    def __post_init__(self):
        if self.case not in ("case1", "case2"):
            raise ValueError(f"case must be case1 or case2, not {self.case!r}")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not self.grid:
            raise ValueError("grid must be nonempty")
        if not self.method:
            object.__setattr__(self, "method", "asymptotic" if self.case == "case1" else "neumann")
        if self.method not in SIM_METHODS:
            raise ValueError(f"method must be one of {SIM_METHODS}")
        if self.case == "case2" and self.method == "neumann" and not self.r:
            raise ValueError("case2 needs a nonempty r list")
        if any(k < 0 for k in self.r):
            raise ValueError("truncation orders must be >= 0")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @classmethod
    def desk(cls, case: str, **kw) -> SimConfig:
        grid = CASE1_GRID if case == "case1" else CASE2_GRID
        return cls(case=case, grid=kw.pop("grid", grid), **kw)

    @classmethod
    def full_scale(cls, case: str, **kw) -> SimConfig:
        """N = 200 on the complete grids."""
        if case == "case1":
            return cls(case=case, grid=FULL_CASE1_GRID, N=200, **kw)
        return cls(case=case, grid=FULL_CASE2_GRID, N=200, m_L=(10, 20), **kw)


@dataclass(frozen=True)
class SimRow:
    case: str
    g: int
    h: int
    m_L: int
    delta_target: float
    realized_delta: float
    r: int
    replicate: int
    n: int
    air: float
    max_resid: float
    elapsed_ms: float
    method: str
    seed: int

    def sort_key(self):
        return (self.case, self.g, self.h, self.m_L, self.delta_target, self.r, self.replicate)

    def values(self):
        return (self.case, self.g, self.h, self.m_L, _fmt(self.delta_target), _fmt(self.realized_delta),
                self.r, self.replicate, self.n, _fmt(self.air), _fmt(self.max_resid),
                _fmt(self.elapsed_ms), self.method, self.seed)


def _fmt(x: float) -> str:
    # repr round-trips exactly; integers-valued sentinels print as -1
    return "-1" if x == -1 else repr(float(x))


@dataclass
class SimReport:
    config: SimConfig
    rows: list[SimRow]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in self.rows:
            w.writerow(row.values())
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def mean_air(self, **match) -> float:
        """Average AIR over rows whose fields equal ``match``."""
        vals = [r.air for r in self.rows if all(getattr(r, k) == v for k, v in match.items())]
        if not vals:
            raise KeyError(f"no rows match {match}")
        return float(np.mean(vals))


# -- runners ------------------------------------------------------------------

def replicate_seed(seed: int, g: int, h: int, mL_idx: int, delta_idx: int, b: int) -> int:
    """64-bit seed for one replicate; the same value goes into the CSV."""
    ss = np.random.SeedSequence([seed % 2 ** 64, g, h, mL_idx, delta_idx, b])
    return int(ss.generate_state(1, np.uint64)[0])


def timed(fn, record):
    t0 = time.perf_counter()
    out = fn()
    return out, ((time.perf_counter() - t0) * 1e3 if record else -1.0)


def _map(fn, tasks, threads):
    if threads == 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks))


def _case1_task(cfg: SimConfig, task) -> list[SimRow]:
    (g, h), b = task
    s = replicate_seed(cfg.seed, g, h, 0, 0, b)
    design = sample_design_uniform(g, h, cfg.cell_range[0], cfg.cell_range[1], s)
    V = build_V(design, cfg.theta)
    r = cfg.r[0] if cfg.method == "neumann" else -1
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OutsideHypothesisWarning)
        est, ms = timed(lambda: invert(design, cfg.theta, cfg.method, max(r, 0)), cfg.record_timing)
    a, mx = residual_stats(V, est, cfg.dense_cap)
    return [SimRow("case1", g, h, -1, -1.0, design.delta, r, b, design.n, a, mx, ms, cfg.method, s)]


def _case2_task(cfg: SimConfig, task) -> list[SimRow]:
    (g, h), (li, mL), (di, delta), b = task
    s = replicate_seed(cfg.seed, g, h, li, di, b)
    design = sample_design_delta(g, h, mL, delta, s)
    V = build_V(design, cfg.theta)
    orders = cfg.r if cfg.method == "neumann" else (-1,)
    rows = []
    for r in orders:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OutsideHypothesisWarning)
            est, ms = timed(lambda: invert(design, cfg.theta, cfg.method, max(r, 0)), cfg.record_timing)
        a, mx = residual_stats(V, est, cfg.dense_cap)
        rows.append(SimRow("case2", g, h, mL, float(delta), design.delta, r, b, design.n, a, mx, ms,
                           cfg.method, s))
    return rows


def _run(cfg: SimConfig, fn, tasks) -> SimReport:
    chunks = _map(lambda t: fn(cfg, t), tasks, cfg.threads)
    rows = sorted((r for c in chunks for r in c), key=SimRow.sort_key)
    return SimReport(cfg, rows)


def run_case1(config: SimConfig) -> SimReport:
    if config.case != "case1":
        config = replace(config, case="case1")
    tasks = [(gh, b) for gh in config.grid for b in range(config.N)]
    return _run(config, _case1_task, tasks)


def run_case2(config: SimConfig) -> SimReport:
    if config.case != "case2":
        config = replace(config, case="case2")
    tasks = [(gh, ml, dl, b) for gh in config.grid for ml in enumerate(config.m_L)
             for dl in enumerate(config.deltas) for b in range(config.N)]
    return _run(config, _case2_task, tasks)


def run(config: SimConfig) -> SimReport:
    return run_case1(config) if config.case == "case1" else run_case2(config)


# -- timing -------------------------------------------------------------------

@dataclass(frozen=True)
class BenchRow:
    method: str
    n: int
    gh: int
    elapsed_ms: float
    max_resid: float


BENCH_METHODS = ("exact-dense", "exact-structured", "vcheck", "neumann", "asymptotic", "exact-sm")


def bench_timing(design: Design, th: VarianceComponents, methods=BENCH_METHODS, r: int = 2,
                 dense_cap: int = DENSE_CAP, repeats: int = 1) -> list[BenchRow]:
    """Best-of-``repeats`` wall clock per method on one design.

    Dense methods are skipped when n exceeds ``dense_cap``.  The residual
    column uses the compressed algebra for structured results.
    """
    V = build_V(design, th)
    rows = []
    for method in methods:
        if method in ("exact-dense", "exact-sm") and design.n > dense_cap:
            continue
        if method == "balanced" and not design.is_balanced:
            continue
        best, est = np.inf, None
        for _ in range(max(1, repeats)):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", OutsideHypothesisWarning)
                est, ms = timed(lambda: invert(design, th, method, r), True)
            best = min(best, ms)
        if isinstance(est, CellBlockMatrix):
            resid = (V @ est).minus_identity().max_abs()
        else:
            resid = residual_stats(V, est, dense_cap)[1]
        rows.append(BenchRow(method, design.n, design.gh, best, resid))
    return rows


__all__ = ["CSV_HEADER", "SimConfig", "SimRow", "SimReport", "air", "residual_stats", "run_case1",
           "run_case2", "run", "bench_timing", "BenchRow", "replicate_seed"]
