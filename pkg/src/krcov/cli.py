"""Command-line front end: invert, spectrum, simulate, verify, bench.

Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import sys
import warnings
from pathlib import Path

import numpy as np

from . import sim, verify
from .algebra import CellBlockMatrix, SingularSystemError
from .covariance import VarianceComponents, build_V
from .design import Design, DesignError, read_design, sample_design_delta, sample_design_uniform
from .inverse import METHODS, NumericalBreakdown, OutsideHypothesisWarning, invert, neumann_hypothesis_holds
from .spectral import eigenvalue_spectrum

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


# -- argument helpers ---------------------------------------------------------

def _int_list(text):
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _float_list(text):
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _grid(text):
    pairs = []
    for item in str(text).split(","):
        g, _, h = item.strip().lower().partition("x")
        pairs.append((int(g), int(h)))
    return tuple(pairs)


def _add_design_args(p):
    p.add_argument("--cells", type=Path, help="design file: 'g h' then g rows of h counts")
    p.add_argument("--g", type=int)
    p.add_argument("--h", type=int)
    p.add_argument("--lo", type=int, default=1, help="smallest sampled cell count")
    p.add_argument("--hi", type=int, default=15, help="largest sampled cell count")
    p.add_argument("--mL", type=int, help="sample with this minimum cell count and --delta")
    p.add_argument("--delta", type=float, help="target unbalance for --mL sampling")
    p.add_argument("--seed", type=int, default=0)


def _add_theta_args(p):
    for name in ("sa2", "sb2", "sg2", "se2"):
        p.add_argument(f"--{name}", type=float)


def _design_from(args) -> Design:
    if args.cells is not None:
        d = read_design(args.cells)
        if (args.g is not None and args.g != d.g) or (args.h is not None and args.h != d.h):
            raise DesignError(f"--g/--h ({args.g}, {args.h}) disagree with {args.cells} ({d.g}, {d.h})")
        return d
    if args.g is None or args.h is None:
        raise UsageError("give --cells PATH or both --g and --h")
    if args.mL is not None:
        if args.delta is None:
            raise UsageError("--mL sampling needs --delta")
        return sample_design_delta(args.g, args.h, args.mL, args.delta, args.seed)
    return sample_design_uniform(args.g, args.h, args.lo, args.hi, args.seed)


def _theta_from(args) -> tuple[VarianceComponents, str]:
    vals = [args.sa2, args.sb2, args.sg2, args.se2]
    if all(v is None for v in vals):
        print("note: variance components not given, using default (5, 7, 3, 4)", file=sys.stderr)
        return VarianceComponents.default(), "default"
    if any(v is None for v in vals):
        raise UsageError("give all of --sa2 --sb2 --sg2 --se2 or none")
    return VarianceComponents(*vals), "flags"


def _write(text: str, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# -- config file --------------------------------------------------------------

def read_config(path) -> dict[str, str]:
    """key = value lines; '#' comments and [section] headers are ignored."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        val = val.strip().strip("'\"")
        if val.startswith("[") and val.endswith("]"):
            val = val[1:-1].replace(" ", "")
        out[key.strip().replace("-", "_")] = val
    return out


_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _apply_config(parser, sub, cfg: dict[str, str]):
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, val in cfg.items():
        if key not in known or key in ("help", "config"):
            raise UsageError(f"unknown config key {key!r}")
        action = known[key]
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            if val.lower() not in _BOOL:
                raise UsageError(f"config key {key!r} needs true/false")
            defaults[key] = _BOOL[val.lower()]
        else:
            defaults[key] = val  # argparse applies the type to string defaults
    sub.set_defaults(**defaults)


# -- subcommands --------------------------------------------------------------

def cmd_invert(args) -> int:
    design = _design_from(args)
    th, source = _theta_from(args)
    if args.method == "neumann" and args.r is None:
        raise UsageError("--method neumann needs --r")
    r = args.r or 0
    outside = args.method == "neumann" and not neumann_hypothesis_holds(design)
    if outside:
        print(f"note: delta={design.delta:.3f} >= 0.5, the expansion may diverge", file=sys.stderr)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OutsideHypothesisWarning)
        est, ms = sim.timed(lambda: invert(design, th, args.method, r), not args.no_timing)
    V = build_V(design, th)
    air, resid = sim.residual_stats(V, est, args.dense_cap)
    if args.dense_out is not None:
        dense = est.to_dense() if isinstance(est, CellBlockMatrix) else est
        if str(args.dense_out).endswith(".npy"):
            np.save(args.dense_out, dense)
        else:
            np.savetxt(args.dense_out, dense, fmt="%.17g")
    header = ("method", "g", "h", "n", "m_L", "m_U", "delta", "r", "max_resid", "air", "elapsed_ms",
              "theta_source", "outside_theorem_hypothesis")
    row = (args.method, design.g, design.h, design.n, design.m_L, design.m_U, repr(design.delta),
           r if args.method == "neumann" else -1, repr(resid), repr(air), repr(ms) if ms >= 0 else "-1",
           source, str(outside).lower())
    _write(_csv_text(header, [row]), args.out)
    return EXIT_OK


def cmd_spectrum(args) -> int:
    design = _design_from(args)
    th, source = _theta_from(args)
    sp = eigenvalue_spectrum(design, th)
    rows = [(name, repr(float(v)), k) for name, v, k in sp.pairs()]
    _write(_csv_text(("root", "value", "multiplicity"), rows), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    th, source = _theta_from(args)
    if args.grid is not None:
        grid = args.grid
    elif args.g is not None and args.h is not None:
        grid = ((args.g, args.h),)
    else:
        grid = None
    kw = dict(theta=th, seed=args.seed, threads=args.threads, record_timing=not args.no_timing,
              dense_cap=args.dense_cap)
    if args.method:
        kw["method"] = args.method
    base = sim.SimConfig.full_scale(args.case, **kw) if args.full_scale else sim.SimConfig.desk(args.case, **kw)
    over = {}
    if grid is not None:
        over["grid"] = grid
    if args.N is not None:
        over["N"] = args.N
    if args.lo is not None or args.hi is not None:
        over["cell_range"] = (args.lo if args.lo is not None else base.cell_range[0],
                              args.hi if args.hi is not None else base.cell_range[1])
    if args.mL is not None:
        over["m_L"] = args.mL
    if args.delta is not None:
        over["deltas"] = args.delta
    if args.r is not None:
        over["r"] = args.r
    cfg = dataclasses.replace(base, **over)
    report = sim.run(cfg)
    _write(report.to_csv(), args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    names = verify.SUITES if args.suite == "all" else (args.suite,)
    results = [verify.run_suite(s, args.seed, args.instances) for s in names]
    lines = [r.line() for r in results]
    for r in results:
        lines += [f"  {r.name}: {msg}" for msg in r.failures[:5]]
    _write("\n".join(lines) + "\n", args.out)
    return EXIT_OK if all(r.passed for r in results) else EXIT_INPUT


def cmd_bench(args) -> int:
    design = _design_from(args)
    th, _ = _theta_from(args)
    rows = sim.bench_timing(design, th, args.methods, r=args.r, dense_cap=args.dense_cap, repeats=args.repeats)
    text = _csv_text(("method", "n", "gh", "elapsed_ms", "max_resid"),
                     [(b.method, b.n, b.gh, f"{b.elapsed_ms:.3f}", repr(b.max_resid)) for b in rows])
    _write(text, args.out)
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="krcov", description="Structured inverses for crossed random-effects covariances.")
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = subs.add_parser("invert", help="invert V by one method and report the residual")
    _add_design_args(p)
    _add_theta_args(p)
    p.add_argument("--method", choices=METHODS, default="exact-structured")
    p.add_argument("--r", type=int, help="truncation order for --method neumann")
    p.add_argument("--dense-out", type=Path, help="also write the dense inverse (.npy or text)")
    p.add_argument("--dense-cap", type=int, default=sim.DENSE_CAP)
    p.add_argument("--no-timing", action="store_true")
    p.set_defaults(func=cmd_invert)

    p = subs.add_parser("spectrum", help="closed-form eigenvalues and multiplicities")
    _add_design_args(p)
    _add_theta_args(p)
    p.set_defaults(func=cmd_spectrum)

    p = subs.add_parser("simulate", help="inversion-residual Monte Carlo, CSV output")
    p.add_argument("case", choices=("case1", "case2"))
    p.add_argument("--grid", type=_grid, help="comma list like 10x15,20x25")
    p.add_argument("--g", type=int)
    p.add_argument("--h", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--lo", type=int, help="case1 smallest cell count")
    p.add_argument("--hi", type=int, help="case1 largest cell count")
    p.add_argument("--mL", type=_int_list, help="case2 minimum cell counts, comma list")
    p.add_argument("--delta", type=_float_list, help="case2 target unbalance, comma list")
    p.add_argument("--r", type=_int_list, help="case2 truncation orders, comma list")
    p.add_argument("--method", choices=sim.SIM_METHODS)
    p.add_argument("--seed", type=int, default=sim.SimConfig.seed)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--dense-cap", type=int, default=sim.DENSE_CAP)
    p.add_argument("--full-scale", action="store_true", help="N=200 on the complete grids")
    p.add_argument("--no-timing", action="store_true", help="write elapsed_ms as -1")
    _add_theta_args(p)
    p.set_defaults(func=cmd_simulate)

    p = subs.add_parser("verify", help="identity and inequality suites")
    p.add_argument("--suite", choices=verify.SUITES + ("all",), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=50)
    p.set_defaults(func=cmd_verify)

    p = subs.add_parser("bench", help="wall clock per inverse method")
    _add_design_args(p)
    _add_theta_args(p)
    p.add_argument("--methods", type=lambda s: tuple(s.split(",")), default=sim.BENCH_METHODS)
    p.add_argument("--r", type=int, default=2)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--dense-cap", type=int, default=sim.DENSE_CAP)
    p.set_defaults(func=cmd_bench)

    for sp in subs.choices.values():
        sp.add_argument("--out", type=Path, help="write output here instead of stdout")
        sp.add_argument("--config", type=Path, help="key = value file; flags win")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config is not None:
            sub = parser._subparsers._group_actions[0].choices[args.command]
            _apply_config(parser, sub, read_config(args.config))
            args = parser.parse_args(argv)
        if getattr(args, "methods", None):
            bad = [m for m in args.methods if m not in METHODS]
            if bad:
                raise UsageError(f"unknown methods {bad}")
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (NumericalBreakdown, SingularSystemError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"krcov: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, DesignError, ValueError, OSError) as exc:
        print(f"krcov: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
