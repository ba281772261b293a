"""Command-line entry point: ``ddcmix {study,estimate,simulate,bench-inner}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import DDCError
from .harness import (
    bench_inner,
    emit_tables,
    estimate_once,
    load_config,
    run_study,
    simulate_from_config,
)
from .kernels import BACKEND


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ddcmix", description="EM-NPL(q) estimation and Monte Carlo studies")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("study", help="run a Monte Carlo study")
    s.add_argument("config")
    s.add_argument("--replications", type=int)
    s.add_argument("--output", help="output directory (overrides the config)")
    s.add_argument("--workers", type=int)
    s.add_argument("--format", choices=["csv", "json", "both"], default="both")

    e = sub.add_parser("estimate", help="estimate on one panel CSV")
    e.add_argument("config")
    e.add_argument("panel")
    e.add_argument("--method")
    e.add_argument("--q")
    e.add_argument("--types", type=int, help="number of latent types")
    e.add_argument("--starts", type=int, default=1)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--output", help="write the JSON report here")

    m = sub.add_parser("simulate", help="simulate a panel CSV from the configured design")
    m.add_argument("config")
    m.add_argument("--output", required=True)
    m.add_argument("--seed", type=int)
    m.add_argument("--no-types", action="store_true", help="omit the latent type column")

    b = sub.add_parser("bench-inner", help="time candidate inner solvers at the true CCPs")
    b.add_argument("config")
    b.add_argument("--q", nargs="*")
    b.add_argument("--repeats", type=int, default=3)
    return p


def _study(args) -> int:
    cfg = load_config(args.config)
    if args.replications is not None:
        cfg.replications = args.replications
    if args.workers is not None:
        cfg.workers = args.workers
    out = args.output or cfg.output_dir
    cells = run_study(cfg)
    formats = ("csv", "json") if args.format == "both" else (args.format,)
    for path in emit_tables(cells, out, formats):
        print(path)
    for c in cells:
        r = c.row()
        print(f"{r['method']:>14} q={r['q']:>4} ct={r['ct_mean']:.3f}s mse={r['mse']:.4f} "
              f"iter={r['avg_iter']:.1f} conv={r['conv_pct']:.1f}%")
    return 0


def _estimate(args) -> int:
    cfg = load_config(args.config)
    res, report = estimate_once(cfg, args.panel, args.method, args.q, args.types, args.starts, args.output,
                                args.seed)
    if args.output is None:
        print(json.dumps({k: v for k, v in report.items() if k != "trace"}, indent=2))
    return 0 if res.converged else 3


def _simulate(args) -> int:
    cfg = load_config(args.config)
    data = simulate_from_config(cfg, args.output, args.seed, not args.no_types)
    print(f"wrote {data.n_markets} markets x {data.n_periods} periods to {args.output}")
    return 0


def _bench(args) -> int:
    cfg = load_config(args.config)
    rows = bench_inner(cfg, args.q or None, args.repeats)
    print(f"backend: {BACKEND}")
    for r in rows:
        print(f"{r['representation']:>3} {r['algorithm']:>8} q={r['q']:>4} {r['seconds']:.4f}s "
              f"iters={r['iterations']} resid={r['residual']:.2e}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"study": _study, "estimate": _estimate, "simulate": _simulate, "bench-inner": _bench}[args.command]
    try:
        return handler(args)
    except DDCError as exc:
        print(f"ddcmix: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"ddcmix: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
