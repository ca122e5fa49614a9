"""Command-line entry point: certify, bunching, foliate, sweep."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .report import (
    EXIT_INVALID,
    cmd_bunching,
    cmd_certify,
    cmd_foliate,
    cmd_sweep,
    read_points,
    sweep_exit_code,
    write_sweep_csv,
)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="foliacert", description="Certified regularity of stable foliations.")
    p.add_argument("--jobs", type=int, default=None, help="worker count (default: FC_JOBS or 1)")
    p.add_argument("--canonical", action="store_true", help="omit wall-clock timings from reports")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("certify", help="largest certified q for a configured field")
    c.add_argument("--config", required=True)
    c.add_argument("--q-tol", type=float, default=None)
    c.add_argument("--exact", action="store_true", help="carry full precision through the bound chain")
    c.add_argument("--out", default=None, help="report path (JSON; a .txt mirror is written alongside)")

    b = sub.add_parser("bunching", help="bunching exponent statistics on attractor samples")
    b.add_argument("--config", required=True)
    b.add_argument("--q", type=float, required=True)
    b.add_argument("--t", type=_floats, required=True, help="comma-separated times")
    b.add_argument("--samples", type=int, default=None)
    b.add_argument("--seed", type=int, default=None)
    b.add_argument("--out", default=None)

    f = sub.add_parser("foliate", help="local stable leaves at given base points")
    f.add_argument("--config", required=True)
    f.add_argument("--points", required=True, help="file with one base point per row")
    f.add_argument("--rho", type=float, default=None)
    f.add_argument("--grid", type=int, default=None)
    f.add_argument("--seed", type=int, default=None)
    f.add_argument("--out", default=None, help="output directory for the report and leaf CSVs")

    s = sub.add_parser("sweep", help="certify along a parameter range")
    s.add_argument("--config", required=True)
    s.add_argument("--param", required=True)
    s.add_argument("--from", dest="lo", type=float, required=True)
    s.add_argument("--to", dest="hi", type=float, required=True)
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--out", default=None, help="CSV path (default: stdout)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    jobs = args.jobs
    if jobs is not None and jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    if jobs is not None:
        os.environ["FC_JOBS"] = str(jobs)
    try:
        cfg = load_config(args.config)
        if args.command == "sweep":
            rows = cmd_sweep(cfg, args.param, args.lo, args.hi, args.steps, jobs=jobs)
            write_sweep_csv(args.out or sys.stdout, args.param, rows)
            return sweep_exit_code(rows)
        if args.command == "certify":
            rep = cmd_certify(cfg, q_tol=args.q_tol, exact=args.exact)
            out = args.out
        elif args.command == "bunching":
            rep = cmd_bunching(cfg, args.q, args.t, args.samples, seed=args.seed, jobs=jobs)
            out = args.out
        else:
            out_dir = Path(args.out) if args.out else None
            rep = cmd_foliate(cfg, read_points(args.points), rho=args.rho, grid=args.grid,
                              out_dir=out_dir, seed=args.seed)
            out = str(out_dir / "report.json") if out_dir else None
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if out:
        rep.write(out, canonical=args.canonical)
    sys.stdout.write(rep.to_text(canonical=args.canonical))
    return rep.exit_code


if __name__ == "__main__":
    sys.exit(main())
