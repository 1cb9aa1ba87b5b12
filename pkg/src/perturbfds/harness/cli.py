"""Command line entry point: ``perturbfds run|verify|table``."""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

from ..errors import ConfigError, DenseRankWarning, RankGrowthWarning
from .config import load_config
from .experiments import build_plan, kernel_spec, run_experiment, run_point, sweep_points
from .tables import FORMATS, emit_table, read_table, summarize


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="perturbfds",
                                 description="Fast direct solves after local boundary changes.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment sweep and write its table")
    run.add_argument("--config", required=True)
    run.add_argument("--out", help="output directory; defaults to the config's output entry")
    run.add_argument("--seed", type=int)

    ver = sub.add_parser("verify", help="check the smallest sweep point against dense solves")
    ver.add_argument("--config", required=True)
    ver.add_argument("--seed", type=int)

    tab = sub.add_parser("table", help="print a summary of a result table")
    tab.add_argument("path")
    return ap


def _cmd_run(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    rows = run_experiment(cfg)
    out = Path(args.out or cfg.output)
    for fmt in FORMATS:
        emit_table(rows, out / f"{cfg.tag}_results.{fmt}", fmt)
    text = summarize(rows)
    (out / f"{cfg.tag}_summary.txt").write_text(text + "\n")
    print(text)
    print(f"wrote {cfg.tag}_results.csv, .json and _summary.txt to {out}")
    return 0 if all(r["invariants_ok"] for r in rows) else 1


def _cmd_verify(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    cfg.repeats, cfg.solve_repeats, cfg.warmup = 1, 1, False
    n_panels, factor = sweep_points(cfg)[0]
    row = run_point(cfg, build_plan(cfg, n_panels, factor), cfg.seed)
    print(summarize([row]))
    spec = kernel_spec(cfg)
    print(f"equation={spec.equation} oracle_error={row.get('oracle_error')} "
          f"failed={row['checks_failed'] or 'none'}")
    return 0 if row["invariants_ok"] else 1


def _cmd_table(args) -> int:
    print(summarize(read_table(args.path)))
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", (RankGrowthWarning, DenseRankWarning))
    handlers = {"run": _cmd_run, "verify": _cmd_verify, "table": _cmd_table}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
