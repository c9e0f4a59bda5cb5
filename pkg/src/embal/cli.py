"""``embal`` command line: run, gen-synth, report, verify.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import data, engine, verify
from .config import ConfigError, load_config
from .core import EmbalError

RESULTS_ENV = "EMBAL_RESULTS_ROOT"
log = logging.getLogger("embal")


class UsageError(Exception):
    pass


def results_root(cli_value, cfg) -> Path:
    # precedence: --out, then the environment, then the config file
    if cli_value:
        return Path(cli_value)
    if os.environ.get(RESULTS_ENV):
        return Path(os.environ[RESULTS_ENV])
    return Path(cfg.output_dir)


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except FileNotFoundError as e:
        raise UsageError(f"config file not found: {e.filename}") from e
    except ConfigError as e:
        raise UsageError(f"{args.config}: {e}") from e
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    root = results_root(args.out, cfg)
    run_dir = cfg.run_dir(root)
    if args.resume and (run_dir / "config.snapshot").exists():
        res = engine.resume_experiment(run_dir, cfg)
    else:
        res = engine.run_experiment(cfg, root)
    print(f"{res.status}: {res.run_dir}")
    if res.final is not None:
        print(f"final {res.final['tier']} test_acc={res.final['test_acc']:.4f} pool_acc={res.final['pool_acc']:.4f}")
    return 0


def cmd_gen_synth(args) -> int:
    store = data.generate_synthetic(
        args.k, args.n, args.d, v=args.views, separation=args.separation,
        noise=args.noise, seed=args.seed, name=args.name or Path(args.out).stem,
    )
    if args.val_fraction or args.test_fraction:
        store = data.split_dataset(store, args.val_fraction, args.test_fraction, args.split_seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    data.write_store(store, args.out)
    print(f"wrote {args.out}: n={store.n} d={store.d} views={store.v} classes={store.k}")
    return 0


def cmd_report(args) -> int:
    root = Path(args.dir)
    if not root.is_dir():
        raise engine.NoRuns(f"results directory not found: {root}")
    runs = engine.find_runs(root)
    if not runs:
        raise engine.NoRuns(f"no runs under {root}")
    rows = engine.compare_runs(runs)
    if args.out:
        engine.write_comparison_csv(rows, args.out)
        print(f"wrote {args.out}: {len(rows)} rows from {len(runs)} runs")
    else:
        engine.write_comparison_csv(rows, sys.stdout)
    return 0


def cmd_verify(args) -> int:
    try:
        results = verify.run_checks(args.check)
    except KeyError as e:
        raise UsageError(e.args[0]) from e
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"failed checks: {', '.join(failed)}")
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="embal", description="Active learning over precomputed embeddings.")
    p.add_argument("-v", "--verbose", action="store_true", help="log each round")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment from a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, help="overrides the config seed")
    r.add_argument("--out", help=f"results root (default: ${RESULTS_ENV} or output_dir from the config)")
    r.add_argument("--resume", action="store_true", help="continue an interrupted run in place")
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("gen-synth", help="write a synthetic Gaussian-mixture store")
    g.add_argument("--out", required=True)
    g.add_argument("--k", type=int, default=10)
    g.add_argument("--n", type=int, default=5000)
    g.add_argument("--d", type=int, default=32)
    g.add_argument("--views", type=int, default=1)
    g.add_argument("--separation", type=float, default=3.0)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--name")
    g.add_argument("--val-fraction", type=float, default=0.0)
    g.add_argument("--test-fraction", type=float, default=0.0)
    g.add_argument("--split-seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_synth)

    rep = sub.add_parser("report", help="aggregate runs into a learning-curve CSV")
    rep.add_argument("--dir", required=True)
    rep.add_argument("--out", help="CSV path (default: stdout)")
    rep.set_defaults(func=cmd_report)

    v = sub.add_parser("verify", help="run the oracle-equivalence checks")
    v.add_argument("--check", action="append", metavar="NAME", help=f"one of {', '.join(verify.CHECKS)}; repeatable")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"embal: error: {e}", file=sys.stderr)
        return 2
    except (EmbalError, OSError, ValueError) as e:
        print(f"embal: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
