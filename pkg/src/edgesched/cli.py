"""Command-line entry point.

Verbs:
  run    execute the configured sweep, write results.csv
  trace  train one learner, write the convergence trace CSV
  check  run the invariant battery, nonzero exit on any failure
  proto  distributed-vs-centralized equivalence and signaling report
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import ConfigError, default_config, load_config
from .harness import check_suite, convergence_trace, proto_report, run_sweep


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgesched",
        description="Edge-cell offloading/scheduling simulator and learner")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, text in (("run", "run the configured sweep"),
                       ("trace", "record a convergence trace"),
                       ("check", "run the invariant suite"),
                       ("proto", "distributed-vs-centralized report")):
        p = sub.add_parser(verb, help=text)
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--seed", help="comma-separated seed list override")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--workers", type=int, help="parallel grid workers")
        p.add_argument("--policy", help="policy name override")
        if verb == "proto":
            p.add_argument("--epochs", type=int, default=10_000,
                           help="lockstep horizon per grid point")
    return parser


def _load(args):
    cfg = load_config(args.config) if args.config else default_config()
    if args.seed:
        cfg.sweep.seeds = tuple(int(s) for s in args.seed.split(","))
    if args.workers:
        cfg.output.workers = args.workers
    if args.policy:
        from .config import POLICY_NAMES
        if args.policy not in POLICY_NAMES:
            raise ConfigError(f"unknown policy {args.policy!r}")
        cfg.policy = args.policy
        cfg.sweep.policies = (args.policy,)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    os.makedirs(args.out, exist_ok=True)
    if args.verb == "run":
        rows = run_sweep(cfg, out_path=os.path.join(args.out, "results.csv"))
        print(f"wrote {len(rows)} rows to {args.out}/results.csv")
        return 0
    if args.verb == "trace":
        out = os.path.join(args.out, "trace.csv")
        rows = convergence_trace(cfg, out_path=out)
        print(f"wrote {len(rows)} samples to {out}")
        return 0
    if args.verb == "check":
        failed = 0
        for name, ok, detail in check_suite():
            status = "PASS" if ok else "FAIL"
            print(f"[{status}] {name}: {detail}")
            failed += 0 if ok else 1
        return 1 if failed else 0
    if args.verb == "proto":
        verdicts = proto_report(cfg, args.out, epochs=args.epochs)
        bad = 0
        for n, seed, report in verdicts:
            status = "EQUAL" if report.equal else f"DIVERGED {report.first_divergence}"
            print(f"n={n} seed={seed} epochs={report.epochs}: {status} "
                  f"(learning epoch = {report.learning_bytes_per_epoch} bytes)")
            bad += 0 if report.equal else 1
        return 1 if bad else 0
    return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
