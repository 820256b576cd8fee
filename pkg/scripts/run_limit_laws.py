#!/usr/bin/env python3
"""Run the limit-law battery (Gumbel KS, range counts, circle-vs-line) at a
publication-scale configuration and print one line per check.

Usage: python scripts/run_limit_laws.py [--k 10000] [--d 1 2 3]
       [--trials 10000] [--seed 3] [--out limit_laws.json]
"""

import argparse
import json
import sys

from storagebalance.limitlaws import run_limit_checks


def run() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--k", type=int, default=10_000)
    ap.add_argument("--d", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--trials", type=int, default=10_000)
    ap.add_argument("--count-trials", type=int, default=None)
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    report = run_limit_checks(
        k=args.k,
        d_values=args.d,
        trials=args.trials,
        master_seed=args.seed,
        count_trials=args.count_trials,
    )
    for c in report["checks"]:
        flag = "PASS" if c["passed"] else "FAIL"
        print(f"[{flag}] {c['name']}: statistic {c['statistic']:.5f} "
              f"threshold {c['threshold']:.5f} ({c['detail']})")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=2)
        print(f"wrote {args.out}")
    return 0 if report["all_passed"] else 1


if __name__ == "__main__":
    sys.exit(run())
