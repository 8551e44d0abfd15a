"""Run every bundled experiment at config scale and summarize exit codes.

Usage: python scripts/run_all.py [--seed N] [--workers N] [--out DIR]

Each experiment writes its artifacts under DIR/<experiment>/.  The script
exits with the worst exit code seen, so it can gate CI the same way a
single run would.
"""

import argparse
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from bpire import cli

CONFIGS = pathlib.Path(__file__).resolve().parents[1] / "configs"

RUNS = [
    ("check", "config_a.cfg"),
    ("theorem", "config_a.cfg"),
    ("lemma1", "config_a.cfg"),
    ("corollary", "config_a.cfg"),
    ("grey", "grey.cfg"),
    ("decay", "decay_poisson.cfg"),
    ("sre", "config_a.cfg"),
    ("oracle", "oracle_bernoulli.cfg"),
    ("hill", "config_a.cfg"),
]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--out", default="out")
    args = parser.parse_args()

    worst = 0
    results = []
    for experiment, config in RUNS:
        argv = [experiment, "--config", str(CONFIGS / config), "--out", f"{args.out}/{experiment}"]
        if args.seed is not None:
            argv += ["--seed", str(args.seed)]
        if args.workers is not None:
            argv += ["--workers", str(args.workers)]
        print(f"== {experiment} ({config})")
        code = cli.main(argv)
        results.append((experiment, code))
        worst = max(worst, code)

    print("\nexit codes:")
    for experiment, code in results:
        print(f"  {experiment:10s} {code}")
    return worst


if __name__ == "__main__":
    sys.exit(main())
