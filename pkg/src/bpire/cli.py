"""Command-line experiment runner.

One experiment per invocation: `bpire <experiment> --config FILE`.  Exit
codes: 0 all metrics pass, 1 a metric failed, 2 the standing condition is
violated, 3 the config could not be parsed or validated.
"""

from __future__ import annotations

import argparse
import sys

from .config import EXPERIMENTS, load_config
from .errors import BpireError, NotSubcritical, ParseError, ValidationError
from .experiments import emit_report, run_experiment

_HELP = {
    "check": "evaluate the standing condition and report its moments",
    "theorem": "stationary tail ratio against the immigration tail",
    "lemma1": "single-thinning random-sum tail ratio",
    "corollary": "per-depth composed-thinning tail decay",
    "grey": "independent-count sum tail ratio",
    "decay": "geometric decay of unit-progeny moments",
    "sre": "affine-recursion perpetuity tail ratio",
    "oracle": "exact truncated-kernel stationary law vs the sampler",
    "hill": "tail-index estimate on stationary samples",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bpire",
        description="Tail-asymptotics experiments for branching processes "
        "with immigration in a random environment.",
    )
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=_HELP[name])
        sp.add_argument("--config", required=True, help="experiment config file")
        sp.add_argument("--seed", type=int, default=None, help="override the master seed")
        sp.add_argument("--workers", type=int, default=None, help="worker processes (also BPIRE_WORKERS)")
        sp.add_argument("--out", default=None, help="output directory for reports")
    return parser


def _metric_line(m: dict) -> str:
    theory = "-" if m["theory"] is None else f"{m['theory']:.6g}"
    verdict = "pass" if m["pass"] else "FAIL"
    return (
        f"{m['name']}: estimate={m['estimate']:.6g} theory={theory} "
        f"tolerance={m['tolerance']:.3g} ({m['kind']}) -> {verdict}"
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(
            args.config,
            experiment=args.experiment,
            seed=args.seed,
            workers=args.workers,
            out_dir=args.out,
        )
    except (ParseError, ValidationError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3

    try:
        report = run_experiment(cfg)
    except NotSubcritical as exc:
        print(f"hypothesis failure: {exc}", file=sys.stderr)
        return 2
    except BpireError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3

    files = emit_report(report, cfg.out_dir)
    for m in report.metrics:
        print(_metric_line(m))
    print(f"wrote {len(files)} files to {cfg.out_dir}")
    if report.passed:
        print("PASS")
        return 0
    if cfg.experiment == "check":
        print("FAIL (standing condition violated)")
        return 2
    print("FAIL")
    return 1


if __name__ == "__main__":
    sys.exit(main())
