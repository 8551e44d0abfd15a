"""Watch the stationary tail-ratio constant converge as replicas grow.

Usage: python scripts/convergence_sweep.py [--max-exp 7] [--seed N]

Runs the stationary-tail experiment at 10^5 .. 10^max replicas and prints
the ratio estimate at each survival level next to the limit constant.
The approach is slow from above: at survival level 1e-3 the ratio still
sits well over the limit, which is why deep levels need large runs.
"""

import argparse
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from bpire.config import load_config
from bpire.experiments import run_experiment

CONFIG_A = pathlib.Path(__file__).resolve().parents[1] / "configs" / "config_a.cfg"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--max-exp", type=int, default=7, help="largest power of ten to run")
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args()

    base = CONFIG_A.read_text()
    tmp = pathlib.Path("out")
    tmp.mkdir(exist_ok=True)

    header = None
    for exp in range(5, args.max_exp + 1):
        path = tmp / f"sweep_{exp}.cfg"
        path.write_text(base.replace("[experiment]\n", f"[experiment]\nreplicas = {10**exp}\n"))
        cfg = load_config(path, experiment="theorem", seed=args.seed)
        report = run_experiment(cfg)
        ratios = {m["name"]: m for m in report.metrics}
        if header is None:
            names = sorted(ratios)
            header = "replicas  " + "  ".join(f"{n:>16s}" for n in names)
            theory = ratios[names[0]]["theory"]
            print(f"limit constant: {theory:.6f}")
            print(header)
        print(f"10^{exp}      " + "  ".join(f"{ratios[n]['estimate']:16.6f}" for n in sorted(ratios)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
