#!/usr/bin/env python3
"""Final mean regret of the perturbed policy across exploration exponents r.

    python3 scripts/r_sweep.py --values 0.1 0.3 0.5 0.7 0.9 --clt
"""

import argparse
import json
import sys
from pathlib import Path

from dr_aggregator import cli
from dr_aggregator.config import ExperimentConfig

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default=str(ROOT / "configs" / "case_study.json"))
    ap.add_argument("--values", type=float, nargs="+", default=[0.1, 0.3, 0.5, 0.7, 0.9])
    ap.add_argument("--reps", type=int)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="out/r_sweep")
    ap.add_argument("--clt", action="store_true")
    args = ap.parse_args(argv)

    d = json.loads(Path(args.config).read_text())
    if args.clt:
        d["population"]["aggregate"] = "clt"
    cfg = ExperimentConfig.from_dict(d, str(Path(args.config).parent)).with_overrides(
        n_reps=args.reps, out_dir=args.out)
    rows = cli.cmd_sweep(cfg, "r", args.values, args.jobs)
    best = min(r["regret_T_mean"] for r in rows)
    for r in rows:
        print(f"r={r['value']:<5} regret_T={r['regret_T_mean']:10.1f}  x{r['regret_T_mean'] / best:.2f} of min")
    return 0


if __name__ == "__main__":
    sys.exit(main())
