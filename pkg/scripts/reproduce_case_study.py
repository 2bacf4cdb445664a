#!/usr/bin/env python3
"""Figure data for the 10^4-customer case study.

Writes, per policy, the per-period mean and middle-70% band of the price,
contract, parameter estimates and cumulative regret, plus a joined regret
table. No plotting; every file is plain CSV.

    python3 scripts/reproduce_case_study.py --reps 100 --out out/case_study
    python3 scripts/reproduce_case_study.py --clt --reps 20     # quick look
"""

import argparse
import json
import sys
import time
from pathlib import Path

from dr_aggregator import cli
from dr_aggregator.config import ExperimentConfig

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default=str(ROOT / "configs" / "case_study.json"))
    ap.add_argument("--reps", type=int)
    ap.add_argument("--horizon", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="out/case_study")
    ap.add_argument("--clt", action="store_true", help="normal approximation of the aggregate shock (faster)")
    args = ap.parse_args(argv)

    d = json.loads(Path(args.config).read_text())
    if args.clt:
        d["population"]["aggregate"] = "clt"
    cfg = ExperimentConfig.from_dict(d, str(Path(args.config).parent)).with_overrides(
        n_reps=args.reps, horizon=args.horizon, base_seed=args.seed, out_dir=args.out)
    start = time.perf_counter()
    cli.cmd_simulate(cfg, args.jobs)          # per-policy summary.csv + traces
    cli.cmd_compare(cfg.with_overrides(out_dir=str(Path(args.out) / "compare")), args.jobs)
    params, _, _ = cfg.build()
    print(f"true a={params.a:.6g} b={params.b:.6g}; outputs in {args.out}; "
          f"runtime {time.perf_counter() - start:.0f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
