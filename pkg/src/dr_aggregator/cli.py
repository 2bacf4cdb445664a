"""Command-line entry point: ``dr-aggregator {simulate,compare,sweep,oracle}``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import ExperimentConfig
from .demand_model import ConfigError
from .market import critical_ratio
from .simulator import fmt, oracle_series, run_monte_carlo

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, metavar="PATH", help="experiment config (JSON)")
    p.add_argument("--seed", type=int, metavar="U64", help="override base seed")
    p.add_argument("--jobs", type=int, default=1, metavar="N", help="worker processes (results do not depend on it)")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides config)")
    p.add_argument("--reps", type=int, metavar="N", help="override replication count")
    p.add_argument("--horizon", type=int, metavar="T", help="override horizon")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dr-aggregator", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("simulate", help="Monte Carlo run of every configured policy"))
    _common(sub.add_parser("compare", help="regret of >= 2 policies on common seeds"))
    sw = sub.add_parser("sweep", help="final regret of the RPMP policy across parameter values")
    _common(sw)
    sw.add_argument("--param", default="r", choices=("r", "eta", "rho"))
    sw.add_argument("--values", nargs="*", type=float, default=None, metavar="V")
    _common(sub.add_parser("oracle", help="print oracle price and contract per period"))
    return parser


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if args.reps is not None and args.reps < 1:
        raise ConfigError("--reps must be >= 1")
    if args.horizon is not None and args.horizon < 3:
        raise ConfigError("--horizon must be >= 3")
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    if args.seed is not None and args.seed < 0:
        raise ConfigError("--seed must be nonnegative")
    cfg = cfg.with_overrides(n_reps=args.reps, horizon=args.horizon, base_seed=args.seed, out_dir=args.out)
    # re-validate overrides against the full schema
    return ExperimentConfig.from_dict(cfg.to_dict(), cfg.source_dir)


def _metadata(cfg: ExperimentConfig, command: str) -> dict:
    resolved = cfg.to_dict()
    resolved.pop("out_dir")
    return {"version": __version__, "command": command, "config_sha256": cfg.digest(),
            "base_seed": cfg.base_seed, "n_reps": cfg.n_reps, "horizon": cfg.horizon,
            "seed_derivation": "numpy SeedSequence([base_seed, rep])", "config": resolved}


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_simulate(cfg: ExperimentConfig, jobs: int = 1) -> dict:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = _metadata(cfg, "simulate")
    meta["policies"] = {}
    for pol in cfg.policies:
        res = run_monte_carlo(cfg, pol, jobs=jobs)
        pdir = out / pol.name
        pdir.mkdir(exist_ok=True)
        for k, tr in enumerate(res.traces):
            tr.to_csv(pdir / f"trace_rep{k:03d}.csv")
        res.summary.to_csv(pdir / "summary.csv")
        s = res.summary
        meta["policies"][pol.name] = {
            "final_mean_regret": float(s.mean["regret_cum"][-1]),
            "final_regret_band": [float(s.lo["regret_cum"][-1]), float(s.hi["regret_cum"][-1])],
            "seeds": s.seeds,
            "true_params": [[p.a, p.b] for p in res.params[:1 if not cfg.redraw_population else None]],
        }
        print(f"{pol.name}: mean regret at T={cfg.horizon}: {s.mean['regret_cum'][-1]:.6g}")
    _write_json(out / "summary.json", meta)
    return meta


def cmd_compare(cfg: ExperimentConfig, jobs: int = 1) -> dict:
    if len(cfg.policies) < 2:
        raise ConfigError("policies: compare needs at least two policies")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = _metadata(cfg, "compare")
    meta["final_mean_regret"] = {}
    series = {}
    for pol in cfg.policies:
        s = run_monte_carlo(cfg, pol, jobs=jobs).summary
        series[pol.name] = s
        meta["final_mean_regret"][pol.name] = float(s.mean["regret_cum"][-1])
        print(f"{pol.name}: mean regret at T={cfg.horizon}: {s.mean['regret_cum'][-1]:.6g}")
    names = [p.name for p in cfg.policies]
    with open(out / "compare.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"regret_{n}_{k}" for n in names for k in ("mean", "lo", "hi")])
        first = series[names[0]]
        for i, t in enumerate(first.t):
            row = [str(int(t))]
            for n in names:
                s = series[n]
                row += [fmt(s.mean["regret_cum"][i]), fmt(s.lo["regret_cum"][i]), fmt(s.hi["regret_cum"][i])]
            w.writerow(row)
    _write_json(out / "summary.json", meta)
    return meta


def cmd_sweep(cfg: ExperimentConfig, param: str, values, jobs: int = 1) -> list[dict]:
    if not values:
        raise ConfigError("--values: at least one value is required")
    if param == "r" and any(not 0 < v < 1 for v in values):
        raise ConfigError("--values: r must lie in (0, 1)")
    base = next((p for p in cfg.policies if p.kind == "rpmp"), None)
    if base is None:
        raise ConfigError("policies: sweep needs an rpmp policy")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for v in values:
        pol = replace(base, name=f"{base.name}_{param}={v!r}", rpmp=replace(base.rpmp, **{param: v}))
        s = run_monte_carlo(cfg, pol, jobs=jobs).summary
        rows.append({"param": param, "value": v, "regret_T_mean": float(s.mean["regret_cum"][-1]),
                     "regret_T_lo": float(s.lo["regret_cum"][-1]), "regret_T_hi": float(s.hi["regret_cum"][-1])})
        print(f"{param}={v!r}: mean regret at T={cfg.horizon}: {rows[-1]['regret_T_mean']:.6g}")
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["param", "value", "regret_T_mean", "regret_T_lo", "regret_T_hi"])
        for r in rows:
            w.writerow([r["param"], fmt(r["value"]), fmt(r["regret_T_mean"]), fmt(r["regret_T_lo"]),
                        fmt(r["regret_T_hi"])])
    meta = _metadata(cfg, "sweep")
    meta["sweep"] = rows
    _write_json(out / "summary.json", meta)
    return rows


def cmd_oracle(cfg: ExperimentConfig, stream=None) -> list[tuple]:
    stream = stream or sys.stdout
    params, shocks, _ = cfg.build()
    m = cfg.market
    pis = m.da_series(cfg.horizon)
    alphas = [critical_ratio(pi, m.mu_plus, m.mu_minus, period=t) for t, pi in enumerate(pis, start=1)]
    p_star, Q_star = oracle_series(params, shocks, pis, alphas)
    rows = list(zip(range(1, cfg.horizon + 1), alphas, p_star, Q_star))
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["t", "alpha", "p_star", "Q_star"])
    for t, a, p, q in rows:
        w.writerow([t, fmt(a), fmt(p), fmt(q)])
    return rows


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    start = time.perf_counter()
    try:
        cfg = load_config(args)
        if args.command == "simulate":
            cmd_simulate(cfg, args.jobs)
        elif args.command == "compare":
            cmd_compare(cfg, args.jobs)
        elif args.command == "sweep":
            cmd_sweep(cfg, args.param, args.values, args.jobs)
        else:
            cmd_oracle(cfg)
            return EXIT_OK
    except ConfigError as exc:
        print(f"dr-aggregator: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        print(f"dr-aggregator: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"runtime: {time.perf_counter() - start:.1f} s")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
