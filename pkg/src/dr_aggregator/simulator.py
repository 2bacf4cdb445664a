"""Episode simulation, regret accounting and Monte Carlo replication."""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .demand_model import DemandParams, ParamBox, ShockModel, aggregate_reduction
from .estimation import EstimatorState, empirical_quantile, residuals
from .market import Decision, MarketEnv, critical_ratio, expected_profit, realized_profit
from .policies import (PolicySpec, certainty_equivalent, myopic_decision, perturbation_draw,
                       rpmp_decision)

TRACE_COLUMNS = ("t", "p", "Q", "xi", "shock", "D", "a_hat", "b_hat", "qhat",
                 "r_policy", "r_oracle", "profit_realized", "regret_cum")
SUMMARY_SERIES = ("p", "Q", "a_hat", "b_hat", "qhat", "r_policy", "r_oracle",
                  "profit_realized", "regret_cum")
BAND = (15.0, 85.0)

# substreams of a replication seed
_SHOCKS, _PERTURB, _RT, _POPULATION = range(4)


def fmt(x) -> str:
    """Shortest text that round-trips the double."""
    return repr(float(x))


def substream(seq: np.random.SeedSequence, i: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seq.entropy, spawn_key=tuple(seq.spawn_key) + (i,))


def replication_seed(base_seed: int, k: int) -> np.random.SeedSequence:
    """Seed of replication ``k``: SeedSequence hashing of ``(base_seed, k)``.

    Adding replications never changes the seeds of earlier ones.
    """
    return np.random.SeedSequence([int(base_seed), int(k)])


def _generator(seq: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seq))


@dataclass
class EpisodeTrace:
    """Per-period record of one episode (arrays of length ``T``)."""

    t: np.ndarray
    p: np.ndarray
    Q: np.ndarray
    xi: np.ndarray
    shock: np.ndarray
    D: np.ndarray
    a_hat: np.ndarray
    b_hat: np.ndarray
    qhat: np.ndarray
    r_policy: np.ndarray
    r_oracle: np.ndarray
    profit_realized: np.ndarray
    regret_cum: np.ndarray
    # in-memory extras, not part of the CSV layout
    p_star: np.ndarray | None = None
    Q_star: np.ndarray | None = None
    price_var: np.ndarray | None = None
    policy: str = ""

    def __len__(self) -> int:
        return self.t.size

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            cols = [getattr(self, c) for c in TRACE_COLUMNS]
            for row in zip(*cols):
                w.writerow([str(int(row[0])), fmt(row[1]), fmt(row[2]), str(int(row[3]))]
                           + [fmt(v) for v in row[4:]])

    @classmethod
    def from_csv(cls, path) -> "EpisodeTrace":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if tuple(rows[0]) != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace header {rows[0]}")
        data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(TRACE_COLUMNS))
        cols = {c: data[:, i] for i, c in enumerate(TRACE_COLUMNS)}
        cols["t"] = cols["t"].astype(int)
        cols["xi"] = cols["xi"].astype(int)
        return cls(**cols)


def run_episode(policy: PolicySpec, env: MarketEnv, params: DemandParams, shocks: ShockModel,
                T: int, seed, box: ParamBox) -> EpisodeTrace:
    """Run ``policy`` for ``T`` periods against the true model.

    Each period the decision is formed from data through ``t-1``; the shock is
    revealed, the reduction observed and the estimator updated afterwards.
    Expected profits of the chosen and oracle decisions are evaluated under
    the true model.
    """
    if T < 3:
        raise ValueError(f"horizon must be >= 3, got {T}")
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    pis = env.da_series(T)
    alphas = np.array([critical_ratio(pi, env.mu_plus, env.mu_minus, period=t)
                       for t, pi in enumerate(pis, start=1)])
    p_star, Q_star = oracle_series(params, shocks, pis, alphas)

    eps = np.asarray(shocks.sample(_generator(substream(seq, _SHOCKS)), size=T), dtype=float)
    perturb_rng = _generator(substream(seq, _PERTURB))
    rt_plus, rt_minus = env.sample_rt(_generator(substream(seq, _RT)), T)

    p = np.empty(T)
    Q = np.empty(T)
    xi = np.zeros(T, dtype=int)
    D = np.empty(T)
    a_hat = np.full(T, np.nan)
    b_hat = np.full(T, np.nan)
    qhat = np.full(T, np.nan)
    pvar = np.empty(T)

    est = EstimatorState(box, capacity=T)
    res = None
    clamp = policy.clamp_price_at_zero
    init = policy.init
    for i in range(T):
        t = i + 1
        pi = pis[i]
        # measurability: only t-1 observations are visible to the decision
        assert est.t == t - 1
        if policy.kind == "oracle":
            d = Decision(Q_star[i], p_star[i])
        elif t <= 2:
            d = Decision(Q=init[2 * i + 1], p=init[2 * i])
        elif policy.kind == "myopic":
            d = myopic_decision(est, res, pi, env.mu_plus, env.mu_minus, clamp)
        else:
            xi[i] = perturbation_draw(t, policy.rpmp, perturb_rng)
            d = rpmp_decision(est, res, pi, env.mu_plus, env.mu_minus, xi[i], est.price_mean,
                              policy.rpmp, clamp)
        p[i], Q[i] = d.p, d.Q
        D[i] = aggregate_reduction(params, d.p, eps[i], allow_negative=True)
        est.observe(d.p, D[i])
        pvar[i] = est.price_var
        if est.invertible:
            theta = est.theta_hat
            a_hat[i], b_hat[i] = theta.a, theta.b
            res = residuals(est, theta)
            qhat[i] = empirical_quantile(res, alphas[i])

    r_pol = np.asarray(expected_profit((Q, p), params, shocks, pis, env.mu_plus, env.mu_minus))
    if policy.kind == "oracle":
        r_orc = r_pol.copy()
    else:
        r_orc = np.asarray(expected_profit((Q_star, p_star), params, shocks, pis, env.mu_plus, env.mu_minus))
    realized = np.asarray(realized_profit((Q, p), D, pis, rt_plus, rt_minus))
    return EpisodeTrace(
        t=np.arange(1, T + 1), p=p, Q=Q, xi=xi, shock=eps, D=D, a_hat=a_hat, b_hat=b_hat,
        qhat=qhat, r_policy=r_pol, r_oracle=r_orc, profit_realized=realized,
        regret_cum=np.cumsum(r_orc - r_pol), p_star=p_star, Q_star=Q_star, price_var=pvar,
        policy=policy.name)


def oracle_series(params: DemandParams, shocks: ShockModel, pis, alphas):
    """Oracle prices and contracts per period; one quantile lookup per distinct ratio."""
    cache: dict[float, float] = {}
    p_star = np.empty(len(pis))
    Q_star = np.empty(len(pis))
    for i, (pi, alpha) in enumerate(zip(pis, alphas)):
        if alpha not in cache:
            cache[alpha] = shocks.quantile(alpha)
        d = certainty_equivalent(params.a, params.b, cache[alpha], pi)
        p_star[i], Q_star[i] = d.p, d.Q
    return p_star, Q_star


# ---------------------------------------------------------------------------
# price/contract error bound on regret


@dataclass
class RegretBound:
    rhs: np.ndarray
    rhs_cum: np.ndarray
    regret_cum: np.ndarray
    holds: bool
    worst_slack: float


def regret_bound_check(trace: EpisodeTrace, params: DemandParams, mu_plus: float,
                       mu_minus: float, L: float, tol: float = 1e-7) -> RegretBound:
    """Per-period price/contract error bound on regret and its cumulative check.

    ``rhs_t = a (p_t - p*_t)^2 + L (mu_minus - mu_plus) (Q_t - Q*_t - a (p_t - p*_t))^2``.
    ``holds`` is true when cumulative regret never exceeds the cumulative bound
    by more than ``tol`` (scaled by the bound's magnitude).
    """
    if trace.p_star is None or trace.Q_star is None:
        raise ValueError("trace is missing oracle columns (p_star, Q_star)")
    dp = trace.p - trace.p_star
    dy = trace.Q - trace.Q_star - params.a * dp
    rhs = params.a * dp ** 2 + L * (mu_minus - mu_plus) * dy ** 2
    rhs_cum = np.cumsum(rhs)
    gap = trace.regret_cum - rhs_cum
    scale = tol * (1.0 + np.abs(rhs_cum) + np.abs(trace.regret_cum))
    return RegretBound(rhs, rhs_cum, trace.regret_cum.copy(), bool(np.all(gap <= scale)),
                       float(np.max(gap)))


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass
class MonteCarloSummary:
    """Cross-replication mean and middle-70% band per period for each series."""

    t: np.ndarray
    mean: dict[str, np.ndarray]
    lo: dict[str, np.ndarray]
    hi: dict[str, np.ndarray]
    n_reps: int
    seeds: list[list[int]] = field(default_factory=list)

    @classmethod
    def from_traces(cls, traces: list[EpisodeTrace], seeds=None) -> "MonteCarloSummary":
        mean, lo, hi = {}, {}, {}
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN early estimator rows
            for s in SUMMARY_SERIES:
                m = np.vstack([getattr(tr, s) for tr in traces])
                mean[s] = np.nanmean(m, axis=0)
                lo[s], hi[s] = np.nanpercentile(m, BAND, axis=0)
        return cls(traces[0].t.copy(), mean, lo, hi, len(traces), seeds or [])

    def to_csv(self, path) -> None:
        header = ["t"] + [f"{s}_{k}" for s in SUMMARY_SERIES for k in ("mean", "lo", "hi")]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i, t in enumerate(self.t):
                row = [str(int(t))]
                for s in SUMMARY_SERIES:
                    row += [fmt(self.mean[s][i]), fmt(self.lo[s][i]), fmt(self.hi[s][i])]
                w.writerow(row)

    @classmethod
    def from_csv(cls, path, n_reps: int = 0) -> "MonteCarloSummary":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header = rows[0]
        data = np.array([[float(v) for v in r] for r in rows[1:]])
        idx = {h: j for j, h in enumerate(header)}
        pick = lambda s, k: data[:, idx[f"{s}_{k}"]]
        return cls(data[:, 0].astype(int), {s: pick(s, "mean") for s in SUMMARY_SERIES},
                   {s: pick(s, "lo") for s in SUMMARY_SERIES}, {s: pick(s, "hi") for s in SUMMARY_SERIES},
                   n_reps)


@dataclass
class MonteCarloResult:
    summary: MonteCarloSummary
    traces: list[EpisodeTrace]
    params: list[DemandParams]


_BUILD_CACHE: dict[str, tuple] = {}


def _build(cfg: ExperimentConfig, rep_seq: np.random.SeedSequence):
    if cfg.population is not None and cfg.redraw_population:
        return cfg.build(substream(rep_seq, _POPULATION))
    key = cfg.digest() + cfg.source_dir
    if key not in _BUILD_CACHE:
        _BUILD_CACHE[key] = cfg.build()
    return _BUILD_CACHE[key]


def _replicate(args) -> tuple[EpisodeTrace, DemandParams]:
    cfg, policy, k, base_seed = args
    rep_seq = replication_seed(base_seed, k)
    params, shocks, box = _build(cfg, rep_seq)
    return run_episode(policy, cfg.market, params, shocks, cfg.horizon, rep_seq, box), params


def run_monte_carlo(cfg: ExperimentConfig, policy: PolicySpec | None = None, n_reps: int | None = None,
                    base_seed: int | None = None, jobs: int = 1) -> MonteCarloResult:
    """Independent replications of one policy; results do not depend on ``jobs``."""
    policy = policy or cfg.policies[0]
    n_reps = cfg.n_reps if n_reps is None else n_reps
    base_seed = cfg.base_seed if base_seed is None else base_seed
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    work = [(cfg, policy, k, base_seed) for k in range(n_reps)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            out = list(pool.map(_replicate, work, chunksize=max(1, math.ceil(n_reps / (4 * jobs)))))
    else:
        out = [_replicate(w) for w in work]
    traces = [o[0] for o in out]
    seeds = [[int(base_seed), k] for k in range(n_reps)]
    return MonteCarloResult(MonteCarloSummary.from_traces(traces, seeds), traces, [o[1] for o in out])
