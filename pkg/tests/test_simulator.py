import numpy as np
import pytest

from dr_aggregator.config import ExperimentConfig
from dr_aggregator.demand_model import (
    DegenerateShock, DemandParams, ParamBox, ShockModel, SumOfCustomerShocks, TruncatedNormalShock,
)
from dr_aggregator.market import MarketEnv, expected_profit
from dr_aggregator.policies import PolicySpec, RpmpConfig
from dr_aggregator.simulator import (
    TRACE_COLUMNS, EpisodeTrace, MonteCarloSummary, regret_bound_check, replication_seed,
    run_episode, run_monte_carlo,
)

from conftest import case_study, small_config

PI, MU_P, MU_M = 0.5, 0.2, 1.7
ENV = MarketEnv.constant(PI, MU_P, MU_M)
PARAMS = DemandParams(50.0, 5.0)
SHOCKS = TruncatedNormalShock(2.0, -6.0, 6.0)
BOX = ParamBox(10.0, 100.0, 20.0)


class ScriptedShock(ShockModel):
    """Delegates to ``base`` but replays a fixed shock path."""

    def __init__(self, base, path):
        self.base, self.path = base, np.asarray(path, dtype=float)
        self.lipschitz_bound = None

    support = property(lambda self: self.base.support)
    mean = property(lambda self: self.base.mean)

    def cdf(self, x):
        return self.base.cdf(x)

    def quantile(self, alpha):
        return self.base.quantile(alpha)

    def shortfall(self, y):
        return self.base.shortfall(y)

    def sample(self, rng, size=None):
        return self.path[:size].copy()


def test_oracle_episode_has_zero_regret():
    tr = run_episode(PolicySpec("oracle"), ENV, PARAMS, SHOCKS, 50, 1, BOX)
    assert len(tr) == 50
    assert np.all(tr.regret_cum == 0.0)
    rb = regret_bound_check(tr, PARAMS, MU_P, MU_M, 1.0)
    assert np.all(rb.rhs == 0.0) and rb.holds


def test_degenerate_shock_realized_equals_expected():
    tr = run_episode(PolicySpec("oracle"), ENV, PARAMS, DegenerateShock(), 20, 0, BOX)
    assert np.allclose(tr.profit_realized, tr.r_policy, rtol=0, atol=1e-12)


def test_trace_deterministic_and_round_trips(tmp_path):
    a = run_episode(PolicySpec("rpmp"), ENV, PARAMS, SHOCKS, 200, 11, BOX)
    b = run_episode(PolicySpec("rpmp"), ENV, PARAMS, SHOCKS, 200, 11, BOX)
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    back = EpisodeTrace.from_csv(tmp_path / "a.csv")
    for c in TRACE_COLUMNS:
        assert np.array_equal(getattr(back, c), getattr(a, c), equal_nan=True), c
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header == ",".join(TRACE_COLUMNS)


def test_regret_accounting():
    tr = run_episode(PolicySpec("myopic"), ENV, PARAMS, SHOCKS, 300, 4, BOX)
    r_orc = expected_profit((tr.Q_star, tr.p_star), PARAMS, SHOCKS, PI, MU_P, MU_M)
    r_pol = expected_profit((tr.Q, tr.p), PARAMS, SHOCKS, PI, MU_P, MU_M)
    assert np.allclose(tr.regret_cum, np.cumsum(r_orc - r_pol), rtol=0, atol=1e-9)
    gaps = tr.r_oracle - tr.r_policy
    assert tr.regret_cum[249] - tr.regret_cum[99] == pytest.approx(gaps[100:250].sum(), abs=1e-9)
    assert np.all(gaps >= -1e-9)


def test_init_and_timing():
    pol = PolicySpec("rpmp", rpmp=RpmpConfig(init=(0.1, 3.0, 0.4, 7.0)))
    tr = run_episode(pol, ENV, PARAMS, SHOCKS, 30, 2, BOX)
    assert (tr.p[0], tr.Q[0], tr.p[1], tr.Q[1]) == (0.1, 3.0, 0.4, 7.0)
    assert np.all(tr.xi[:2] == 0)
    assert np.isnan(tr.a_hat[0]) and not np.isnan(tr.a_hat[1])


def test_measurability():
    """Changing shocks from period k on leaves every decision up to k untouched."""
    T, k = 120, 60
    base_path = SHOCKS.sample(np.random.default_rng(0), T)
    alt = base_path.copy()
    alt[k - 1:] = SHOCKS.sample(np.random.default_rng(99), T - k + 1)
    for kind in ("myopic", "rpmp"):
        a = run_episode(PolicySpec(kind), ENV, PARAMS, ScriptedShock(SHOCKS, base_path), T, 5, BOX)
        b = run_episode(PolicySpec(kind), ENV, PARAMS, ScriptedShock(SHOCKS, alt), T, 5, BOX)
        assert np.array_equal(a.p[:k], b.p[:k]) and np.array_equal(a.Q[:k], b.Q[:k])
        assert np.array_equal(a.xi, b.xi)
        assert not np.array_equal(a.p[k:], b.p[k:])


def test_oracle_columns_policy_independent():
    runs = [run_episode(PolicySpec(k), ENV, PARAMS, SHOCKS, 80, s, BOX)
            for k, s in (("myopic", 1), ("rpmp", 2), ("oracle", 3))]
    for tr in runs[1:]:
        assert np.array_equal(tr.r_oracle, runs[0].r_oracle)
        assert np.array_equal(tr.p_star, runs[0].p_star)


def test_single_period_contract_error_bound():
    star = run_episode(PolicySpec("oracle"), ENV, PARAMS, SHOCKS, 3, 0, BOX)
    for delta in (-3.0, -0.5, 0.2, 1.0, 4.0):
        tr = run_episode(PolicySpec("oracle"), ENV, PARAMS, SHOCKS, 3, 0, BOX)
        tr.Q = tr.Q + delta
        r_pol = expected_profit((tr.Q, tr.p), PARAMS, SHOCKS, PI, MU_P, MU_M)
        tr.regret_cum = np.cumsum(star.r_oracle - r_pol)
        rb = regret_bound_check(tr, PARAMS, MU_P, MU_M, 1.0)
        assert rb.rhs[0] == pytest.approx((MU_M - MU_P) * delta ** 2)
        assert tr.regret_cum[0] <= rb.rhs[0]
        assert rb.holds


def test_regret_bound_needs_oracle_columns():
    tr = run_episode(PolicySpec("rpmp"), ENV, PARAMS, SHOCKS, 10, 0, BOX)
    tr.p_star = None
    with pytest.raises(ValueError):
        regret_bound_check(tr, PARAMS, MU_P, MU_M, 1.0)


def test_price_variance_invariant_small():
    pol = PolicySpec("rpmp", rpmp=RpmpConfig(eta=0.9, rho=0.3, r=0.2))
    tr = run_episode(pol, ENV, PARAMS, SHOCKS, 400, 8, BOX)
    t = np.arange(1, 401)
    p1, p2 = pol.rpmp.init[0], pol.rpmp.init[2]
    bound = 0.5 * (p2 - p1) ** 2 + (2 / 3) * pol.rpmp.rho ** 2 * np.cumsum(tr.xi)
    assert tr.xi.sum() > 20
    assert np.all(t[2:] * tr.price_var[2:] >= bound[2:] * (1 - 1e-12))


def _small_cfg(**kw):
    return ExperimentConfig.from_dict(small_config(**kw))


def test_monte_carlo_single_rep_collapses():
    res = run_monte_carlo(_small_cfg(), n_reps=1)
    s, tr = res.summary, res.traces[0]
    for name in ("p", "regret_cum"):
        assert np.array_equal(s.lo[name], getattr(tr, name))
        assert np.array_equal(s.hi[name], getattr(tr, name))


def test_monte_carlo_jobs_and_extension(tmp_path):
    cfg = _small_cfg()
    a = run_monte_carlo(cfg, n_reps=4, jobs=1)
    b = run_monte_carlo(cfg, n_reps=4, jobs=2)
    a.summary.to_csv(tmp_path / "a.csv")
    b.summary.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    # adding replications keeps earlier ones intact
    c = run_monte_carlo(cfg, n_reps=6)
    for k in range(4):
        assert np.array_equal(c.traces[k].p, a.traces[k].p)
    back = MonteCarloSummary.from_csv(tmp_path / "a.csv")
    for s in ("p", "regret_cum", "a_hat"):
        assert np.array_equal(back.mean[s], a.summary.mean[s], equal_nan=True)
        assert np.array_equal(back.lo[s], a.summary.lo[s], equal_nan=True)


def test_replication_seeds_distinct():
    states = {tuple(replication_seed(5, k).generate_state(2)) for k in range(200)}
    assert len(states) == 200


def test_population_redraw_mode():
    d = case_study().to_dict()
    d.update(redraw_population=True, horizon=5, n_reps=3)
    d["population"]["n"] = 200
    res = run_monte_carlo(ExperimentConfig.from_dict(d))
    assert len({p.a for p in res.params}) == 3
    d["redraw_population"] = False
    res = run_monte_carlo(ExperimentConfig.from_dict(d))
    assert len({p.a for p in res.params}) == 1


def test_consistency_at_scale():
    """Mean squared estimation error under RPMP shrinks between t = 100 and t = 2500."""
    cfg = case_study(aggregate="clt")
    res = run_monte_carlo(cfg, cfg.policy("rpmp"), n_reps=20)
    theta = res.params[0].theta
    err = np.mean([(tr.a_hat - theta[0]) ** 2 + (tr.b_hat - theta[1]) ** 2 for tr in res.traces], axis=0)
    checkpoints = err[[99, 499, 999, 2499]]
    assert np.all(np.diff(checkpoints) < 0)
    assert checkpoints[-1] < checkpoints[0]


def test_sum_shock_episode_uses_exact_sampling():
    shocks = SumOfCustomerShocks(100, 0.5, -2.0, 2.0)
    tr = run_episode(PolicySpec("rpmp"), ENV, DemandParams(12.0, 1.0), shocks, 30, 0, ParamBox(4, 20, 10))
    assert np.all(np.abs(tr.shock) <= 200)
