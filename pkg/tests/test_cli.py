import csv
import io
import json

import numpy as np
import pytest

from dr_aggregator import cli
from dr_aggregator.config import ExperimentConfig
from dr_aggregator.demand_model import ConfigError
from dr_aggregator.simulator import SUMMARY_SERIES, MonteCarloSummary

from conftest import CASE_CONFIG, case_dict, small_config, write_config


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- config loading ----------------------------------------------------------------

def test_case_study_config_loads():
    cfg = ExperimentConfig.load(CASE_CONFIG)
    assert cfg.horizon == 2500 and cfg.n_reps == 100
    assert [p.kind for p in cfg.policies] == ["rpmp", "myopic"]
    rp = cfg.policy("rpmp").rpmp
    assert (rp.eta, rp.rho, rp.r, rp.init) == (0.2, 0.08, 0.5, (0.0, 0.0, 0.25, 0.0))
    assert cfg.population.n == 10_000


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig.from_dict(small_config())
    again = ExperimentConfig.from_dict(json.loads(cfg.to_json()))
    assert again == cfg and again.digest() == cfg.digest()
    a = cli.cmd_simulate(cfg.with_overrides(out_dir=str(tmp_path / "a")))
    b = cli.cmd_simulate(again.with_overrides(out_dir=str(tmp_path / "b")))
    assert a == b
    assert (tmp_path / "a/rpmp/trace_rep001.csv").read_bytes() == (tmp_path / "b/rpmp/trace_rep001.csv").read_bytes()


@pytest.mark.parametrize("mutate,fragment", [
    (lambda d: d["market"].update(mu_minus=0.1), "market.da_price"),
    (lambda d: d.update(horizon=2), "horizon"),
    (lambda d: d["policies"][0].update(kind="greedy"), "policies[0]"),
    (lambda d: d["policies"][0].update(eta="high"), "policies[0].eta"),
    (lambda d: d["params"].update(a=-1.0), "params"),
    (lambda d: d.pop("market"), "market"),
    (lambda d: d.update(schema_version=9), "schema_version"),
    (lambda d: d["shock"].update(kind="cauchy"), "shock.kind"),
])
def test_field_level_diagnostics(mutate, fragment):
    d = small_config()
    mutate(d)
    with pytest.raises(ConfigError, match=fragment.replace("[", r"\[").replace("]", r"\]")):
        ExperimentConfig.from_dict(d)


def test_empirical_shock_relative_path(tmp_path):
    (tmp_path / "eps.txt").write_text("\n".join(str(x) for x in np.linspace(-3, 3, 101)))
    d = small_config(shock={"kind": "empirical", "path": "eps.txt"})
    cfg = ExperimentConfig.load(write_config(tmp_path, d))
    _, shocks, _ = cfg.build()
    assert shocks.quantile(0.5) == pytest.approx(0.0)
    d["shock"]["path"] = "missing.txt"
    with pytest.raises(ConfigError, match="missing.txt"):
        ExperimentConfig.load(write_config(tmp_path, d))


# -- CLI ------------------------------------------------------------------------------

def test_missing_config_exit_code(capsys):
    assert cli.main(["simulate", "--config", "/no/such/file.json"]) == 2
    assert "/no/such/file.json" in capsys.readouterr().err


def test_invalid_json_is_config_error(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert cli.main(["oracle", "--config", str(p)]) == 2


def test_usage_errors(tmp_path):
    cfg = write_config(tmp_path, small_config())
    assert cli.main(["sweep", "--config", str(cfg), "--values"]) == 2
    assert cli.main(["sweep", "--config", str(cfg), "--values", "0.5", "1.2"]) == 2
    assert cli.main(["simulate", "--config", str(cfg), "--reps", "0"]) == 2
    with pytest.raises(SystemExit) as e:
        cli.main(["frobnicate"])
    assert e.value.code == 2


def test_runtime_failure_exit_code(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, small_config(out_dir=str(tmp_path / "o")))

    def boom(*a, **k):
        raise RuntimeError("disk on fire")
    monkeypatch.setattr(cli, "run_monte_carlo", boom)
    assert cli.main(["simulate", "--config", str(cfg)]) == 1


def test_simulate_oracle_three_periods(tmp_path, capsys):
    d = small_config(policies=[{"kind": "oracle"}], horizon=3, n_reps=1)
    cfg = write_config(tmp_path, d)
    out = tmp_path / "out"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_csv(out / "oracle" / "trace_rep000.csv")
    assert len(rows) == 3 and all(float(r["regret_cum"]) == 0.0 for r in rows)
    summ = read_csv(out / "oracle" / "summary.csv")
    assert len(summ) == 3
    meta = json.loads((out / "summary.json").read_text())
    assert meta["policies"]["oracle"]["final_mean_regret"] == 0.0
    assert meta["config_sha256"] == ExperimentConfig.from_dict(d).digest()
    assert meta["policies"]["oracle"]["seeds"] == [[7, 0]]
    printed = capsys.readouterr().out
    assert "mean regret" in printed and "runtime" in printed


def test_case_study_summary_shape(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["simulate", "--config", str(CASE_CONFIG), "--reps", "1", "--out", str(out)]) == 0
    s = MonteCarloSummary.from_csv(out / "rpmp" / "summary.csv")
    assert s.t.size == 2500 and set(s.mean) == set(SUMMARY_SERIES)
    header = (out / "rpmp" / "summary.csv").read_text().splitlines()[0].split(",")
    assert len(header) == 1 + 3 * len(SUMMARY_SERIES)


def test_compare_columns(tmp_path):
    d = small_config(policies=[{"kind": "rpmp"}, {"kind": "rpmp"}, {"kind": "oracle"}, {"kind": "myopic"}],
                     horizon=60, n_reps=3, out_dir=str(tmp_path / "c"))
    cfg = ExperimentConfig.from_dict(d)
    assert [p.name for p in cfg.policies] == ["rpmp_1", "rpmp_2", "oracle", "myopic"]
    cli.cmd_compare(cfg)
    rows = read_csv(tmp_path / "c" / "compare.csv")
    assert len(rows) == 60
    assert all(r["regret_rpmp_1_mean"] == r["regret_rpmp_2_mean"] for r in rows)
    assert all(float(r["regret_oracle_mean"]) == 0.0 for r in rows)
    with pytest.raises(ConfigError):
        cli.cmd_compare(ExperimentConfig.from_dict(small_config(policies=[{"kind": "rpmp"}])))


def test_sweep_rows_and_single_value(tmp_path):
    d = small_config(policies=[{"kind": "rpmp"}], horizon=80, n_reps=3)
    cfg = ExperimentConfig.from_dict(d)
    rows = cli.cmd_sweep(cfg.with_overrides(out_dir=str(tmp_path / "s")), "r", [0.25, 0.5, 0.75])
    assert [r["value"] for r in rows] == [0.25, 0.5, 0.75]
    assert len(read_csv(tmp_path / "s" / "sweep.csv")) == 3
    single = cli.cmd_sweep(cfg.with_overrides(out_dir=str(tmp_path / "one")), "r", [0.5])
    sim = cli.cmd_simulate(cfg.with_overrides(out_dir=str(tmp_path / "sim")))
    assert single[0]["regret_T_mean"] == sim["policies"]["rpmp"]["final_mean_regret"]


def test_oracle_printout_case_study():
    cfg = ExperimentConfig.load(CASE_CONFIG).with_overrides(horizon=5)
    buf = io.StringIO()
    rows = cli.cmd_oracle(cfg, buf)
    assert len(rows) == 5
    assert all(r[1] == pytest.approx(0.2, abs=1e-12) for r in rows)
    assert buf.getvalue().splitlines()[0] == "t,alpha,p_star,Q_star"


def test_oracle_no_baseline_prices_at_half_pi():
    d = small_config(params={"a": 10.0, "b": 0.0}, market={"da_price": 0.7, "mu_plus": 0.2, "mu_minus": 1.7})
    rows = cli.cmd_oracle(ExperimentConfig.from_dict(d), io.StringIO())
    assert all(r[2] == pytest.approx(0.35) for r in rows)


def test_oracle_names_violating_period(tmp_path, capsys):
    prices = [0.5] * 6 + [1.9] + [0.5] * 40
    d = small_config(market={"da_price": prices, "mu_plus": 0.2, "mu_minus": 1.7})
    assert cli.main(["oracle", "--config", str(write_config(tmp_path, d))]) == 2
    assert "period 7" in capsys.readouterr().err


def test_price_series_shorter_than_horizon():
    d = small_config(market={"da_price": [0.5] * 10, "mu_plus": 0.2, "mu_minus": 1.7}, horizon=20)
    with pytest.raises(ConfigError, match="horizon"):
        ExperimentConfig.from_dict(d)


def test_single_policy_key_accepted():
    d = small_config()
    d.pop("policies")
    d["policy"] = {"kind": "myopic", "clamp_price_at_zero": True}
    cfg = ExperimentConfig.from_dict(d)
    assert cfg.policies[0].clamp_price_at_zero


def test_case_dict_helper_matches_file():
    assert ExperimentConfig.from_dict(case_dict(), str(CASE_CONFIG.parent)) == ExperimentConfig.load(CASE_CONFIG)
