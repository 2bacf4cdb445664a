import json
from pathlib import Path

from dr_aggregator.config import ExperimentConfig

ROOT = Path(__file__).resolve().parents[1]
CASE_CONFIG = ROOT / "configs" / "case_study.json"

# criterion id -> (passed, detail); filled by test_acceptance, echoed in the terminal summary
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (passed, detail)
    print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} | {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} | {detail}")


def case_dict() -> dict:
    return json.loads(CASE_CONFIG.read_text())


def case_study(**overrides) -> ExperimentConfig:
    d = case_dict()
    for k, v in overrides.items():
        if k == "aggregate":
            d["population"]["aggregate"] = v
        else:
            d[k] = v
    return ExperimentConfig.from_dict(d, str(CASE_CONFIG.parent))


def write_config(tmp_path: Path, d: dict, name: str = "cfg.json") -> Path:
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return p


def small_config(**kw) -> dict:
    """Explicit-parameter config with a truncated-normal shock."""
    d = {
        "schema_version": 1,
        "params": {"a": 50.0, "b": 5.0},
        "shock": {"kind": "truncated_normal", "sigma": 2.0, "lo": -6.0, "hi": 6.0},
        "param_box": {"a_lo": 10.0, "a_hi": 100.0, "b_hi": 20.0},
        "market": {"da_price": 0.5, "mu_plus": 0.2, "mu_minus": 1.7},
        "policies": [{"kind": "rpmp"}, {"kind": "myopic"}],
        "horizon": 40,
        "n_reps": 3,
        "base_seed": 7,
    }
    d.update(kw)
    return d
