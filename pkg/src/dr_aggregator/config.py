"""Experiment configuration: JSON schema, validation and model construction."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np

from .demand_model import (ConfigError, CustomerSpec, DegenerateShock, DemandParams, EmpiricalShock,
                           ParamBox, ShockModel, SumOfCustomerShocks, TruncatedNormalShock,
                           build_population)
from .market import MarketEnv, check_prices
from .policies import PolicySpec, RpmpConfig

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class PopulationConfig:
    n: int
    customer: CustomerSpec
    seed: int = 0
    aggregate: str = "exact"          # "exact" per-customer sums or "clt" normal approximation
    quantile_method: str = "fourier"  # for exact sums: "fourier" or "monte_carlo"
    oracle_quantile_samples: int = 2_000_000


@dataclass(frozen=True)
class ExperimentConfig:
    market: MarketEnv
    policies: tuple[PolicySpec, ...]
    horizon: int = 2500
    n_reps: int = 100
    base_seed: int = 0
    population: PopulationConfig | None = None
    params: DemandParams | None = None
    shock: dict | None = None
    box: ParamBox | None = None
    redraw_population: bool = False
    lipschitz_bound: float = 1.0
    out_dir: str = "out"
    source_dir: str = "."

    # -- construction ------------------------------------------------------
    def build(self, pop_seq: np.random.SeedSequence | None = None
              ) -> tuple[DemandParams, ShockModel, ParamBox]:
        """True demand parameters, shock model and estimator box for one replication."""
        if self.population is not None:
            pop = self.population
            if pop_seq is None or not self.redraw_population:
                pop_seq = np.random.SeedSequence(pop.seed)
            rng = np.random.Generator(np.random.PCG64(pop_seq))
            method = pop.quantile_method
            params, shocks = build_population(
                pop.customer, pop.n, rng, method=method, mc_samples=pop.oracle_quantile_samples,
                mc_seed=int(pop_seq.generate_state(1)[0]), lipschitz_bound=self.lipschitz_bound)
            if pop.aggregate == "clt":
                shocks = shocks.clt()
            box = self.box or ParamBox(pop.n * pop.customer.a_range[0], pop.n * pop.customer.a_range[1],
                                       pop.n * pop.customer.b_range[1])
        else:
            params, shocks = self.params, _shock_from_dict(self.shock, self.lipschitz_bound, self.source_dir)
            box = self.box
        return params, shocks, box

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def policy(self, name: str) -> PolicySpec:
        for p in self.policies:
            if p.name == name:
                return p
        raise KeyError(name)

    # -- serialisation -----------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"schema_version": SCHEMA_VERSION}
        if self.population is not None:
            pop, c = self.population, self.population.customer
            d["population"] = {
                "n": pop.n, "seed": pop.seed, "aggregate": pop.aggregate,
                "quantile_method": pop.quantile_method,
                "oracle_quantile_samples": pop.oracle_quantile_samples,
                "a_range": list(c.a_range), "b_mean": c.b_mean, "b_range": list(c.b_range),
                "shock_sigma": c.shock_sigma, "shock_range": list(c.shock_range),
            }
        else:
            d["params"] = {"a": self.params.a, "b": self.params.b}
            d["shock"] = dict(self.shock)
        if self.box is not None:
            d["param_box"] = {"a_lo": self.box.a_lo, "a_hi": self.box.a_hi, "b_hi": self.box.b_hi}
        m = self.market
        d["market"] = {"da_price": m.da_prices[0] if len(m.da_prices) == 1 else list(m.da_prices),
                       "mu_plus": m.mu_plus, "mu_minus": m.mu_minus,
                       "rt_price_law": {"kind": m.rt_law, "cv": m.rt_cv}}
        d["policies"] = [_policy_to_dict(p) for p in self.policies]
        d.update(horizon=self.horizon, n_reps=self.n_reps, base_seed=self.base_seed,
                 redraw_population=self.redraw_population, lipschitz_bound=self.lipschitz_bound,
                 out_dir=self.out_dir)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> str:
        """Hash of everything that determines results (the output location is excluded)."""
        d = self.to_dict()
        d.pop("out_dir")
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict[str, Any], source_dir: str = ".") -> "ExperimentConfig":
        return _parse(d, source_dir)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return _parse(raw, str(path.parent))


def _policy_to_dict(p: PolicySpec) -> dict[str, Any]:
    r = p.rpmp
    return {"kind": p.kind, "name": p.name, "eta": r.eta, "rho": r.rho, "r": r.r,
            "init": list(r.init), "clamp_price_at_zero": p.clamp_price_at_zero}


def _shock_from_dict(d: dict, lipschitz_bound: float | None, source_dir: str) -> ShockModel:
    kind = d.get("kind")
    if kind == "truncated_normal":
        return TruncatedNormalShock(float(d["sigma"]), float(d["lo"]), float(d["hi"]), lipschitz_bound)
    if kind == "empirical":
        path = Path(d["path"])
        if not path.is_absolute():
            path = Path(source_dir) / path
        return EmpiricalShock.from_file(path, lipschitz_bound=lipschitz_bound)
    if kind == "degenerate":
        return DegenerateShock(lipschitz_bound)
    raise ConfigError(f"shock.kind: unknown kind {kind!r}")


class _Fields:
    """Field access with dotted-path diagnostics."""

    def __init__(self, d, where):
        if not isinstance(d, dict):
            raise ConfigError(f"{where}: expected an object")
        self.d, self.where = d, where

    def get(self, key, typ, default=...):
        path = f"{self.where}.{key}" if self.where else key
        if key not in self.d:
            if default is ...:
                raise ConfigError(f"{path}: required field missing")
            return default
        v = self.d[key]
        try:
            if typ is bool:
                if not isinstance(v, bool):
                    raise TypeError
                return v
            if typ is int:
                if isinstance(v, bool) or int(v) != v:
                    raise TypeError
                return int(v)
            if typ is float:
                if isinstance(v, bool):
                    raise TypeError
                return float(v)
            if typ is tuple:
                return tuple(float(x) for x in v)
            return typ(v)
        except (TypeError, ValueError):
            raise ConfigError(f"{path}: expected {typ.__name__}, got {v!r}") from None

    def sub(self, key, default=...):
        if key not in self.d:
            if default is ...:
                raise ConfigError(f"{self.where + '.' if self.where else ''}{key}: required field missing")
            return None
        return _Fields(self.d[key], f"{self.where + '.' if self.where else ''}{key}")


def _wrap(where: str, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _parse(raw: dict, source_dir: str) -> ExperimentConfig:
    f = _Fields(raw, "")
    version = f.get("schema_version", int, SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: unsupported version {version}")

    population = params = shock = None
    pf = f.sub("population", None)
    if pf is not None:
        customer = _wrap("population", CustomerSpec,
                         a_range=pf.get("a_range", tuple, (0.04, 0.20)),
                         b_mean=pf.get("b_mean", float, 0.01),
                         b_range=pf.get("b_range", tuple, (0.0, 0.1)),
                         shock_sigma=pf.get("shock_sigma", float, 0.5),
                         shock_range=pf.get("shock_range", tuple, (-2.0, 2.0)))
        aggregate = pf.get("aggregate", str, "exact")
        if aggregate not in ("exact", "clt"):
            raise ConfigError(f"population.aggregate: expected 'exact' or 'clt', got {aggregate!r}")
        method = pf.get("quantile_method", str, "fourier")
        if method not in ("fourier", "monte_carlo"):
            raise ConfigError(f"population.quantile_method: expected 'fourier' or 'monte_carlo', got {method!r}")
        n = pf.get("n", int)
        if n < 1:
            raise ConfigError("population.n: must be >= 1")
        m = pf.get("oracle_quantile_samples", int, 2_000_000)
        if m < 1:
            raise ConfigError("population.oracle_quantile_samples: must be positive")
        population = PopulationConfig(n, customer, pf.get("seed", int, 0), aggregate, method, m)
    else:
        prf = f.sub("params")
        params = _wrap("params", DemandParams, prf.get("a", float), prf.get("b", float))
        sf = f.sub("shock")
        shock = dict(sf.d)
        kind = sf.get("kind", str)
        if kind == "truncated_normal":
            shock = {"kind": kind, "sigma": sf.get("sigma", float), "lo": sf.get("lo", float),
                     "hi": sf.get("hi", float)}
        elif kind == "empirical":
            shock = {"kind": kind, "path": sf.get("path", str)}
        elif kind == "degenerate":
            shock = {"kind": kind}
        else:
            raise ConfigError(f"shock.kind: unknown kind {kind!r}")

    box = None
    bf = f.sub("param_box", None)
    if bf is not None:
        box = _wrap("param_box", ParamBox, bf.get("a_lo", float), bf.get("a_hi", float), bf.get("b_hi", float))
    elif population is None:
        raise ConfigError("param_box: required when explicit params are given")

    mf = f.sub("market")
    da = mf.d.get("da_price")
    if da is None:
        raise ConfigError("market.da_price: required field missing")
    try:
        da_prices = tuple(float(x) for x in da) if isinstance(da, list) else (float(da),)
    except (TypeError, ValueError):
        raise ConfigError(f"market.da_price: expected number or list of numbers, got {da!r}") from None
    mu_plus, mu_minus = mf.get("mu_plus", float), mf.get("mu_minus", float)
    _wrap("market.da_price", check_prices, da_prices, mu_plus, mu_minus)
    rt = mf.sub("rt_price_law", None)
    rt_kind = rt.get("kind", str, "point") if rt else "point"
    rt_cv = rt.get("cv", float, 0.0) if rt else 0.0
    market = _wrap("market", MarketEnv, da_prices, mu_plus, mu_minus, rt_kind, rt_cv)

    if "policies" in raw:
        plist = raw["policies"]
        if not isinstance(plist, list) or not plist:
            raise ConfigError("policies: expected a nonempty list")
        items = [(f"policies[{i}]", p) for i, p in enumerate(plist)]
    elif "policy" in raw:
        items = [("policy", raw["policy"])]
    else:
        raise ConfigError("policies: required field missing")
    policies = []
    for where, p in items:
        pf_ = _Fields(p, where)
        rpmp = _wrap(where, RpmpConfig, eta=pf_.get("eta", float, 0.2), rho=pf_.get("rho", float, 0.08),
                     r=pf_.get("r", float, 0.5), init=pf_.get("init", tuple, (0.0, 0.0, 0.25, 0.0)))
        policies.append(_wrap(where, PolicySpec, pf_.get("kind", str), pf_.get("name", str, ""), rpmp,
                              pf_.get("clamp_price_at_zero", bool, False)))
    names = [p.name for p in policies]
    if len(set(names)) != len(names):
        # repeated entries get positional suffixes so output columns stay distinct
        seen: dict[str, int] = {}
        renamed = []
        for p in policies:
            k = seen.get(p.name, 0)
            seen[p.name] = k + 1
            renamed.append(p if names.count(p.name) == 1 else replace(p, name=f"{p.name}_{k + 1}"))
        policies = renamed

    horizon = f.get("horizon", int, 2500)
    if horizon < 3:
        raise ConfigError("horizon: must be >= 3")
    if len(da_prices) > 1 and len(da_prices) < horizon:
        raise ConfigError(f"market.da_price: series has {len(da_prices)} periods, horizon is {horizon}")
    n_reps = f.get("n_reps", int, 100)
    if n_reps < 1:
        raise ConfigError("n_reps: must be >= 1")
    lip = f.get("lipschitz_bound", float, 1.0)
    if lip < 1:
        raise ConfigError("lipschitz_bound: must be >= 1")
    base_seed = f.get("base_seed", int, 0)
    if base_seed < 0:
        raise ConfigError("base_seed: must be nonnegative")
    cfg = ExperimentConfig(
        market=market, policies=tuple(policies), horizon=horizon, n_reps=n_reps,
        base_seed=base_seed, population=population, params=params, shock=shock, box=box,
        redraw_population=f.get("redraw_population", bool, False), lipschitz_bound=lip,
        out_dir=f.get("out_dir", str, "out"), source_dir=source_dir)
    if shock is not None:
        # surface unreadable sample files at load time
        _shock_from_dict(shock, lip, source_dir)
    return cfg
