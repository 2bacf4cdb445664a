"""Oracle, myopic (certainty-equivalent) and randomly perturbed myopic decision rules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .demand_model import ConfigError, DemandParams, ShockModel
from .estimation import EstimatorState, EstimatorStateError, ResidualSet, empirical_quantile
from .market import Decision, critical_ratio


@dataclass(frozen=True)
class RpmpConfig:
    """Perturbation schedule ``P{xi_t = 1} = eta * t**-r`` with price bump ``rho``.

    ``init`` holds the deterministic first two decisions ``(p1, Q1, p2, Q2)``.
    """

    eta: float = 0.2
    rho: float = 0.08
    r: float = 0.5
    init: tuple[float, float, float, float] = (0.0, 0.0, 0.25, 0.0)

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise ConfigError(f"eta must lie in (0, 1], got {self.eta}")
        if not self.rho > 0:
            raise ConfigError(f"rho must be positive, got {self.rho}")
        if not self.r >= 0:
            raise ConfigError(f"r must be nonnegative, got {self.r}")
        if len(self.init) != 4:
            raise ConfigError("init must be (p1, Q1, p2, Q2)")
        if self.init[0] == self.init[2]:
            raise ConfigError("initial prices p1 and p2 must differ")


def certainty_equivalent(a: float, b: float, quantile: float, pi: float) -> Decision:
    """Profit-maximising decision for a known affine curve and shock quantile."""
    return Decision(Q=0.5 * (a * pi + b) + quantile, p=0.5 * (pi - b / a))


def oracle_decision(params: DemandParams, shocks: ShockModel, pi: float,
                    mu_plus: float, mu_minus: float) -> Decision:
    alpha = critical_ratio(pi, mu_plus, mu_minus)
    return certainty_equivalent(params.a, params.b, shocks.quantile(alpha), pi)


def myopic_decision(est: EstimatorState, res: ResidualSet, pi: float, mu_plus: float,
                    mu_minus: float, clamp_price_at_zero: bool = False) -> Decision:
    """Plug the truncated estimate and residual quantile into the oracle formulas.

    ``est`` and ``res`` must reflect data through the previous period only.
    """
    if not est.invertible:
        raise EstimatorStateError("myopic decision needs a defined estimate")
    theta = est.theta_hat
    alpha = critical_ratio(pi, mu_plus, mu_minus)
    d = certainty_equivalent(theta.a, theta.b, empirical_quantile(res, alpha), pi)
    if clamp_price_at_zero and d.p < 0:
        d = Decision(d.Q, 0.0)
    return d


def perturbation_probability(t: int, cfg: RpmpConfig) -> float:
    return cfg.eta * float(t) ** (-cfg.r)


def perturbation_draw(t: int, cfg: RpmpConfig, rng: np.random.Generator) -> int:
    """Bernoulli(eta * t^-r) exploration bit for period ``t >= 3``."""
    if t < 3:
        raise ValueError(f"perturbations start at t = 3, got {t}")
    return int(rng.random() < perturbation_probability(t, cfg))


def rpmp_decision(est: EstimatorState, res: ResidualSet, pi: float, mu_plus: float,
                  mu_minus: float, xi: int, price_mean: float, cfg: RpmpConfig,
                  clamp_price_at_zero: bool = False) -> Decision:
    """Myopic contract always; price bumped to ``price_mean + rho`` when ``xi == 1``."""
    d = myopic_decision(est, res, pi, mu_plus, mu_minus, clamp_price_at_zero)
    if xi:
        return Decision(d.Q, price_mean + cfg.rho)
    return d


@dataclass(frozen=True)
class PolicySpec:
    """Named policy choice: ``kind`` is ``oracle``, ``myopic`` or ``rpmp``."""

    kind: str
    name: str = ""
    rpmp: RpmpConfig = RpmpConfig()
    clamp_price_at_zero: bool = False

    def __post_init__(self):
        if self.kind not in ("oracle", "myopic", "rpmp"):
            raise ConfigError(f"unknown policy kind {self.kind!r}")
        if not self.name:
            object.__setattr__(self, "name", self.kind)

    @property
    def init(self) -> tuple[float, float, float, float]:
        return self.rpmp.init
