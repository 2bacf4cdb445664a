"""Two-settlement market: prices, expected and realized aggregator profit."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .demand_model import ConfigError, DemandParams, ShockModel


@dataclass(frozen=True)
class Decision:
    """Forward contract ``Q`` (kWh) and posted DR price ``p`` ($/kWh)."""

    Q: float
    p: float


@dataclass(frozen=True)
class MarketEnv:
    """Day-ahead price series and real-time imbalance price law.

    ``rt_law`` is ``"point"`` (RT prices equal their means) or ``"lognormal"``
    (independent mean-matched lognormals with coefficient of variation ``rt_cv``).
    """

    da_prices: tuple[float, ...]
    mu_plus: float
    mu_minus: float
    rt_law: str = "point"
    rt_cv: float = 0.0

    def __post_init__(self):
        if not self.da_prices:
            raise ConfigError("market needs at least one DA price")
        if self.rt_law not in ("point", "lognormal"):
            raise ConfigError(f"unknown RT price law {self.rt_law!r}")
        if self.rt_cv < 0:
            raise ConfigError("rt_cv must be nonnegative")
        check_prices(self.da_prices, self.mu_plus, self.mu_minus)

    @classmethod
    def constant(cls, pi: float, mu_plus: float, mu_minus: float, **kw) -> "MarketEnv":
        return cls((float(pi),), mu_plus, mu_minus, **kw)

    def da_price(self, t: int) -> float:
        """DA price of period ``t`` (1-based); a single price is held constant."""
        if len(self.da_prices) == 1:
            return self.da_prices[0]
        if not 1 <= t <= len(self.da_prices):
            raise ConfigError(f"no DA price for period {t} (series has {len(self.da_prices)})")
        return self.da_prices[t - 1]

    def da_series(self, T: int) -> np.ndarray:
        if len(self.da_prices) == 1:
            return np.full(T, self.da_prices[0])
        if len(self.da_prices) < T:
            raise ConfigError(f"DA price series has {len(self.da_prices)} periods, horizon is {T}")
        return np.asarray(self.da_prices[:T], dtype=float)

    def sample_rt(self, rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
        if self.rt_law == "point" or self.rt_cv == 0:
            return np.full(size, self.mu_plus), np.full(size, self.mu_minus)
        s2 = math.log1p(self.rt_cv ** 2)
        draws = rng.standard_normal((2, size)) * math.sqrt(s2) - 0.5 * s2
        return self.mu_plus * np.exp(draws[0]), self.mu_minus * np.exp(draws[1])


def check_prices(da_prices, mu_plus: float, mu_minus: float) -> None:
    """Require ``pi_t > 0`` and ``mu_plus < pi_t < mu_minus`` for every period."""
    for t, pi in enumerate(da_prices, start=1):
        if not (pi > 0 and mu_plus < pi < mu_minus):
            raise ConfigError(
                f"period {t}: DA price {pi} violates 0 < pi and mu_plus ({mu_plus}) < pi < mu_minus ({mu_minus})")


def critical_ratio(pi: float, mu_plus: float, mu_minus: float, period: int | None = None) -> float:
    """Newsvendor fractile ``(pi - mu_plus) / (mu_minus - mu_plus)``."""
    if not (pi > 0 and mu_plus < pi < mu_minus):
        where = f"period {period}: " if period is not None else ""
        raise ConfigError(f"{where}DA price {pi} violates 0 < pi and mu_plus ({mu_plus}) < pi < mu_minus ({mu_minus})")
    return (pi - mu_plus) / (mu_minus - mu_plus)


def expected_profit(d: Decision | tuple, params: DemandParams, shocks: ShockModel,
                    pi, mu_plus: float, mu_minus: float):
    """Expected one-period profit for contract ``Q`` and price ``p``.

    Vectorised: ``d`` may be a ``Decision`` or a ``(Q, p)`` pair of arrays,
    and ``pi`` may be an array of matching shape.
    """
    Q, p = (d.Q, d.p) if isinstance(d, Decision) else d
    Q = np.asarray(Q, dtype=float)
    p = np.asarray(p, dtype=float)
    base = params.a * p + params.b
    y = Q - base
    short = shocks.shortfall(y)            # E[(Q - D)^+]
    over = short - y + shocks.mean         # E[(D - Q)^+]
    out = pi * Q + mu_plus * over - mu_minus * short - p * (base + shocks.mean)
    return float(out) if np.ndim(out) == 0 else out


def profit_decomposition(d: Decision, params: DemandParams, shocks: ShockModel,
                         pi: float, mu_plus: float, mu_minus: float) -> tuple[float, float]:
    """Split expected profit into its newsvendor part and its pricing part.

    With ``Y = Q - a p - b`` the newsvendor part is
    ``pi*Y + E[mu_plus (eps - Y)^+ - mu_minus (Y - eps)^+]`` and the pricing part
    is ``(pi - p)(a p + b)``; they sum to ``expected_profit`` for zero-mean shocks.
    """
    y = d.Q - params.a * d.p - params.b
    short = float(shocks.shortfall(y))
    over = short - y + shocks.mean
    r1 = pi * y + mu_plus * over - mu_minus * short
    r2 = (pi - d.p) * (params.a * d.p + params.b)
    return r1, r2


def expected_profit_quad(d: Decision, params: DemandParams, shocks, pi: float,
                         mu_plus: float, mu_minus: float, tol: float = 1e-10) -> float:
    """Expected profit by adaptive quadrature against the shock density.

    Independent of the closed-form ``shortfall``; needs a model with ``pdf``.
    The integration range is split at the kink ``eps = Q - a p - b``.
    """
    lo, hi = shocks.support
    kink = d.Q - params.a * d.p - params.b
    pts = [lo] + ([kink] if lo < kink < hi else []) + [hi]

    def piece(f):
        return sum(integrate.quad(lambda e: f(e) * float(shocks.pdf(e)), u, v,
                                  epsabs=tol, epsrel=tol, limit=200)[0]
                   for u, v in zip(pts[:-1], pts[1:]))

    mean = piece(lambda e: e)
    over = piece(lambda e: max(e - kink, 0.0))
    short = piece(lambda e: max(kink - e, 0.0))
    demand = params.a * d.p + params.b + mean
    return pi * d.Q + mu_plus * over - mu_minus * short - d.p * demand


def realized_profit(d: Decision | tuple, reduction, pi, rt_plus, rt_minus):
    """Settlement of one period: ``pi Q + rt_plus (D-Q)^+ - rt_minus (Q-D)^+ - p D``."""
    Q, p = (d.Q, d.p) if isinstance(d, Decision) else d
    if np.any(np.asarray(rt_plus) < 0) or np.any(np.asarray(rt_minus) < 0):
        raise ValueError("real-time prices must be nonnegative")
    gap = np.asarray(reduction, dtype=float) - Q
    out = pi * Q + rt_plus * np.maximum(gap, 0.0) - rt_minus * np.maximum(-gap, 0.0) - p * reduction
    return float(out) if np.ndim(out) == 0 else out
