"""Aggregate demand-reduction model and demand-shock distributions.

The aggregate reduction elicited by a posted price ``p`` is ``D = a*p + b + eps``.
Shock models expose a common surface used by the market and policy code:
``sample``, ``cdf``, ``quantile``, ``shortfall`` (the newsvendor loss
``E[(y - eps)^+]``), ``mean`` and ``support``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import optimize, special
from scipy.interpolate import CubicHermiteSpline


class ConfigError(ValueError):
    """Invalid model or experiment configuration."""


class DomainError(ValueError):
    """Argument outside the domain of an operation."""


@dataclass(frozen=True)
class ParamBox:
    """Known admissible set ``[a_lo, a_hi] x [0, b_hi]`` for the demand parameters."""

    a_lo: float
    a_hi: float
    b_hi: float

    def __post_init__(self):
        if not (0 < self.a_lo <= self.a_hi < math.inf):
            raise ConfigError(f"param box needs 0 < a_lo <= a_hi < inf, got [{self.a_lo}, {self.a_hi}]")
        if not (0 <= self.b_hi < math.inf):
            raise ConfigError(f"param box needs 0 <= b_hi < inf, got {self.b_hi}")

    def contains(self, a: float, b: float) -> bool:
        return self.a_lo <= a <= self.a_hi and 0.0 <= b <= self.b_hi


@dataclass(frozen=True)
class DemandParams:
    """Aggregate price sensitivity ``a`` (kWh^2/$) and baseline reduction ``b`` (kWh)."""

    a: float
    b: float

    def __post_init__(self):
        if not self.a > 0:
            raise ConfigError(f"price sensitivity a must be positive, got {self.a}")
        if not self.b >= 0:
            raise ConfigError(f"baseline reduction b must be nonnegative, got {self.b}")

    @property
    def theta(self) -> np.ndarray:
        return np.array([self.a, self.b])


@dataclass(frozen=True)
class CustomerSpec:
    """Per-customer population law.

    ``a_i ~ U[a_range]``; ``b_i`` is an exponential with mean ``b_mean``
    restricted to ``b_range``; per-customer shocks are N(0, shock_sigma^2)
    truncated to ``shock_range``.
    """

    a_range: tuple[float, float] = (0.04, 0.20)
    b_mean: float = 0.01
    b_range: tuple[float, float] = (0.0, 0.1)
    shock_sigma: float = 0.5
    shock_range: tuple[float, float] = (-2.0, 2.0)

    def __post_init__(self):
        lo, hi = self.a_range
        if not (0 < lo <= hi):
            raise ConfigError(f"a_range must satisfy 0 < lo <= hi, got {self.a_range}")
        lo, hi = self.b_range
        if not (0 <= lo <= hi):
            raise ConfigError(f"b_range must satisfy 0 <= lo <= hi, got {self.b_range}")
        if not self.b_mean > 0:
            raise ConfigError(f"b_mean must be positive, got {self.b_mean}")
        if not self.shock_sigma > 0:
            raise ConfigError(f"shock_sigma must be positive, got {self.shock_sigma}")
        lo, hi = self.shock_range
        if not lo < 0 < hi:
            raise ConfigError(f"shock_range must bracket zero, got {self.shock_range}")
        if not math.isclose(lo, -hi, rel_tol=1e-12):
            # asymmetric truncation of a centred normal has nonzero mean
            raise ConfigError(f"shock_range must be symmetric about zero, got {self.shock_range}")


# ---------------------------------------------------------------------------
# Shock models


class ShockModel:
    """Distribution of the aggregate demand shock."""

    lipschitz_bound: float | None = None

    @property
    def support(self) -> tuple[float, float]:
        raise NotImplementedError

    @property
    def mean(self) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def cdf(self, x):
        raise NotImplementedError

    def quantile(self, alpha: float) -> float:
        raise NotImplementedError

    def shortfall(self, y):
        """``E[(y - eps)^+]``; the expected overage ``E[(eps - y)^+]`` is ``shortfall(y) - y + mean``."""
        raise NotImplementedError


def _check_alpha(alpha: float) -> None:
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")


@dataclass(frozen=True)
class TruncatedNormalShock(ShockModel):
    """N(0, sigma^2) truncated to ``[lo, hi]``."""

    sigma: float
    lo: float
    hi: float
    lipschitz_bound: float | None = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if not self.lo < self.hi:
            raise ConfigError(f"truncation bounds must be ordered, got [{self.lo}, {self.hi}]")
        if self.lipschitz_bound is not None and self.lipschitz_bound < 1:
            raise ConfigError("lipschitz_bound must be >= 1")

    @cached_property
    def _z(self) -> tuple[float, float, float]:
        cl = float(special.ndtr(self.lo / self.sigma))
        ch = float(special.ndtr(self.hi / self.sigma))
        return cl, ch, ch - cl

    @property
    def support(self):
        return (self.lo, self.hi)

    @property
    def mean(self) -> float:
        s = self.sigma
        return s * (_phi(self.lo / s) - _phi(self.hi / s)) / self._z[2]

    @property
    def variance(self) -> float:
        s, z = self.sigma, self._z[2]
        al, be = self.lo / s, self.hi / s
        tail = (_xphi(al) - _xphi(be)) / z
        shift = (_phi(al) - _phi(be)) / z
        return s * s * (1.0 + tail - shift * shift)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.lo) & (x <= self.hi)
        return np.where(inside, _phi(x / self.sigma) / (self.sigma * self._z[2]), 0.0)

    def cdf(self, x):
        cl, _, z = self._z
        x = np.clip(np.asarray(x, dtype=float), self.lo, self.hi)
        return np.clip((special.ndtr(x / self.sigma) - cl) / z, 0.0, 1.0)

    def quantile(self, alpha: float) -> float:
        _check_alpha(alpha)
        cl, _, z = self._z
        q = self.sigma * float(special.ndtri(cl + alpha * z))
        return min(max(q, self.lo), self.hi)

    def shortfall(self, y):
        s = self.sigma
        cl, _, z = self._z
        y = np.asarray(y, dtype=float)
        yc = np.clip(y, self.lo, self.hi)
        inner = (yc * (special.ndtr(yc / s) - cl) - s * (_phi(self.lo / s) - _phi(yc / s))) / z
        # above the support the loss is linear: y - mean
        return np.where(y > self.hi, y - self.mean, np.maximum(inner, 0.0))

    def sample(self, rng: np.random.Generator, size=None):
        n = 1 if size is None else int(np.prod(size))
        out = _truncnorm_rejection(rng, self.sigma, self.lo, self.hi, n)
        return float(out[0]) if size is None else out.reshape(size)


def _phi(x):
    return np.exp(-0.5 * np.square(x)) / math.sqrt(2.0 * math.pi)


def _xphi(x):
    # x*phi(x) -> 0 at +-inf
    x = np.asarray(x, dtype=float)
    return np.where(np.isfinite(x), x * _phi(np.where(np.isfinite(x), x, 0.0)), 0.0)


def _truncnorm_rejection(rng, sigma, lo, hi, n):
    out = rng.standard_normal(n) * sigma
    bad = np.flatnonzero((out < lo) | (out > hi))
    while bad.size:
        out[bad] = rng.standard_normal(bad.size) * sigma
        bad = bad[(out[bad] < lo) | (out[bad] > hi)]
    return out


class EmpiricalShock(ShockModel):
    """Shock law given by a finite sample (demeaned on construction)."""

    def __init__(self, samples, lipschitz_bound: float | None = None, center: bool = True):
        s = np.sort(np.asarray(samples, dtype=float).ravel())
        if s.size == 0:
            raise ConfigError("empirical shock model needs at least one sample")
        if not np.all(np.isfinite(s)):
            raise ConfigError("empirical shock samples must be finite")
        if center:
            s = s - s.mean()
        self.values = s
        self._csum = np.concatenate([[0.0], np.cumsum(s)])
        self.lipschitz_bound = lipschitz_bound

    @classmethod
    def from_file(cls, path, **kw) -> "EmpiricalShock":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read shock sample file {path}: {exc}") from exc
        vals = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                vals.append(float(line))
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: not a number: {line.strip()!r}") from None
        if not vals:
            raise ConfigError(f"{path}: no samples")
        return cls(vals, **kw)

    @property
    def support(self):
        return (float(self.values[0]), float(self.values[-1]))

    @property
    def mean(self) -> float:
        return float(self._csum[-1] / self.values.size)

    def cdf(self, x):
        return np.searchsorted(self.values, np.asarray(x, dtype=float), side="right") / self.values.size

    def quantile(self, alpha: float) -> float:
        _check_alpha(alpha)
        return float(self.values[order_index(self.values.size, alpha) - 1])

    def shortfall(self, y):
        y = np.asarray(y, dtype=float)
        k = np.searchsorted(self.values, y, side="right")
        return (k * y - self._csum[k]) / self.values.size

    def sample(self, rng, size=None):
        idx = rng.integers(0, self.values.size, size=size)
        return float(self.values[idx]) if size is None else self.values[idx]


def order_index(t: int, alpha: float) -> int:
    """Smallest ``i`` with ``i/t >= alpha``, i.e. ``ceil(t*alpha)`` immune to rounding in ``t*alpha``."""
    i = max(1, math.ceil(t * alpha))
    while i > 1 and (i - 1) / t >= alpha:
        i -= 1
    while i < t and i / t < alpha:
        i += 1
    return i


@dataclass(frozen=True)
class SumOfCustomerShocks(ShockModel):
    """Sum of ``n`` IID per-customer truncated-normal shocks.

    Sampling is exact (``n`` per-customer draws per aggregate draw). The
    distribution functions come from a table built once, either by Fourier
    inversion of the exact characteristic function (``method="fourier"``) or
    from ``mc_samples`` exact aggregate draws (``method="monte_carlo"``).
    """

    n: int
    sigma: float
    lo: float
    hi: float
    method: str = "fourier"
    mc_samples: int = 2_000_000
    mc_seed: int = 0
    lipschitz_bound: float | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"customer count must be >= 1, got {self.n}")
        if self.method not in ("fourier", "monte_carlo"):
            raise ConfigError(f"unknown quantile method {self.method!r}")
        if self.method == "fourier" and self.n < 30:
            raise ConfigError("fourier tabulation needs n >= 30; use method='monte_carlo'")
        if self.mc_samples < 1:
            raise ConfigError("mc_samples must be positive")
        # validates sigma and bounds
        self.customer

    @cached_property
    def customer(self) -> TruncatedNormalShock:
        return TruncatedNormalShock(self.sigma, self.lo, self.hi)

    @property
    def support(self):
        return (self.n * self.lo, self.n * self.hi)

    @property
    def mean(self) -> float:
        return self.n * self.customer.mean

    @property
    def std(self) -> float:
        return math.sqrt(self.n * self.customer.variance)

    def characteristic(self, u):
        """Characteristic function of one customer's shock at frequencies ``u``."""
        u = np.asarray(u, dtype=float)
        s = self.sigma
        _, _, z = self.customer._z
        root2 = math.sqrt(2.0)

        def big_phi(w):
            return 0.5 * special.erfc(-w / root2)

        w = 1j * s * u
        return np.exp(-0.5 * (s * u) ** 2) * (big_phi(self.hi / s - w) - big_phi(self.lo / s - w)) / z

    def log_characteristic(self, u):
        """Log of the aggregate characteristic function on an increasing grid ``u >= 0``."""
        psi = self.characteristic(u)
        return self.n * (np.log(np.abs(psi)) + 1j * np.unwrap(np.angle(psi)))

    @cached_property
    def _table(self):
        if self.method == "fourier":
            return _FourierTable(self)
        return _SampleTable(self)

    def cdf(self, x):
        return self._table.cdf(x)

    def quantile(self, alpha: float) -> float:
        _check_alpha(alpha)
        return self._table.quantile(alpha)

    def shortfall(self, y):
        return self._table.shortfall(y)

    def sample(self, rng, size=None):
        m = 1 if size is None else int(np.prod(size))
        out = np.empty(m)
        chunk = max(1, 2_000_000 // self.n)
        for start in range(0, m, chunk):
            k = min(chunk, m - start)
            draws = _truncnorm_rejection(rng, self.sigma, self.lo, self.hi, k * self.n)
            out[start:start + k] = draws.reshape(k, self.n).sum(axis=1)
        return float(out[0]) if size is None else out.reshape(size)

    def clt(self) -> TruncatedNormalShock:
        """Normal approximation with the exact aggregate variance, truncated to the aggregate support."""
        lo, hi = self.support
        return TruncatedNormalShock(self.std, lo, hi, self.lipschitz_bound)


class _FourierTable:
    """Density, CDF and shortfall of the aggregate shock on a fine grid.

    The density and its derivative are recovered from the characteristic
    function by a shifted trapezoid rule in frequency; CDF and shortfall
    follow by Hermite-corrected cumulative integration.
    """

    span = 12.0  # grid half-width in aggregate standard deviations
    nodes = 8001

    def __init__(self, model: SumOfCustomerShocks):
        mu, sd = model.mean, model.std
        lo, hi = model.support
        x = np.linspace(max(lo, mu - self.span * sd), min(hi, mu + self.span * sd), self.nodes)
        # frequency step keeps aliased copies >= 5 grid widths away
        du = 2.0 * math.pi / (5.0 * (x[-1] - x[0]))
        u_max = self._cutoff(model, du)
        u = (np.arange(int(math.ceil(u_max / du))) + 0.5) * du
        cf = np.exp(model.log_characteristic(u))
        ph = np.exp(-1j * np.outer(x, u))
        dens = (ph @ cf).real * du / math.pi
        ddens = (ph @ (-1j * u * cf)).real * du / math.pi
        h = np.diff(x)
        seg = 0.5 * h * (dens[:-1] + dens[1:]) + h * h * (ddens[:-1] - ddens[1:]) / 12.0
        cdf = np.concatenate([[0.0], np.cumsum(seg)])
        mass = cdf[-1]
        if abs(mass - 1.0) > 1e-8:
            raise RuntimeError(f"fourier tabulation lost mass: {mass!r}")
        cdf /= mass
        dens /= mass
        seg = 0.5 * h * (cdf[:-1] + cdf[1:]) + h * h * (dens[:-1] - dens[1:]) / 12.0
        loss = np.concatenate([[0.0], np.cumsum(seg)])
        self.x, self.density, self.cdf_nodes, self.loss_nodes = x, dens, cdf, loss
        self.mean = mu
        self._F = CubicHermiteSpline(x, cdf, dens)
        self._G = CubicHermiteSpline(x, loss, cdf)

    @staticmethod
    def _cutoff(model, du, floor=-50.0):
        u = du
        while True:
            grid = np.arange(0.5, 4097) * du
            logmag = model.log_characteristic(grid).real
            hit = np.flatnonzero(logmag < floor)
            if hit.size:
                return grid[hit[0]]
            du *= 4.0
            if du > 1e6:
                raise RuntimeError("characteristic function does not decay")

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.clip(self._F(np.clip(x, self.x[0], self.x[-1])), 0.0, 1.0)
        return np.where(x < self.x[0], 0.0, np.where(x > self.x[-1], 1.0, out))

    def shortfall(self, y):
        y = np.asarray(y, dtype=float)
        inner = np.maximum(self._G(np.clip(y, self.x[0], self.x[-1])), 0.0)
        top = self.loss_nodes[-1] + (y - self.x[-1])
        return np.where(y < self.x[0], 0.0, np.where(y > self.x[-1], top, inner))

    def quantile(self, alpha: float) -> float:
        j = int(np.searchsorted(self.cdf_nodes, alpha, side="left"))
        j = min(max(j, 1), self.x.size - 1)
        a, b = self.x[j - 1], self.x[j]
        fa, fb = self.cdf_nodes[j - 1] - alpha, self.cdf_nodes[j] - alpha
        if fa >= 0:
            return float(a)
        if fb <= 0:
            return float(b)
        return float(optimize.brentq(lambda v: float(self._F(v)) - alpha, a, b, xtol=1e-12, rtol=1e-15))


class _SampleTable:
    """Distribution functions of an exact aggregate Monte Carlo sample."""

    def __init__(self, model: SumOfCustomerShocks):
        rng = np.random.Generator(np.random.PCG64(model.mc_seed))
        self.samples = EmpiricalShock(model.sample(rng, size=model.mc_samples), center=False)
        self.mc_samples = model.mc_samples
        self.mc_seed = model.mc_seed

    def cdf(self, x):
        return self.samples.cdf(x)

    def quantile(self, alpha):
        return self.samples.quantile(alpha)

    def shortfall(self, y):
        return self.samples.shortfall(y)


@dataclass(frozen=True)
class DegenerateShock(ShockModel):
    """Point mass at zero. Useful for deterministic checks."""

    lipschitz_bound: float | None = None

    @property
    def support(self):
        return (0.0, 0.0)

    @property
    def mean(self) -> float:
        return 0.0

    def cdf(self, x):
        return np.where(np.asarray(x, dtype=float) >= 0.0, 1.0, 0.0)

    def quantile(self, alpha):
        _check_alpha(alpha)
        return 0.0

    def shortfall(self, y):
        return np.maximum(np.asarray(y, dtype=float), 0.0)

    def sample(self, rng, size=None):
        return 0.0 if size is None else np.zeros(size)


# ---------------------------------------------------------------------------
# Operations


def build_population(spec: CustomerSpec, n: int, rng: np.random.Generator, *,
                     method: str = "fourier", mc_samples: int = 2_000_000, mc_seed: int = 0,
                     lipschitz_bound: float | None = None) -> tuple[DemandParams, SumOfCustomerShocks]:
    """Draw ``n`` customers and return the aggregate parameters and shock model."""
    if n < 1:
        raise ConfigError(f"customer count must be >= 1, got {n}")
    a_lo, a_hi = spec.a_range
    a_i = rng.uniform(a_lo, a_hi, size=n) if a_hi > a_lo else np.full(n, a_lo)
    b_i = truncated_exponential(rng, spec.b_mean, spec.b_range, n)
    if method == "fourier" and n < 30:
        method = "monte_carlo"
    shocks = SumOfCustomerShocks(n, spec.shock_sigma, *spec.shock_range, method=method,
                                 mc_samples=mc_samples, mc_seed=mc_seed,
                                 lipschitz_bound=lipschitz_bound)
    return DemandParams(float(a_i.sum()), float(b_i.sum())), shocks


def truncated_exponential(rng: np.random.Generator, mean: float, bounds: tuple[float, float], n: int):
    """Exponential(mean) restricted to ``bounds``, by inverse CDF."""
    lo, hi = bounds
    if hi == lo:
        return np.full(n, float(lo))
    u = rng.random(n)
    # memoryless: the restriction to [lo, hi] is lo + Exp restricted to [0, hi - lo]
    return lo - mean * np.log1p(-u * -np.expm1(-(hi - lo) / mean))


def aggregate_reduction(params: DemandParams, price, shock, *, allow_negative: bool = False):
    """``a*price + b + shock``. Negative prices are rejected unless explicitly allowed."""
    if not allow_negative and np.any(np.asarray(price) < 0):
        raise DomainError(f"price must be nonnegative, got {price}")
    return params.a * price + params.b + shock


def shock_quantile(model: ShockModel, alpha: float) -> float:
    """``inf{x : F(x) >= alpha}``."""
    return model.quantile(alpha)


def sample_shock(model: ShockModel, rng: np.random.Generator) -> float:
    return model.sample(rng)


def bilipschitz_violations(model: ShockModel, lipschitz_bound: float | None = None, n_grid: int = 201):
    """Grid pairs violating ``|x-y|/L <= |F(x)-F(y)| <= L|x-y|``.

    Returns a list of ``(x, y, ratio)``; an empty list means no violation was found.
    """
    L = lipschitz_bound if lipschitz_bound is not None else model.lipschitz_bound
    if L is None:
        return []
    lo, hi = model.support
    x = np.linspace(lo, hi, n_grid)
    F = np.asarray(model.cdf(x))
    dx = x[:, None] - x[None, :]
    dF = np.abs(F[:, None] - F[None, :])
    off = np.abs(dx) > 0
    ratio = np.where(off, dF / np.where(off, np.abs(dx), 1.0), 1.0)
    bad = off & ((ratio > L * (1 + 1e-12)) | (ratio < (1.0 / L) * (1 - 1e-12)))
    i, j = np.nonzero(np.triu(bad))
    return [(float(x[a]), float(x[b]), float(ratio[a, b])) for a, b in zip(i, j)]
