"""Online least squares for the demand curve plus residual quantile estimation."""

from __future__ import annotations

from functools import cached_property

import numpy as np

from .demand_model import DemandParams, ParamBox, order_index


class EstimatorStateError(RuntimeError):
    """Estimator queried before it has enough information."""


REFRESH_EVERY = 512


class EstimatorState:
    """Running least-squares state for ``D_k = a p_k + b + eps_k``.

    Holds the Gram matrix ``sum x x^T`` with ``x = (p, 1)``, its inverse
    (rank-one updated once it exists), the moment vector ``sum x D``, running
    price mean and variance, and the full ``(p, D)`` history for residuals.
    """

    def __init__(self, box: ParamBox, capacity: int = 64):
        self.box = box
        self.t = 0
        self.gram = np.zeros((2, 2))
        self.gram_inv: np.ndarray | None = None
        self.moment = np.zeros(2)
        self.price_mean = 0.0
        self._m2 = 0.0
        self._p = np.empty(capacity)
        self._d = np.empty(capacity)
        self._since_refresh = 0

    # -- history views -------------------------------------------------
    @property
    def prices(self) -> np.ndarray:
        return self._p[:self.t]

    @property
    def reductions(self) -> np.ndarray:
        return self._d[:self.t]

    @property
    def price_var(self) -> float:
        """Population variance ``(1/t) sum (p_k - pbar_t)^2``."""
        return self._m2 / self.t if self.t else 0.0

    @property
    def invertible(self) -> bool:
        return self.gram_inv is not None

    @property
    def theta_raw(self) -> np.ndarray:
        if self.gram_inv is None:
            raise EstimatorStateError("least-squares estimate undefined before two distinct prices")
        return self.gram_inv @ self.moment

    @property
    def theta_hat(self) -> DemandParams:
        return truncate(self.theta_raw, self.box)

    # -- update ----------------------------------------------------------
    def observe(self, price: float, reduction: float) -> "EstimatorState":
        if not (np.isfinite(price) and np.isfinite(reduction)):
            raise ValueError(f"non-finite observation ({price}, {reduction})")
        if self.t == self._p.size:
            self._p = np.concatenate([self._p, np.empty(self._p.size)])
            self._d = np.concatenate([self._d, np.empty(self._d.size)])
        self._p[self.t] = price
        self._d[self.t] = reduction
        self.t += 1

        # Welford
        delta = price - self.price_mean
        self.price_mean += delta / self.t
        self._m2 += delta * (price - self.price_mean)

        x = np.array([price, 1.0])
        self.gram += np.outer(x, x)
        self.moment += x * reduction

        if self.gram_inv is not None:
            self._since_refresh += 1
            if self._since_refresh >= REFRESH_EVERY:
                self._refresh()
            else:
                gx = self.gram_inv @ x
                self.gram_inv = self.gram_inv - np.outer(gx, gx) / (1.0 + x @ gx)
        elif self.t >= 2 and self._m2 > 0.0:
            self._refresh()
        return self

    def _refresh(self) -> None:
        self.gram_inv = inv2(self.gram)
        self._since_refresh = 0


def inv2(m: np.ndarray) -> np.ndarray:
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    return np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]) / det


def observe(state: EstimatorState, price: float, reduction: float) -> EstimatorState:
    """Fold one ``(price, reduction)`` observation into ``state`` (in place) and return it."""
    return state.observe(price, reduction)


def truncate(theta_raw, box: ParamBox) -> DemandParams:
    """Euclidean projection onto the parameter box, i.e. a componentwise clamp."""
    a = min(max(float(theta_raw[0]), box.a_lo), box.a_hi)
    b = min(max(float(theta_raw[1]), 0.0), box.b_hi)
    return DemandParams(a, b)


class ResidualSet:
    """Residuals ``D_k - (a_hat p_k + b_hat)`` and their order statistics (sorted lazily)."""

    def __init__(self, values: np.ndarray):
        self.values = values

    @property
    def t(self) -> int:
        return self.values.size

    @cached_property
    def sorted(self) -> np.ndarray:
        return np.sort(self.values, kind="stable")

    def order_statistic(self, i: int) -> float:
        """``i``-th smallest residual (1-based)."""
        if "sorted" in self.__dict__:
            return float(self.sorted[i - 1])
        return float(np.partition(self.values, i - 1)[i - 1])


def residuals(state: EstimatorState, theta: DemandParams | None = None) -> ResidualSet:
    """Residuals of every past observation under the current truncated estimate."""
    if theta is None:
        if not state.invertible:
            raise EstimatorStateError("residuals need a defined estimate")
        theta = state.theta_hat
    vals = state.reductions - (theta.a * state.prices + theta.b)
    return ResidualSet(vals)


def empirical_quantile(res: ResidualSet, alpha: float) -> float:
    """Order statistic ``ceil(t*alpha)`` of the residuals."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if res.t == 0:
        raise EstimatorStateError("empty residual set")
    return res.order_statistic(order_index(res.t, alpha))
