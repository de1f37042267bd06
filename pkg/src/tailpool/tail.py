"""Marginal tail estimation within one sample.

Hill and Weissman estimators, the moment-ratio estimators of the
second-order parameters (rho, beta) and the resulting bias magnitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

#: Minimum sample size for the moment-ratio second-order estimators.
MIN_SECOND_ORDER_N = 50
RHO_FLOOR = -20.0


@dataclass(frozen=True)
class SortedSample:
    """Positive observations of one sample in ascending order.

    Use :meth:`from_values` to build one from raw data; the constructor
    itself only validates.
    """

    values: np.ndarray
    origin_id: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size == 0:
            raise ValueError("sample must be a nonempty 1-d array")
        if not np.all(np.isfinite(values)):
            raise ValueError("sample contains non-finite values")
        if values[0] <= 0:
            raise ValueError(f"nonpositive value encountered in sample {self.origin_id!r}")
        if np.any(np.diff(values) < 0):
            raise ValueError("values must be in nondecreasing order")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_values(cls, values, origin_id: str = "") -> "SortedSample":
        return cls(np.sort(np.asarray(values, dtype=float), kind="stable"), origin_id)

    @property
    def n(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class TailFit:
    gamma_hat: float
    k: int
    threshold: float
    n: int

    @property
    def log_threshold(self) -> float:
        return math.log(self.threshold)


@dataclass(frozen=True)
class SecondOrderFit:
    """Second-order parameters under ``A(t) = gamma * beta * t**rho``.

    ``degenerate`` marks samples whose log-spacings show no second-order
    term (pure Pareto behaviour); such fits carry ``rho_hat = beta_hat = 0``.
    """

    rho_hat: float
    beta_hat: float
    k_second: int
    degenerate: bool = field(default=False)


def default_k(n: int) -> int:
    """``floor(n**0.7)`` clipped to ``[1, n - 1]``."""
    if n < 2:
        raise ValueError(f"need at least 2 observations, got n={n}")
    return int(min(max(math.floor(n**0.7), 1), n - 1))


def check_k(k: int, n: int) -> int:
    if int(k) != k:
        raise ValueError(f"k must be an integer, got {k!r}")
    k = int(k)
    if not 1 <= k <= n - 1:
        raise ValueError(f"k={k} out of range [1, {n - 1}] for n={n}")
    return k


def hill_from_sorted(values: np.ndarray, k: int) -> tuple[float, float]:
    """Hill estimate and threshold from an ascending array.

    Only the top ``k + 1`` order statistics have to be positive, which is
    what residual-based estimation relies on.
    """
    n = values.size
    k = check_k(k, n)
    top = values[n - k - 1 :]
    if top[0] <= 0:
        raise ValueError("nonpositive value among the top k+1 order statistics")
    logs = np.log(top)
    gamma = float(np.mean(logs[1:]) - logs[0])
    # rounding in np.mean can leave a tiny negative value on tied data
    return max(gamma, 0.0), float(top[0])


def hill_estimate(sample: SortedSample, k: int) -> TailFit:
    """Hill estimator built on the top ``k + 1`` order statistics.

    Parameters
    ----------
    sample : SortedSample
    k : int
        Effective sample size, ``1 <= k <= n - 1``.

    Returns
    -------
    TailFit
        ``gamma_hat = mean(log X[n-i+1] - log X[n-k])`` for ``i = 1..k`` and
        the threshold order statistic ``X[n-k]``.
    """
    gamma, threshold = hill_from_sorted(sample.values, k)
    return TailFit(gamma_hat=gamma, k=int(k), threshold=threshold, n=sample.n)


def weissman_quantile(fit: TailFit, p: float, gamma_override: float | None = None) -> float:
    """Extrapolated quantile ``(k/(n p))**gamma * threshold`` at level ``1 - p``."""
    if not 0.0 < p < fit.k / fit.n:
        raise ValueError(f"p={p!r} outside the extrapolation range (0, k/n={fit.k / fit.n})")
    gamma = fit.gamma_hat if gamma_override is None else gamma_override
    return math.exp(gamma * math.log(fit.k / (fit.n * p)) + fit.log_threshold)


def _log_excess_moments(logs_desc: np.ndarray, k: int) -> tuple[float, float, float]:
    w = logs_desc[:k] - logs_desc[k]
    return float(np.mean(w)), float(np.mean(w**2)), float(np.mean(w**3))


def _moment_ratio(m1: float, m2: float, m3: float, tuning: float) -> float:
    if tuning == 0:
        num = math.log(m1) - 0.5 * math.log(m2 / 2.0)
        den = 0.5 * math.log(m2 / 2.0) - math.log(m3 / 6.0) / 3.0
    else:
        num = m1**tuning - (m2 / 2.0) ** (tuning / 2.0)
        den = (m2 / 2.0) ** (tuning / 2.0) - (m3 / 6.0) ** (tuning / 3.0)
    return num / den


def second_order_estimate(sample: SortedSample, tuning: float = 0.0) -> SecondOrderFit:
    """Moment-ratio estimates of the second-order parameters.

    ``rho_hat = -|3 (T - 1) / (T - 3)|`` where ``T`` is the tuning-``tau``
    ratio of the first three moments of the log-excesses, and ``beta_hat``
    is the companion estimator built from the scaled log-spacings
    ``U_i = i (log X[n-i+1] - log X[n-i])``. Both use the top
    ``k_second = floor(n**0.995)`` observations.

    A sample whose scaled log-spacings carry no second-order signal (for
    instance the expected log order statistics of a Pareto law, where all
    ``U_i`` coincide) yields a degenerate fit with ``rho_hat = beta_hat = 0``.
    """
    n = sample.n
    if n < MIN_SECOND_ORDER_N:
        raise ValueError(f"second-order estimation needs n >= {MIN_SECOND_ORDER_N}, got {n}")
    k = min(math.floor(n**0.995), n - 1)
    degenerate = SecondOrderFit(rho_hat=0.0, beta_hat=0.0, k_second=k, degenerate=True)

    logs_desc = np.log(sample.values[::-1][: k + 1])
    m1, m2, m3 = _log_excess_moments(logs_desc, k)
    if not (m1 > 0 and m2 > 0 and m3 > 0):
        return degenerate
    with np.errstate(all="ignore"):
        t = _moment_ratio(m1, m2, m3, tuning)
    if not math.isfinite(t) or t == 3.0:
        return degenerate
    rho = -abs(3.0 * (t - 1.0) / (t - 3.0))
    rho = max(rho, RHO_FLOOR)

    i = np.arange(1, k + 1, dtype=float)
    spacings = i * (logs_desc[:k] - logs_desc[1 : k + 1])
    u = i / k
    weight = u ** (-rho)
    d_k = float(np.mean(weight))
    d0 = float(np.mean(spacings))
    d_rho = float(np.mean(weight * spacings))
    d_2rho = float(np.mean(weight**2 * spacings))
    num = d_k * d0 - d_rho
    den = d_k * d_rho - d_2rho
    scale = abs(d_k * d0) + abs(d_rho)
    if scale == 0 or abs(num) <= 1e-10 * scale or den == 0:
        return degenerate
    beta = (k / n) ** rho * num / den
    if not math.isfinite(beta):
        return degenerate
    return SecondOrderFit(rho_hat=rho, beta_hat=float(beta), k_second=k)


def lambda_hat(gamma: float, so: SecondOrderFit, n: int, k: int) -> float:
    """Bias magnitude ``sqrt(k) * gamma * beta * (n/k)**rho``."""
    if k < 1 or n <= k:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
    return math.sqrt(k) * gamma * so.beta_hat * (n / k) ** so.rho_hat
