"""Deviance tests and asymptotic confidence intervals.

The tests use :func:`covariance_bar`, which plugs each sample's own Hill
estimate into the covariance; the intervals use the pooled-gamma matrix
from :func:`tailpool.pooling.estimate_moments`. No bias correction is
applied inside the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from .dependence import pair_orientation
from .errors import NumericalError
from .numerics import chisq_quantile, chisq_sf, normal_quantile
from .pooling import PooledEstimate, repair_psd
from .tail import TailFit

REJECT_LEVELS = (0.10, 0.05, 0.01)


@dataclass(frozen=True)
class TestResult:
    statistic: float
    dof: int
    p_value: float
    reject_at: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class


@dataclass(frozen=True)
class IntervalEstimate:
    center: float
    lower: float
    upper: float
    level: float

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def covariance_bar(fits: Sequence[TailFit], copula=None) -> np.ndarray:
    """Covariance estimate with per-sample Hill plug-ins.

    Diagonal ``k * gamma_j**2 / k_j``; off-diagonal
    ``k * gamma_j * gamma_l * R_jl / k_a`` with ``a`` the smaller sample of
    the pair. ``copula=None`` declares independence.
    """
    gam = np.array([f.gamma_hat for f in fits], dtype=float)
    ks = np.array([f.k for f in fits], dtype=float)
    ns = [f.n for f in fits]
    k = ks.sum()
    V = np.diag(k * gam**2 / ks)
    if copula is not None:
        R = np.asarray(copula, dtype=float)
        m = len(fits)
        for j in range(m):
            for l in range(j + 1, m):
                a, _ = pair_orientation(ns, j, l, ks)
                V[j, l] = V[l, j] = k * gam[j] * gam[l] * R[j, l] / ks[a]
    return repair_psd(V)


def _deviance(z: np.ndarray, V) -> tuple[float, float]:
    try:
        factor = linalg.cho_factor(np.asarray(V, dtype=float))
    except linalg.LinAlgError as exc:
        raise NumericalError("covariance matrix is not positive definite") from exc
    ones = np.ones(z.size)
    a = linalg.cho_solve(factor, ones)
    mu = float(a @ z) / a.sum()
    r = z - mu
    return float(r @ linalg.cho_solve(factor, r)), mu


def _result(stat: float, dof: int) -> TestResult:
    stat = max(stat, 0.0)
    return TestResult(
        statistic=stat,
        dof=dof,
        p_value=chisq_sf(stat, dof),
        reject_at={level: stat > chisq_quantile(1.0 - level, dof) for level in REJECT_LEVELS},
    )


def homogeneity_test(gammas, V_bar, k_total: int) -> TestResult:
    """Deviance test of equal tail indices.

    ``Lambda = k (g - mu 1)' V^{-1} (g - mu 1)`` with ``mu`` the
    variance-optimal pooled estimate; chi-square with ``m - 1`` degrees of
    freedom under the null.
    """
    gammas = np.asarray(gammas, dtype=float)
    if gammas.size < 2:
        raise ValueError("homogeneity test needs at least two samples")
    dev, _ = _deviance(gammas, V_bar)
    return _result(k_total * dev, gammas.size - 1)


def homoskedasticity_test(log_quantiles, V_bar, k_total: int, extrapolation_log: float) -> TestResult:
    """Deviance test of asymptotically equal extreme quantiles.

    Same quadratic form as :func:`homogeneity_test` applied to the log
    Weissman estimates, scaled by ``k / log(k/(np))**2``.
    """
    z = np.asarray(log_quantiles, dtype=float)
    if z.size < 2:
        raise ValueError("homoskedasticity test needs at least two samples")
    if not extrapolation_log > 0:
        raise ValueError("extrapolation factor log(k/(np)) must be positive")
    dev, _ = _deviance(z, V_bar)
    return _result(k_total * dev / extrapolation_log**2, z.size - 1)


def _z(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level!r}")
    return normal_quantile(0.5 + level / 2.0)


def gamma_confidence_interval(est: PooledEstimate, level: float = 0.95) -> IntervalEstimate:
    half = _z(level) * est.stderr
    return IntervalEstimate(center=est.gamma, lower=est.gamma - half, upper=est.gamma + half, level=level)


def quantile_confidence_interval(
    q_star: float, w, V, k_total: int, extrapolation_log: float, level: float = 0.95
) -> IntervalEstimate:
    """Multiplicative interval ``q * exp(+-z log(k/(np)) sqrt(w'Vw/k))``."""
    if not q_star > 0:
        raise ValueError("quantile estimate must be positive")
    if not extrapolation_log > 0:
        raise ValueError("extrapolation factor log(k/(np)) must be positive")
    w = np.asarray(w, dtype=float)
    sd = math.sqrt(max(float(w @ np.asarray(V) @ w), 0.0) / k_total)
    h = _z(level) * extrapolation_log * sd
    return IntervalEstimate(center=q_star, lower=q_star * math.exp(-h), upper=q_star * math.exp(h), level=level)
