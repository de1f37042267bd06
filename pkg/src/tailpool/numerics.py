"""Special functions used by the tests and interval constructions.

Thin wrappers around :mod:`scipy.special` that validate their domains and
raise :class:`ValueError` on boundary inputs instead of returning inf/nan.
"""

from __future__ import annotations

import math

from scipy import special


def _check_prob(p: float) -> None:
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p!r}")


def _check_dof(dof: int) -> None:
    if int(dof) != dof or dof < 1:
        raise ValueError(f"degrees of freedom must be a positive integer, got {dof!r}")


def normal_cdf(x: float) -> float:
    return float(special.ndtr(x))


def normal_quantile(p: float) -> float:
    """Standard normal quantile; ``normal_quantile(0.975) ~= 1.959964``."""
    _check_prob(p)
    return float(special.ndtri(p))


def chisq_cdf(x: float, dof: int) -> float:
    _check_dof(dof)
    if x < 0:
        raise ValueError(f"chi-square argument must be nonnegative, got {x!r}")
    return float(special.gammainc(dof / 2.0, x / 2.0))


def chisq_sf(x: float, dof: int) -> float:
    """Upper tail ``1 - chisq_cdf(x, dof)`` without cancellation."""
    _check_dof(dof)
    if x < 0:
        raise ValueError(f"chi-square argument must be nonnegative, got {x!r}")
    return float(special.gammaincc(dof / 2.0, x / 2.0))


def chisq_quantile(p: float, dof: int) -> float:
    _check_prob(p)
    _check_dof(dof)
    return float(2.0 * special.gammaincinv(dof / 2.0, p))


def log_gamma(x: float) -> float:
    if not x > 0:
        raise ValueError(f"log_gamma needs x > 0, got {x!r}")
    return float(special.gammaln(x))


def gamma_ratio(k: int, rho: float) -> float:
    """``k**rho * Gamma(k - rho + 1) / k!`` evaluated on the log scale."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k!r}")
    return math.exp(rho * math.log(k) + log_gamma(k - rho + 1.0) - log_gamma(k + 1.0))
