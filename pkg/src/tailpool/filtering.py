"""Pooled tail estimation from filtered residuals.

Residuals come from an external location-scale fit ``X = g(Z) + sigma(Z) eps``.
Only the top ``k + 1`` residuals of each sample need to be positive; the
body of the residual sample may be negative. The accuracy of the external
filter is the caller's responsibility.
"""

from __future__ import annotations

import csv
from collections import OrderedDict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .pooling import check_weights
from .tail import TailFit, hill_from_sorted, weissman_quantile


@dataclass(frozen=True)
class ResidualSample:
    """Residuals of one sample with the fitted location and scale at a covariate value.

    Attributes
    ----------
    residuals : ndarray
        Residuals in original order.
    location_at_z : float
        Fitted location ``g(z)``.
    scale_at_z : float
        Fitted scale ``sigma(z)``, strictly positive.
    """

    residuals: np.ndarray
    location_at_z: float = 0.0
    scale_at_z: float = 1.0
    sample_id: str = ""

    def __post_init__(self):
        r = np.array(self.residuals, dtype=float)
        if r.ndim != 1 or r.size < 2:
            raise ValueError("need a 1-d array of at least two residuals")
        if not np.all(np.isfinite(r)):
            raise ValueError("residuals must be finite")
        if not (np.isfinite(self.location_at_z) and np.isfinite(self.scale_at_z)):
            raise ValueError("location and scale must be finite")
        if not self.scale_at_z > 0:
            raise ValueError(f"scale must be positive, got {self.scale_at_z!r}")
        r.setflags(write=False)
        object.__setattr__(self, "residuals", r)

    @property
    def n(self) -> int:
        return self.residuals.size


def residual_hill(rs: ResidualSample, k: int) -> TailFit:
    """Hill estimate on the upper order statistics of the residuals."""
    gamma, threshold = hill_from_sorted(np.sort(rs.residuals, kind="stable"), k)
    return TailFit(gamma_hat=gamma, k=k, threshold=threshold, n=rs.n)


def conditional_quantile(rs: ResidualSample, pooled_residual_quantile: float) -> float:
    """Recompose ``g(z) + sigma(z) * q`` from a residual quantile ``q``."""
    if not pooled_residual_quantile > 0:
        raise ValueError("residual quantile must be positive")
    return rs.location_at_z + rs.scale_at_z * pooled_residual_quantile


def pooled_residual_quantile(fits: Sequence[TailFit], w, p: float) -> float:
    """Weighted geometric mean of residual Weissman quantiles at level ``1 - p``."""
    w = check_weights(w)
    if len(fits) != w.size:
        raise ValueError("one weight per fit required")
    logs = np.log([weissman_quantile(f, p) for f in fits])
    return float(np.exp(w @ logs))


def read_residual_csv(path) -> "OrderedDict[str, np.ndarray]":
    """Read a long-format ``sample_id,residual`` file, keeping row order."""
    groups: OrderedDict[str, list[float]] = OrderedDict()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames[:2]] != ["sample_id", "residual"]:
            raise ValueError("residual CSV must have header sample_id,residual")
        for lineno, row in enumerate(reader, start=2):
            try:
                value = float(row["residual"])
            except (TypeError, ValueError):
                raise ValueError(f"line {lineno}: bad residual {row['residual']!r}") from None
            groups.setdefault(row["sample_id"].strip(), []).append(value)
    if not groups:
        raise ValueError("residual CSV has no rows")
    return OrderedDict((sid, np.asarray(v)) for sid, v in groups.items())
