"""Aggregation of per-machine tail summaries.

Each machine reduces its subsample to a :class:`MachineSummary`; the
aggregator functions here accept only summaries, so raw data never
crosses the machine boundary.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import NumericalError
from .inference import IntervalEstimate, gamma_confidence_interval, quantile_confidence_interval
from .numerics import gamma_ratio
from .pooling import (
    PooledEstimate,
    PooledMoments,
    amse_optimal_weights,
    bias_reduced_gamma,
    geometric_pooled_weissman,
    naive_weights,
    pooled_estimate,
    project_to_simplex,
)
from .tail import (
    MIN_SECOND_ORDER_N,
    SortedSample,
    TailFit,
    check_k,
    hill_estimate,
    second_order_estimate,
)

SUMMARY_FIELDS = ("machine_id", "n", "k", "gamma_hat", "threshold", "beta_hat", "rho_hat")
K_RATIO_WARNING = 20.0


@dataclass(frozen=True)
class MachineSummary:
    machine_id: str
    n: int
    k: int
    gamma_hat: float
    threshold: float
    beta_hat: float
    rho_hat: float

    def __post_init__(self):
        check_k(self.k, self.n)
        if not self.threshold > 0:
            raise ValueError(f"machine {self.machine_id!r}: threshold must be positive")
        if self.gamma_hat < 0:
            raise ValueError(f"machine {self.machine_id!r}: gamma_hat must be nonnegative")
        if self.rho_hat > 0:
            raise ValueError(f"machine {self.machine_id!r}: rho_hat must be nonpositive")

    @property
    def fit(self) -> TailFit:
        return TailFit(gamma_hat=self.gamma_hat, k=self.k, threshold=self.threshold, n=self.n)

    @property
    def second_order_degenerate(self) -> bool:
        return self.beta_hat == 0.0 and self.rho_hat == 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "MachineSummary":
        missing = [f for f in SUMMARY_FIELDS if f not in obj]
        if missing:
            raise ValueError(f"summary is missing fields {missing}")
        extra = sorted(set(obj) - set(SUMMARY_FIELDS))
        if extra:
            raise ValueError(f"summary has unknown fields {extra}")
        return cls(
            machine_id=str(obj["machine_id"]),
            n=int(obj["n"]),
            k=int(obj["k"]),
            gamma_hat=float(obj["gamma_hat"]),
            threshold=float(obj["threshold"]),
            beta_hat=float(obj["beta_hat"]),
            rho_hat=float(obj["rho_hat"]),
        )


def load_summaries(paths: Iterable[str | Path]) -> list[MachineSummary]:
    """Read summaries from JSON files holding one object or an array of them."""
    out = []
    for path in paths:
        with open(path) as fh:
            payload = json.load(fh)
        items = payload if isinstance(payload, list) else [payload]
        for obj in items:
            if not isinstance(obj, dict):
                raise ValueError(f"{path}: expected JSON object(s)")
            out.append(MachineSummary.from_dict(obj))
    return out


def dump_summaries(summaries: Sequence[MachineSummary], path: str | Path) -> None:
    payload = [s.to_dict() for s in summaries]
    with open(path, "w") as fh:
        json.dump(payload[0] if len(payload) == 1 else payload, fh, indent=2)
        fh.write("\n")


def machine_summarize(sample: SortedSample, k: int, tuning: float = 0.0, machine_id: str | None = None) -> MachineSummary:
    """Reduce one machine's data to its communication payload.

    Samples too small for second-order estimation report ``beta_hat =
    rho_hat = 0`` (no estimated bias), like a degenerate second-order fit.
    """
    fit = hill_estimate(sample, k)
    if sample.n >= MIN_SECOND_ORDER_N:
        so = second_order_estimate(sample, tuning)
        beta, rho = so.beta_hat, so.rho_hat
    else:
        beta, rho = 0.0, 0.0
    return MachineSummary(
        machine_id=sample.origin_id if machine_id is None else machine_id,
        n=sample.n,
        k=fit.k,
        gamma_hat=fit.gamma_hat,
        threshold=fit.threshold,
        beta_hat=beta,
        rho_hat=rho,
    )


def _ordered(summaries: Sequence[MachineSummary]) -> list[MachineSummary]:
    if not summaries:
        raise ValueError("no machine summaries supplied")
    ids = [s.machine_id for s in summaries]
    if len(set(ids)) != len(ids):
        raise ValueError("machine ids must be unique")
    return sorted(summaries, key=lambda s: s.machine_id)


def scheme_weights(summaries: Sequence[MachineSummary], scheme) -> np.ndarray:
    """Weights for pooling per-machine quantities.

    ``"naive"`` gives ``1/m``, ``"variance"`` gives ``k_j/k`` and
    ``"sample_size"`` gives ``n_j/n``; an explicit array is passed through.
    """
    if isinstance(scheme, str):
        if scheme == "naive":
            return naive_weights(len(summaries))
        if scheme == "variance":
            ks = np.array([s.k for s in summaries], dtype=float)
            return ks / ks.sum()
        if scheme == "sample_size":
            ns = np.array([s.n for s in summaries], dtype=float)
            return ns / ns.sum()
        raise ValueError(f"unknown weight scheme {scheme!r}")
    w = np.asarray(scheme, dtype=float)
    if w.size != len(summaries):
        raise ValueError("explicit weights must have one entry per machine")
    return w


@dataclass(frozen=True)
class PooledSecondOrder:
    gamma: float
    beta: float
    rho: float
    lambda_hat: float
    moments: PooledMoments


def distributed_moments(
    summaries: Sequence[MachineSummary],
    gamma_weights="variance",
    beta_weights="sample_size",
    rho_weights="sample_size",
) -> PooledSecondOrder:
    """Bias vector and diagonal covariance from pooled second-order estimates.

    ``B_j = sqrt(k) gamma beta / (1 - rho) * (n_j/k_j)**rho`` and
    ``V = k gamma**2 diag(1/k_j)``, with gamma, beta and rho each pooled
    under its own weight scheme.
    """
    ks = np.array([s.k for s in summaries], dtype=float)
    ns = np.array([s.n for s in summaries], dtype=float)
    k, n = ks.sum(), ns.sum()
    gamma = float(scheme_weights(summaries, gamma_weights) @ [s.gamma_hat for s in summaries])
    beta = float(scheme_weights(summaries, beta_weights) @ [s.beta_hat for s in summaries])
    rho = float(scheme_weights(summaries, rho_weights) @ [s.rho_hat for s in summaries])
    if not gamma > 0:
        raise NumericalError("pooled tail index must be positive")
    B = math.sqrt(k) * gamma * beta / (1.0 - rho) * (ns / ks) ** rho
    V = np.diag(k * gamma**2 / ks)
    lam = gamma * beta * math.sqrt(k) * (n / k) ** rho
    return PooledSecondOrder(gamma, beta, rho, lam, PooledMoments(B=B, V=V, k_total=int(k)))


def aggregate_variance_optimal(summaries: Sequence[MachineSummary]) -> PooledEstimate:
    """Pool with weights ``k_j / k``; standard error ``gamma / sqrt(k)``."""
    summaries = _ordered(summaries)
    pooled = distributed_moments(summaries)
    ks = np.array([s.k for s in summaries])
    w = ks / ks.sum()
    return pooled_estimate([s.fit for s in summaries], w, pooled.moments, scheme="variance_optimal")


def aggregate_amse_optimal(
    summaries: Sequence[MachineSummary],
    beta_weights="sample_size",
    rho_weights="sample_size",
    gamma_weights="variance",
    nonnegative: bool = False,
) -> PooledEstimate:
    """AMSE-optimal pooling from summaries only.

    ``nonnegative=True`` projects the weights onto the simplex, which is
    no longer the unconstrained optimum.
    """
    summaries = _ordered(summaries)
    pooled = distributed_moments(summaries, gamma_weights, beta_weights, rho_weights)
    w = amse_optimal_weights(pooled.moments)
    if nonnegative:
        w = project_to_simplex(w)
    return pooled_estimate([s.fit for s in summaries], w, pooled.moments, scheme="amse_optimal")


def lambda0_threshold(gamma: float, rho: float, k_list, n_list) -> float:
    """Bias level above which AMSE-optimal pooling beats the combined Hill.

    Raises ``NumericalError`` when all sample fractions coincide, where
    the comparison is vacuous.
    """
    if not rho < 0:
        raise ValueError("lambda0 needs rho < 0")
    ks = np.asarray(k_list, dtype=float)
    ns = np.asarray(n_list, dtype=float)
    c = ks[0] / ks
    b = ns[0] / ns
    d = (c / b) * (1.0 / c).sum() / (1.0 / b).sum()
    if np.allclose(d, 1.0, rtol=1e-12, atol=0.0):
        raise NumericalError("equal sample fractions: lambda0 undefined")

    def s(alpha):
        return float(np.sum(d**alpha / c))

    s0, s1, s2 = s(0.0), s(rho), s(2.0 * rho)
    num = s1**2 - s0**2
    den = s0 * s2 - s1**2
    if not den > 0 or num < 0:
        raise NumericalError("degenerate design for lambda0")
    return gamma * (1.0 - rho) * math.sqrt(num / den)


def distributed_quantile(summaries: Sequence[MachineSummary], w, p: float) -> float:
    """Weighted geometric mean of the machines' Weissman estimates."""
    return geometric_pooled_weissman([s.fit for s in summaries], w, p)


def finite_k_bias_term(summaries: Sequence[MachineSummary], w, rho: float, A_values) -> float:
    """Bias of the pooled estimator when some ``k_j`` stay small.

    ``1/(1 - rho) * sum_j w_j k_j**rho Gamma(k_j - rho + 1) / k_j! A(n_j/k_j)``.
    ``A_values`` holds ``A(n_j/k_j)`` per machine, in the order given.
    """
    w = np.asarray(w, dtype=float)
    A = np.asarray(A_values, dtype=float)
    if not (w.size == A.size == len(summaries)):
        raise ValueError("weights, A values and summaries must align")
    ratios = np.array([gamma_ratio(s.k, rho) for s in summaries])
    return float(np.sum(w * ratios * A)) / (1.0 - rho)


def v_factor(k_list, w) -> float:
    """``k * sum(w_j**2 / k_j)``: variance inflation relative to the combined Hill."""
    ks = np.asarray(k_list, dtype=float)
    w = np.asarray(w, dtype=float)
    return float(ks.sum() * np.sum(w**2 / ks))


@dataclass
class AggregationReport:
    gamma_naive: PooledEstimate
    gamma_var_opt: PooledEstimate
    gamma_amse_opt: PooledEstimate
    gamma_bias_reduced_var: PooledEstimate
    gamma_bias_reduced_amse: PooledEstimate
    lambda_hat_pooled: float
    lambda0: float | None
    intervals: dict[str, IntervalEstimate]
    quantiles: dict[float, dict[str, dict]]
    diagnostics: dict = field(default_factory=dict)

    def estimates(self) -> dict[str, PooledEstimate]:
        return {
            "naive": self.gamma_naive,
            "variance_optimal": self.gamma_var_opt,
            "amse_optimal": self.gamma_amse_opt,
            "bias_reduced_variance_optimal": self.gamma_bias_reduced_var,
            "bias_reduced_amse_optimal": self.gamma_bias_reduced_amse,
        }


def aggregate(
    summaries: Sequence[MachineSummary],
    p_levels: Sequence[float] = (),
    level: float = 0.95,
    beta_weights="sample_size",
    rho_weights="sample_size",
    gamma_weights="variance",
    nonnegative: bool = False,
) -> AggregationReport:
    """Run every distributed estimator on a set of summaries."""
    summaries = _ordered(summaries)
    fits = [s.fit for s in summaries]
    ks = np.array([s.k for s in summaries], dtype=float)
    ns = np.array([s.n for s in summaries], dtype=float)
    k, n = ks.sum(), ns.sum()
    pooled = distributed_moments(summaries, gamma_weights, beta_weights, rho_weights)
    moments = pooled.moments

    naive = pooled_estimate(fits, naive_weights(len(fits)), moments, scheme="naive")
    var_opt = pooled_estimate(fits, ks / k, moments, scheme="variance_optimal")
    w_amse = amse_optimal_weights(moments)
    if nonnegative:
        w_amse = project_to_simplex(w_amse)
    amse = pooled_estimate(fits, w_amse, moments, scheme="amse_optimal")
    estimates = {
        "naive": naive,
        "variance_optimal": var_opt,
        "amse_optimal": amse,
        "bias_reduced_variance_optimal": bias_reduced_gamma(var_opt, moments),
        "bias_reduced_amse_optimal": bias_reduced_gamma(amse, moments),
    }
    intervals = {name: gamma_confidence_interval(est, level) for name, est in estimates.items()}

    try:
        lam0 = lambda0_threshold(pooled.gamma, pooled.rho, ks, ns) if pooled.rho < 0 else None
    except NumericalError:
        lam0 = None

    quantiles: dict[float, dict[str, dict]] = {}
    for p in p_levels:
        ext = math.log(k / (n * p))
        per = {}
        for name in ("naive", "variance_optimal", "amse_optimal"):
            w = estimates[name].weights
            q = distributed_quantile(summaries, w, p)
            ci = quantile_confidence_interval(q, w, moments.V, int(k), ext, level)
            per[name] = {"estimate": q, "lower": ci.lower, "upper": ci.upper}
        quantiles[p] = per

    frac = ks / ns
    diagnostics = {
        "m": len(summaries),
        "k_total": int(k),
        "n_total": int(n),
        "k_min": int(ks.min()),
        "k_max": int(ks.max()),
        "fraction_spread": float(np.max(np.abs(frac / (k / n) - 1.0))),
        "v_factor_naive": v_factor(ks, naive.weights),
        "pooled_beta": pooled.beta,
        "pooled_rho": pooled.rho,
        "warnings": [],
    }
    if ks.max() / ks.min() > K_RATIO_WARNING:
        diagnostics["warnings"].append(
            f"max k_j / min k_j = {ks.max() / ks.min():.3g} exceeds {K_RATIO_WARNING:g}"
        )
    return AggregationReport(
        gamma_naive=naive,
        gamma_var_opt=var_opt,
        gamma_amse_opt=amse,
        gamma_bias_reduced_var=estimates["bias_reduced_variance_optimal"],
        gamma_bias_reduced_amse=estimates["bias_reduced_amse_optimal"],
        lambda_hat_pooled=pooled.lambda_hat,
        lambda0=lam0,
        intervals=intervals,
        quantiles=quantiles,
        diagnostics=diagnostics,
    )
