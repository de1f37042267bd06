"""Pooled tail-index and extreme-quantile estimators.

All weight constructors return plain ``numpy`` arrays summing to one.
Weights may be negative; AMSE-optimal weights are an unconstrained
optimum unless explicitly projected with :func:`project_to_simplex`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy import linalg

from .dependence import pair_orientation
from .errors import NumericalError
from .tail import SecondOrderFit, TailFit, lambda_hat, weissman_quantile

WEIGHT_TOL = 1e-12
EIGEN_FLOOR = 1e-10


def naive_weights(m: int) -> np.ndarray:
    if m < 1:
        raise ValueError("need at least one sample")
    return np.full(m, 1.0 / m)


def check_weights(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a nonempty 1-d array")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    if abs(w.sum() - 1.0) > WEIGHT_TOL * max(1.0, np.abs(w).sum()):
        raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
    return w


def pooled_gamma(gammas, w) -> float:
    gammas = np.asarray(gammas, dtype=float)
    w = check_weights(w)
    if gammas.shape != w.shape:
        raise ValueError(f"length mismatch: {gammas.size} estimates, {w.size} weights")
    return float(w @ gammas)


@dataclass(frozen=True)
class PooledMoments:
    """Estimated asymptotic bias ``B`` and covariance ``V`` on the sqrt(k) scale."""

    B: np.ndarray
    V: np.ndarray
    k_total: int


@dataclass(frozen=True)
class PooledEstimate:
    gamma: float
    weights: np.ndarray
    stderr: float
    bias_est: float
    scheme: str = "custom"
    correction: str = "raw"


def repair_psd(V) -> np.ndarray:
    """Symmetrize and floor eigenvalues at ``1e-10 * max eigenvalue``."""
    V = np.asarray(V, dtype=float)
    V = 0.5 * (V + V.T)
    eig, vec = np.linalg.eigh(V)
    top = eig[-1]
    if not top > 0:
        raise NumericalError("covariance matrix has no positive eigenvalue")
    floor = EIGEN_FLOOR * top
    if eig[0] >= floor:
        return V
    eig = np.maximum(eig, floor)
    V = (vec * eig) @ vec.T
    return 0.5 * (V + V.T)


def estimate_moments(
    fits: Sequence[TailFit],
    second_order: Sequence[SecondOrderFit],
    copula=None,
    gamma_plugin: float | None = None,
) -> PooledMoments:
    """Plug-in estimates of the bias vector and covariance matrix.

    Parameters
    ----------
    fits, second_order
        Marginal Hill fits and second-order fits, one per sample.
    copula
        ``None`` declares independence across samples. Otherwise an
        ``m x m`` array whose ``[j, l]`` entry is the tail copula of the
        pair evaluated at ``(k_a/k_b, n_a/n_b)``, ``a`` being the sample with
        fewer observations (as returned by
        :func:`tailpool.dependence.tail_copula_matrix`).
    gamma_plugin
        Tail index used inside both estimates; defaults to the naive
        average of the marginal Hill estimates.
    """
    m = len(fits)
    if m < 1 or len(second_order) != m:
        raise ValueError("need one second-order fit per tail fit")
    ks = np.array([f.k for f in fits], dtype=float)
    ns = [f.n for f in fits]
    k_total = int(ks.sum())
    if gamma_plugin is None:
        gamma_plugin = float(np.mean([f.gamma_hat for f in fits]))
    if not gamma_plugin > 0:
        raise NumericalError(f"gamma plug-in must be positive, got {gamma_plugin!r}")

    B = np.empty(m)
    for j, (fit, so) in enumerate(zip(fits, second_order)):
        lam = lambda_hat(gamma_plugin, so, fit.n, fit.k)
        B[j] = math.sqrt(k_total) * (lam / math.sqrt(fit.k)) / (1.0 - so.rho_hat)

    scale = k_total * gamma_plugin**2
    V = np.diag(scale / ks)
    if copula is not None:
        R = np.asarray(copula, dtype=float)
        if R.shape != (m, m):
            raise ValueError(f"copula matrix must be {m}x{m}")
        for j in range(m):
            for l in range(j + 1, m):
                a, _ = pair_orientation(ns, j, l, ks)
                V[j, l] = V[l, j] = scale * R[j, l] / ks[a]
    return PooledMoments(B=B, V=repair_psd(V), k_total=k_total)


def _solver(V):
    """Return ``b -> V^{-1} b``; diagonal matrices skip the factorization."""
    V = np.asarray(V, dtype=float)
    d = np.diag(V)
    if np.count_nonzero(V - np.diag(d)) == 0:
        if not np.all(d > 0):
            raise NumericalError("covariance matrix is not positive definite")
        return lambda b: np.asarray(b, dtype=float) / d
    try:
        factor = linalg.cho_factor(V)
    except linalg.LinAlgError as exc:
        raise NumericalError("covariance matrix is not positive definite") from exc
    return lambda b: linalg.cho_solve(factor, b)


def variance_optimal_weights(V) -> np.ndarray:
    """``V^{-1} 1 / (1' V^{-1} 1)``, the unit-sum minimizer of ``w' V w``."""
    V = np.asarray(V, dtype=float)
    a = _solver(V)(np.ones(V.shape[0]))
    s = a.sum()
    if not s > 0:
        raise NumericalError("degenerate covariance matrix")
    return a / s


def _amse_terms(moments: PooledMoments):
    m = moments.B.size
    solve = _solver(moments.V)
    a = solve(np.ones(m))
    b = solve(moments.B)
    s11, s1b, sbb = a.sum(), b.sum(), float(moments.B @ b)
    den = (1.0 + sbb) * s11 - s1b**2
    if not den > 0:
        raise NumericalError("degenerate bias/covariance pair")
    return a, b, s1b, sbb, den


def amse_optimal_weights(moments: PooledMoments) -> np.ndarray:
    """Unit-sum minimizer of ``(w'B)^2 + w'Vw``.

    Closed form ``[(1 + B'V^{-1}B) V^{-1}1 - (1'V^{-1}B) V^{-1}B] / D`` with
    ``D = (1 + B'V^{-1}B)(1'V^{-1}1) - (1'V^{-1}B)^2``.
    """
    a, b, s1b, sbb, den = _amse_terms(moments)
    w = ((1.0 + sbb) * a - s1b * b) / den
    return w / w.sum()


def amse_optimum(moments: PooledMoments) -> float:
    """Closed-form minimum value ``(1 + B'V^{-1}B) / D``."""
    _, _, _, sbb, den = _amse_terms(moments)
    return (1.0 + sbb) / den


def amse_value(w, moments: PooledMoments) -> float:
    w = np.asarray(w, dtype=float)
    return float((w @ moments.B) ** 2 + w @ moments.V @ w)


def project_to_simplex(w) -> np.ndarray:
    """Euclidean projection onto ``{w >= 0, sum(w) = 1}``."""
    w = np.asarray(w, dtype=float)
    u = np.sort(w)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, w.size + 1)
    r = np.nonzero(u - css / idx > 0)[0][-1]
    return np.maximum(w - css[r] / (r + 1.0), 0.0)


def pooled_estimate(fits: Sequence[TailFit], w, moments: PooledMoments, scheme: str = "custom") -> PooledEstimate:
    w = check_weights(w)
    gamma = pooled_gamma([f.gamma_hat for f in fits], w)
    var = float(w @ moments.V @ w)
    return PooledEstimate(
        gamma=gamma,
        weights=w,
        stderr=math.sqrt(max(var, 0.0) / moments.k_total),
        bias_est=float(w @ moments.B) / math.sqrt(moments.k_total),
        scheme=scheme,
    )


def bias_reduced_gamma(est: PooledEstimate, moments: PooledMoments) -> PooledEstimate:
    """Subtract the estimated asymptotic bias ``w'B / sqrt(k)``."""
    if moments.k_total < 1:
        raise ValueError("k_total must be >= 1")
    shift = float(est.weights @ moments.B) / math.sqrt(moments.k_total)
    return replace(est, gamma=est.gamma - shift, bias_est=shift, correction="bias_reduced")


def _marginal_logs(fits: Sequence[TailFit], p: float) -> np.ndarray:
    return np.log([weissman_quantile(f, p) for f in fits])


def geometric_pooled_weissman(fits: Sequence[TailFit], w, p: float) -> float:
    """Weighted geometric mean of the marginal Weissman estimates."""
    w = check_weights(w)
    if len(fits) != w.size:
        raise ValueError("one weight per fit required")
    return math.exp(float(w @ _marginal_logs(fits, p)))


def arithmetic_pooled_weissman(fits: Sequence[TailFit], w, p: float) -> float:
    w = check_weights(w)
    if len(fits) != w.size:
        raise ValueError("one weight per fit required")
    return float(w @ np.exp(_marginal_logs(fits, p)))


def shared_gamma_weissman(fit: TailFit, pooled: float, p: float) -> float:
    """Weissman estimate of one sample using a pooled tail index."""
    return weissman_quantile(fit, p, gamma_override=pooled)
