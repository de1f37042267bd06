"""Rank-based estimation of pairwise upper tail copulas."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class PairedRanks:
    n_overlap: int
    ranks_j: np.ndarray
    ranks_l: np.ndarray
    k_pair: int

    def __post_init__(self):
        if not 1 <= self.k_pair <= self.n_overlap:
            raise ValueError(f"k_pair={self.k_pair} outside [1, {self.n_overlap}]")
        if len(self.ranks_j) != self.n_overlap or len(self.ranks_l) != self.n_overlap:
            raise ValueError("rank arrays must have length n_overlap")


def pair_orientation(n, j: int, l: int, k=None) -> tuple[int, int]:
    """Order a pair so the sample with fewer observations comes first.

    Equal sizes are broken by the smaller ``k`` (when given) and then by
    the lower index, which keeps every pairwise quantity invariant under
    relabeling of samples with distinct ``(n, k)``.
    """
    key_j = (n[j], k[j] if k is not None else 0, j)
    key_l = (n[l], k[l] if k is not None else 0, l)
    return (l, j) if key_l < key_j else (j, l)


def build_paired_ranks(sample_j, sample_l, k_j: int, k_l: int) -> PairedRanks:
    """Ranks of the first ``min(n_j, n_l)`` co-indexed observations.

    Both inputs must be in their original observation order. Ties get
    average ranks. ``k_pair`` is ``k_j`` when ``n_j < n_l`` and ``k_l``
    otherwise.
    """
    x_j = np.asarray(sample_j, dtype=float)
    x_l = np.asarray(sample_l, dtype=float)
    n_overlap = min(x_j.size, x_l.size)
    if n_overlap == 0:
        raise ValueError("empty overlap between the two samples")
    k_pair = k_j if x_j.size < x_l.size else k_l
    return PairedRanks(
        n_overlap=n_overlap,
        ranks_j=rankdata(x_j[:n_overlap], method="average"),
        ranks_l=rankdata(x_l[:n_overlap], method="average"),
        k_pair=int(k_pair),
    )


def empirical_tail_copula(pr: PairedRanks, u: float, v: float) -> float:
    """Empirical upper tail copula ``R(u, v)``.

    Counts observations whose reversed ranks ``n + 1 - r`` fall below
    ``u * k (n + 1) / n`` in the first coordinate and below the same with
    ``v`` in the second, divided by ``k``.
    """
    if u < 0 or v < 0:
        raise ValueError("tail copula arguments must be nonnegative")
    if math.isinf(u) and math.isinf(v):
        raise ValueError("tail copula undefined at (inf, inf)")
    n, k = pr.n_overlap, pr.k_pair
    scale = k * (n + 1) / n
    hit = (n + 1 - pr.ranks_j <= u * scale) & (n + 1 - pr.ranks_l <= v * scale)
    return float(np.count_nonzero(hit)) / k


def tail_copula_matrix(samples, ks) -> np.ndarray:
    """Pairwise ``R_hat(k_a/k_b, n_a/n_b)`` for every pair of samples.

    ``samples`` are raw series in observation order. For each pair, ``a``
    is the sample with fewer observations (see :func:`pair_orientation`)
    so that its observations are all co-indexed with ``b``. Arguments are
    clamped to ``[1/k_pair, k_pair]``. The result is symmetric with a unit
    diagonal.
    """
    m = len(samples)
    n = [len(s) for s in samples]
    out = np.eye(m)
    for j in range(m):
        for l in range(j + 1, m):
            a, b = pair_orientation(n, j, l, ks)
            pr = build_paired_ranks(samples[a], samples[b], ks[a], ks[b])
            lo, hi = 1.0 / pr.k_pair, float(pr.k_pair)
            u = min(max(ks[a] / ks[b], lo), hi)
            v = min(max(n[a] / n[b], lo), hi)
            out[j, l] = out[l, j] = empirical_tail_copula(pr, u, v)
    return out
