"""Fitness error and rank-based significance testing.

Provides the root-mean-square error used as simulation fitness and a
one-tailed Mann-Whitney U test for comparing fitness samples between
experiment arms. The U test switches between an exact null distribution
(small samples, no cross-group ties) and a tie-corrected normal
approximation with continuity correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .validation import check_same_length, check_vector

__all__ = [
    "rmse",
    "MannWhitneyResult",
    "mann_whitney_one_tailed",
    "PairwiseResult",
    "pairwise_matrix",
    "EXACT_PAIR_LIMIT",
]

# Exact enumeration is used when n_a * n_b is at or below this bound and the
# two samples share no value; beyond it the normal approximation takes over.
EXACT_PAIR_LIMIT = 400


def rmse(predicted, target) -> float:
    """Root-mean-square error between two equal-length series."""
    p = check_vector(predicted, "predicted")
    t = check_vector(target, "target")
    check_same_length(p, t, "predicted, target")
    diff = p - t
    return float(np.sqrt(np.mean(diff * diff)))


@dataclass(frozen=True)
class MannWhitneyResult:
    """Outcome of a one-tailed Mann-Whitney U test.

    ``u_statistic`` is U for the first sample: the number of (a, b) pairs
    with a > b, counting ties as half.
    """

    u_statistic: float
    p_value: float
    n_a: int
    n_b: int
    method: str  # "exact" or "normal"
    alternative: str  # "less" or "greater"


def _midranks(values: np.ndarray) -> np.ndarray:
    """Ranks starting at 1, ties sharing the mean of their rank span."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    n = len(values)
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        # positions i..j (0-based) share ranks i+1..j+1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _exact_u_counts(n: int, m: int) -> list[int]:
    """Count rank arrangements by U value for sample sizes (n, m).

    ``counts[u]`` is the number of ways to interleave n distinct "a" values
    with m distinct "b" values such that exactly u of the n*m cross pairs
    have a > b. Built by the standard recurrence on the largest remaining
    value: if it belongs to the "a" sample it exceeds all m "b" values
    (u drops by m), otherwise it contributes nothing.
    """
    # table[j] holds counts over u for the current i, built up over i = 0..n
    max_u = n * m
    prev = [[0] * (max_u + 1) for _ in range(m + 1)]
    for j in range(m + 1):
        prev[j][0] = 1
    for _i in range(1, n + 1):
        cur = [[0] * (max_u + 1) for _ in range(m + 1)]
        for j in range(m + 1):
            for u in range(max_u + 1):
                total = prev[j][u - j] if u >= j else 0
                if j > 0:
                    total += cur[j - 1][u]
                cur[j][u] = total
        prev = cur
    return prev[m]


def _normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def mann_whitney_one_tailed(a, b, alternative: str = "less") -> MannWhitneyResult:
    """One-tailed Mann-Whitney U test on two independent samples.

    ``alternative="less"`` tests whether values in ``a`` tend to be smaller
    than values in ``b``; ``"greater"`` tests the opposite direction. Exact
    p-values are computed when the product of sample sizes is small enough
    and no value appears in both samples; otherwise a normal approximation
    with tie correction and continuity correction is used. Identical
    constant samples yield p = 1.0.
    """
    if alternative not in ("less", "greater"):
        raise ValueError(f"alternative must be 'less' or 'greater', got {alternative!r}")
    xa = check_vector(a, "a")
    xb = check_vector(b, "b")
    n_a, n_b = len(xa), len(xb)

    combined = np.concatenate([xa, xb])
    ranks = _midranks(combined)
    r_a = float(np.sum(ranks[:n_a]))
    u_a = r_a - n_a * (n_a + 1) / 2.0

    cross_ties = bool(np.intersect1d(np.unique(xa), np.unique(xb)).size)
    if n_a * n_b <= EXACT_PAIR_LIMIT and not cross_ties:
        counts = _exact_u_counts(n_a, n_b)
        total = sum(counts)
        u_int = int(round(u_a))
        if alternative == "less":
            tail = sum(counts[: u_int + 1])
        else:
            tail = sum(counts[u_int:])
        p = tail / total
        return MannWhitneyResult(u_a, float(p), n_a, n_b, "exact", alternative)

    n = n_a + n_b
    mu = n_a * n_b / 2.0
    _, tie_counts = np.unique(combined, return_counts=True)
    tie_term = float(np.sum(tie_counts.astype(np.float64) ** 3 - tie_counts))
    sigma2 = n_a * n_b / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if sigma2 <= 0.0:
        # all observations identical: no evidence in either direction
        return MannWhitneyResult(u_a, 1.0, n_a, n_b, "normal", alternative)
    sigma = math.sqrt(sigma2)
    if alternative == "less":
        z = (u_a + 0.5 - mu) / sigma
        p = _normal_cdf(z)
    else:
        z = (u_a - 0.5 - mu) / sigma
        p = 1.0 - _normal_cdf(z)
    p = min(1.0, max(0.0, p))
    return MannWhitneyResult(u_a, p, n_a, n_b, "normal", alternative)


@dataclass(frozen=True)
class PairwiseResult:
    """All-pairs one-tailed comparisons between labeled samples."""

    labels: tuple[str, ...]
    p_values: np.ndarray  # [i, j] = p for alternative applied to (i, j)
    significant: np.ndarray  # p < alpha, diagonal False
    alternative: str
    alpha: float


def pairwise_matrix(groups, alternative: str = "less", alpha: float = 0.05) -> PairwiseResult:
    """Run ``mann_whitney_one_tailed`` for every ordered pair of groups.

    ``groups`` maps label -> sample (dict or sequence of pairs). Entry
    [i, j] of the result tests group i against group j under
    ``alternative``. Diagonal entries are NaN and never significant.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    items = list(groups.items()) if isinstance(groups, dict) else list(groups)
    if len(items) < 2:
        raise ValueError("pairwise_matrix needs at least two groups")
    labels = tuple(str(k) for k, _ in items)
    if len(set(labels)) != len(labels):
        raise ValueError("group labels must be unique")
    samples = [check_vector(v, f"group {k!r}") for k, v in items]

    k = len(samples)
    p = np.full((k, k), np.nan)
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            p[i, j] = mann_whitney_one_tailed(samples[i], samples[j], alternative).p_value
    sig = np.zeros((k, k), dtype=bool)
    off = ~np.eye(k, dtype=bool)
    sig[off] = p[off] < alpha
    return PairwiseResult(labels, p, sig, alternative, alpha)
