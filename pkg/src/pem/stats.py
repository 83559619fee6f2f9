"""Nonparametric tests and the level-ranking procedure.

Mann-Whitney U uses midranks for ties; the two-sided p-value is exact (full
null enumeration via a subset-count recurrence) for tie-free samples of
combined size <= 12, otherwise a normal approximation with tie-corrected
variance and continuity correction. Spearman's rho is Pearson correlation
of midranks with a Student-t approximation for the p-value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from pem.errors import PemError

ALPHA = 0.05
EXACT_MAX_COMBINED = 12


class MannWhitneyResult(NamedTuple):
    u: float  # U statistic of the first sample
    p: float  # two-sided
    significant: bool


@dataclass
class CorrelationResult:
    rho: float
    p_value: float
    n: int


@dataclass
class RankResult:
    groups: list[str]  # labels in descending-median order
    notation: str  # e.g. "2>1,3" or "Inconclusive"
    pairwise: dict[tuple[str, str], MannWhitneyResult]


def midranks(values) -> np.ndarray:
    """Ranks starting at 1; tied values share the mean of their ranks."""
    v = np.asarray(values, dtype=np.float64)
    n = len(v)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(n)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


@lru_cache(maxsize=None)
def _rank_sum_counts(n1: int, n2: int) -> tuple[int, ...]:
    """counts[u] = number of n1-subsets of ranks 1..n1+n2 with U statistic u.

    Recurrence over whether the largest rank joins the first sample:
    joining adds n2 to U (it beats every remaining second-sample rank).
    """
    if n1 == 0:
        return (1,)
    if n2 == 0:
        return (1,)
    with_it = _rank_sum_counts(n1 - 1, n2)
    without = _rank_sum_counts(n1, n2 - 1)
    out = [0] * (n1 * n2 + 1)
    for u, c in enumerate(with_it):
        out[u + n2] += c
    for u, c in enumerate(without):
        out[u] += c
    return tuple(out)


def _exact_two_sided_p(u: float, n1: int, n2: int) -> float:
    counts = _rank_sum_counts(n1, n2)
    total = sum(counts)
    u_min = min(u, n1 * n2 - u)
    low = sum(c for uu, c in enumerate(counts) if uu <= u_min)
    high = sum(c for uu, c in enumerate(counts) if uu >= n1 * n2 - u_min)
    return min(1.0, (low + high) / total)


def _normal_two_sided_p(u: float, ranks: np.ndarray, n1: int, n2: int) -> float:
    n = n1 + n2
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(tie_counts.astype(np.float64) ** 3 - tie_counts))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0:
        return 1.0
    z = (abs(u - n1 * n2 / 2.0) - 0.5) / math.sqrt(var)
    z = max(z, 0.0)  # continuity correction cannot flip the sign
    return math.erfc(z / math.sqrt(2.0))


def mann_whitney_u(a, b) -> MannWhitneyResult:
    """Two-sided Mann-Whitney U test; U is reported for the first sample."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n1, n2 = len(a), len(b)
    if n1 == 0 or n2 == 0:
        raise PemError("empty sample")
    ranks = midranks(np.concatenate([a, b]))
    r1 = float(ranks[:n1].sum())
    u = r1 - n1 * (n1 + 1) / 2.0
    has_ties = len(np.unique(np.concatenate([a, b]))) < n1 + n2
    if n1 + n2 <= EXACT_MAX_COMBINED and not has_ties:
        p = _exact_two_sided_p(u, n1, n2)
    else:
        p = _normal_two_sided_p(u, ranks, n1, n2)
    return MannWhitneyResult(u, p, p < ALPHA)


def spearman_rho(x, y) -> CorrelationResult:
    """Spearman rank correlation with a t-approximation p-value.

    rho = +-1 is reported with p = 0; a constant series has no defined
    rank correlation and raises.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y):
        raise PemError(f"length mismatch: {len(x)} vs {len(y)}")
    n = len(x)
    if n < 3:
        raise PemError("need at least 3 paired observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise PemError("undefined correlation")
    rx, ry = midranks(x), midranks(y)
    dx, dy = rx - rx.mean(), ry - ry.mean()
    rho = float((dx @ dy) / math.sqrt((dx @ dx) * (dy @ dy)))
    rho = max(-1.0, min(1.0, rho))
    if abs(rho) == 1.0:
        return CorrelationResult(rho, 0.0, n)
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    from scipy.special import stdtr

    p = 2.0 * float(stdtr(n - 2, -abs(t)))
    return CorrelationResult(rho, min(1.0, p), n)


def _natural_key(label: str):
    try:
        return (0, float(label), label)
    except ValueError:
        return (1, 0.0, label)


def rank_levels(per_group_samples: Mapping[str, Sequence[float]]) -> RankResult:
    """Rank groups by pairwise significance into the paper-style notation.

    Groups are ordered by descending median, adjacent groups merge into a
    comma-cluster when their pairwise test is not significant, and the
    clustered chain is emitted only when every cross-cluster pair is
    significant in the median-consistent direction; any inconsistency
    yields "Inconclusive".
    """
    labels = list(per_group_samples)
    if len(labels) < 2:
        raise PemError("need at least 2 groups")
    samples = {lab: np.asarray(per_group_samples[lab], dtype=np.float64) for lab in labels}
    medians = {lab: float(np.median(samples[lab])) for lab in labels}
    ordered = sorted(labels, key=lambda lab: (-medians[lab], _natural_key(lab)))

    pairwise: dict[tuple[str, str], MannWhitneyResult] = {}

    def test(a: str, b: str) -> MannWhitneyResult:
        if (a, b) not in pairwise:
            res = mann_whitney_u(samples[a], samples[b])
            pairwise[(a, b)] = res
            pairwise[(b, a)] = MannWhitneyResult(
                len(samples[a]) * len(samples[b]) - res.u, res.p, res.significant
            )
        return pairwise[(a, b)]

    clusters: list[list[str]] = [[ordered[0]]]
    for prev, cur in zip(ordered, ordered[1:]):
        if test(prev, cur).significant:
            clusters.append([cur])
        else:
            clusters[-1].append(cur)

    consistent = True
    for ci, cluster in enumerate(clusters):
        for i, a in enumerate(cluster):
            for b in cluster[i + 1 :]:
                if test(a, b).significant:
                    consistent = False
        for other in clusters[ci + 1 :]:
            for a in cluster:
                for b in other:
                    res = test(a, b)
                    higher = medians[a] > medians[b] and res.u > len(samples[a]) * len(samples[b]) / 2.0
                    if not (res.significant and higher):
                        consistent = False

    if consistent:
        notation = ">".join(
            ",".join(sorted(cluster, key=_natural_key)) for cluster in clusters
        )
    else:
        notation = "Inconclusive"
    return RankResult(ordered, notation, pairwise)
