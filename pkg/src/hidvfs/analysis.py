"""Per-epoch metrics, convergence detection, rank statistics and multi-seed
aggregation."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class EpochMetrics:
    """One harness record per epoch."""

    epoch: int
    phase: str
    makespan_s: float
    energy_j: float
    temp_avg_c: float
    temp_max_c: float
    branch_misses: int
    cache_misses: int
    freq_level: int
    core_count: int
    r_profiler: float
    r_thermal: float
    r_priority: float
    shaped_profiler: float | None = None
    shaped_thermal: float | None = None
    shaped_priority: float | None = None


def lastk_avg(series: Sequence[float], k: int) -> float:
    """Arithmetic mean of the final k entries."""
    if k < 1 or len(series) < k:
        raise ValueError(f"need a series of at least k={k} entries")
    tail = series[len(series) - k :]
    return sum(tail) / k


def hf_rate(levels: Sequence[int], threshold: int = 9) -> float:
    """Percentage of entries at or above the high-frequency threshold."""
    if not levels:
        raise ValueError("empty level series")
    return 100.0 * sum(1 for lv in levels if lv >= threshold) / len(levels)


def convergence_epoch(
    makespans: Sequence[float], window: int = 10, baseline_epochs: int = 5, frac: float = 0.15
) -> int:
    """First epoch whose following window varies by less than ``frac`` of the
    initial-baseline mean; the total epoch count encodes "never converged"."""
    n = len(makespans)
    if n < baseline_epochs + window:
        raise ValueError(f"need at least {baseline_epochs + window} epochs")
    baseline = sum(makespans[:baseline_epochs]) / baseline_epochs
    threshold = frac * baseline
    for e in range(n - window + 1):
        win = makespans[e : e + window]
        if max(win) - min(win) < threshold:
            return e
    return n


def _rank_with_midranks(pooled: Sequence[float]) -> list[float]:
    order = sorted(range(len(pooled)), key=lambda i: pooled[i])
    ranks = [0.0] * len(pooled)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and pooled[order[j + 1]] == pooled[order[i]]:
            j += 1
        mid = (i + j) / 2.0 + 1.0
        for t in range(i, j + 1):
            ranks[order[t]] = mid
        i = j + 1
    return ranks


def _u_statistic(a_vals: Sequence[float], b_vals: Sequence[float]) -> float:
    pooled = list(a_vals) + list(b_vals)
    ranks = _rank_with_midranks(pooled)
    r1 = sum(ranks[: len(a_vals)])
    return r1 - len(a_vals) * (len(a_vals) + 1) / 2.0


def mann_whitney_u(
    a: Sequence[float], b: Sequence[float], exact_limit: int = 12
) -> tuple[float, float]:
    """Mann-Whitney U (for sample ``a``) and two-sided p-value.

    Exact p by enumerating all assignments when the pooled size is at most
    ``exact_limit``; otherwise the normal approximation with tie correction
    and continuity correction.
    """
    if not a or not b:
        raise ValueError("both samples must be nonempty")
    n1, n2 = len(a), len(b)
    u = _u_statistic(a, b)
    if n1 + n2 <= exact_limit:
        pooled = list(a) + list(b)
        n = len(pooled)
        le = ge = total = 0
        for positions in itertools.combinations(range(n), n1):
            sel = set(positions)
            ua = _u_statistic(
                [pooled[i] for i in range(n) if i in sel],
                [pooled[i] for i in range(n) if i not in sel],
            )
            total += 1
            if ua <= u + 1e-12:
                le += 1
            if ua >= u - 1e-12:
                ge += 1
        p = min(1.0, 2.0 * min(le, ge) / total)
        return u, p
    # normal approximation
    pooled = list(a) + list(b)
    n = n1 + n2
    counts: dict[float, int] = {}
    for v in pooled:
        counts[v] = counts.get(v, 0) + 1
    tie_term = sum(c**3 - c for c in counts.values())
    sigma_sq = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if sigma_sq <= 0:
        return u, 1.0
    mean_u = n1 * n2 / 2.0
    z = (abs(u - mean_u) - 0.5) / math.sqrt(sigma_sq)
    z = max(z, 0.0)
    p = min(1.0, math.erfc(z / math.sqrt(2.0)))
    return u, p


def aggregate_seeds(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample (n-1) standard deviation across seeds."""
    n = len(values)
    if n < 2:
        raise ValueError("need at least two seeds to aggregate")
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var)
