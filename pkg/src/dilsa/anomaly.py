"""Expectation-based Poisson scan scoring.

Scalar routines (`llr`, `poisson_cdf`, `poisson_sf`, `is_significant`) are
the reference path. `window_significance` is the vectorized path used over
whole count cubes; it relies on a critical-baseline table and rechecks any
value that lands near the table boundary with the scalar test.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

DEFAULT_ALPHA = 0.001
DEFAULT_BASELINE_FLOOR = 1.0

# terms below this fraction of the largest one no longer change a float64 sum
_TAIL_REL = 1e-18


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


_SERIES_CUTOFF = 0.1
_SERIES_TERMS = np.arange(2, 22)
_SERIES_COEF = (-1.0) ** _SERIES_TERMS / (_SERIES_TERMS * (_SERIES_TERMS - 1.0))


def _excess(x: np.ndarray) -> np.ndarray:
    """(1 + x) log(1 + x) - x for x > 0 without cancellation near 0."""
    x = np.asarray(x, dtype=np.float64)
    small = x < _SERIES_CUTOFF
    out = np.empty_like(x)
    xs = x[small]
    out[small] = (xs[..., None] ** _SERIES_TERMS * _SERIES_COEF).sum(axis=-1)
    xl = x[~small]
    out[~small] = (1.0 + xl) * np.log1p(xl) - xl
    return out


def llr(count: float, baseline: float) -> float:
    """Expectation-based Poisson log-likelihood ratio of `count` vs `baseline`.

    c log(c / b) + b - c, zero whenever the count does not exceed its
    expectation; evaluated as b * ((1 + x) log(1 + x) - x) with x = (c - b) / b.
    """
    if baseline <= 0:
        raise ValueError(f"baseline must be positive (floor it first), got {baseline}")
    if count < 0:
        raise ValueError(f"count must be non-negative, got {count}")
    if count <= baseline:
        return 0.0
    return float(baseline * _excess(np.array((count - baseline) / baseline)))


def llr_array(counts: np.ndarray, baselines: np.ndarray) -> np.ndarray:
    """Elementwise `llr`; baselines must already be floored (> 0)."""
    c = np.asarray(counts, dtype=np.float64)
    b = np.asarray(baselines, dtype=np.float64)
    if np.any(b <= 0):
        raise ValueError("baselines must be positive (floor them first)")
    out = np.zeros(np.broadcast(c, b).shape)
    hi = c > b
    cb = np.broadcast_to(c, out.shape)[hi]
    bb = np.broadcast_to(b, out.shape)[hi]
    out[hi] = bb * _excess((cb - bb) / bb)
    return out


def _log_pmf(i: int, lam: float) -> float:
    return -lam + i * math.log(lam) - math.lgamma(i + 1)


def poisson_cdf(k: int, lam: float) -> float:
    """P(X <= k) for X ~ Poisson(lam).

    Terms are generated by the ratio recurrence p[i+1] = p[i] * lam / (i+1),
    anchored at the largest included term so nothing over- or underflows,
    and summed with `math.fsum`.
    """
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    k = int(k)
    if k < 0:
        return 0.0
    anchor = min(k, int(math.floor(lam)))
    terms = [1.0]
    # downward from the anchor: p[i-1] = p[i] * i / lam
    t = 1.0
    for i in range(anchor, 0, -1):
        t *= i / lam
        if t < _TAIL_REL:
            break
        terms.append(t)
    # upward to k: p[i+1] = p[i] * lam / (i+1)
    t = 1.0
    for i in range(anchor, k):
        t *= lam / (i + 1)
        if t < _TAIL_REL and i + 1 > lam:
            break
        terms.append(t)
    value = math.exp(_log_pmf(anchor, lam)) * math.fsum(terms)
    return min(1.0, max(0.0, value))


def poisson_sf(k: int, lam: float) -> float:
    """P(X > k), summed directly over the upper tail when k is past the mode."""
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    k = int(k)
    if k < 0:
        return 1.0
    if k + 1 <= lam:
        return max(0.0, 1.0 - poisson_cdf(k, lam))
    first = k + 1
    terms = [1.0]
    t = 1.0
    i = first
    while True:
        t *= lam / (i + 1)
        if t < _TAIL_REL:
            break
        terms.append(t)
        i += 1
    return min(1.0, math.exp(_log_pmf(first, lam)) * math.fsum(terms))


def is_significant(count: int, baseline: float, alpha: float = DEFAULT_ALPHA) -> bool:
    """One-sided alpha-level test of `count` against Poisson(`baseline`).

    Requires both a positive LLR (count above baseline) and an upper-tail
    probability 1 - P(X <= count) no larger than alpha.
    """
    if baseline <= 0:
        raise ValueError(f"baseline must be positive, got {baseline}")
    if count <= baseline:
        return False
    return poisson_sf(int(count), baseline) <= alpha


def max_significant_baseline(count: int, alpha: float) -> float:
    """Largest baseline at which `count` is still significant (sf side only).

    P(X > count) grows with the Poisson mean, so the significant baselines for
    a fixed count form an interval (0, b*]. Found by bisection.
    """
    return _max_baseline_table(check_alpha(alpha), int(count) + 1)[int(count)]


@lru_cache(maxsize=16)
def _max_baseline_table(alpha: float, size: int) -> np.ndarray:
    out = np.empty(size)
    for c in range(size):
        lo, hi = 0.0, c + 1.0 + 10.0 * math.sqrt(c + 1.0) + 50.0
        if c == 0:
            out[c] = -math.log1p(-alpha)
            continue
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if poisson_sf(c, mid) <= alpha:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-13 * hi:
                break
        out[c] = lo
    return out


def baseline_table(alpha: float, max_count: int) -> np.ndarray:
    """Critical-baseline table for counts 0..max_count (grown in powers of two)."""
    size = 64
    while size <= max_count:
        size *= 2
    return _max_baseline_table(check_alpha(alpha), size)


def significance_array(
    counts: np.ndarray,
    baselines: np.ndarray,
    alpha: float = DEFAULT_ALPHA,
    baseline_floor: float = DEFAULT_BASELINE_FLOOR,
) -> np.ndarray:
    """Vectorized `is_significant` on aggregated (count, baseline) pairs.

    Pairs whose baseline is below `baseline_floor` are never significant.
    """
    c = np.asarray(counts)
    b = np.asarray(baselines, dtype=np.float64)
    ci = np.rint(c).astype(np.int64)
    if ci.size == 0:
        return np.zeros(ci.shape, dtype=bool)
    table = baseline_table(alpha, int(ci.max(initial=0)))
    bmax = table[np.clip(ci, 0, None)]
    eligible = (b >= baseline_floor) & (b > 0) & (ci > b)
    sig = eligible & (b <= bmax)
    # bisection leaves ~1e-13 relative slack; settle those with the exact test
    near = eligible & (np.abs(b - bmax) <= 1e-9 * np.maximum(bmax, 1.0))
    for idx in zip(*np.nonzero(near)):
        sig[idx] = is_significant(int(ci[idx]), float(b[idx]), alpha)
    return sig


def window_sums(values: np.ndarray, k: int) -> np.ndarray:
    """Sums over every length-k window along the last axis (window start index)."""
    values = np.asarray(values)
    cs = np.concatenate(
        [np.zeros(values.shape[:-1] + (1,), dtype=values.dtype), np.cumsum(values, axis=-1)], axis=-1
    )
    return cs[..., k:] - cs[..., :-k]


def window_significance(
    counts: np.ndarray,
    baselines: np.ndarray,
    k: int,
    alpha: float = DEFAULT_ALPHA,
    baseline_floor: float = DEFAULT_BASELINE_FLOOR,
) -> np.ndarray:
    """Significance of every length-k window along the time axis.

    Returns booleans of shape (..., T - k + 1) indexed by window start.
    Counts are summed exactly as integers; baselines are summed directly per
    window (not by cumulative-sum differencing) to avoid cancellation.
    """
    counts = np.asarray(counts, dtype=np.int64)
    baselines = np.asarray(baselines, dtype=np.float64)
    T = counts.shape[-1]
    if k < 1 or k > T:
        return np.zeros(counts.shape[:-1] + (max(T - k + 1, 0),), dtype=bool)
    csum = window_sums(counts, k)
    bsum = np.lib.stride_tricks.sliding_window_view(baselines, k, axis=-1).sum(axis=-1)
    return significance_array(csum, bsum, alpha, baseline_floor)


def llr_map(
    pickup_counts: np.ndarray,
    pickup_baselines: np.ndarray,
    start: int,
    stop: int,
    shape: tuple[int, int],
    baseline_floor: float = DEFAULT_BASELINE_FLOOR,
) -> np.ndarray:
    """Per-cell LLR of counts vs baselines aggregated over timesteps [start, stop).

    `pickup_counts`/`pickup_baselines` are (cells, T) arrays on a common time
    axis. Returns a (rows, cols) heat map.
    """
    if stop <= start:
        raise ValueError(f"empty period [{start}, {stop})")
    T = pickup_counts.shape[-1]
    if start < 0 or stop > T:
        raise ValueError(f"period [{start}, {stop}) outside cube of {T} timesteps")
    c = pickup_counts[:, start:stop].sum(axis=1)
    b = np.maximum(pickup_baselines[:, start:stop].sum(axis=1), baseline_floor)
    return llr_array(c, b).reshape(shape)
