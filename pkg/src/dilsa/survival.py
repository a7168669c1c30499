"""Ground-truth survival curves, hazards and event labels.

Window convention: a candidate sub-period of length ``k`` covers timesteps
``[t0, t0 + k - 1]`` (both ends inclusive), so labeled periods have lengths in
``[e_min, e_max]`` and a period may start exactly at the horizon end ``t_g``.
Survival curves hold ``S(t_c + 1) .. S(t_c + W)``; ``S(t_c) = 1`` is implicit.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .anomaly import DEFAULT_ALPHA, DEFAULT_BASELINE_FLOOR, check_alpha, is_significant, window_significance

SEARCH_ORDERS = ("longest_first", "shortest_first")
DEFAULT_EPS = 1e-6


@dataclass(frozen=True)
class EventWindowConfig:
    """Event-length limits, horizon and test level for survival labeling.

    `search_order` picks which significant sub-period wins: "longest_first"
    scans lengths from e_max down (the reference search order); "shortest_first"
    scans from e_min up. Within a length, earlier starts win either way.
    """

    e_min: int = 1
    e_max: int = 10
    horizon: int = 10
    alpha: float = DEFAULT_ALPHA
    baseline_floor: float = DEFAULT_BASELINE_FLOOR
    search_order: str = "shortest_first"

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("invalid EventWindowConfig: " + "; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if not 1 <= self.e_min <= self.e_max:
            out.append(f"need 1 <= e_min <= e_max (got {self.e_min}, {self.e_max})")
        if self.horizon < 1:
            out.append(f"horizon must be >= 1 (got {self.horizon})")
        try:
            check_alpha(self.alpha)
        except ValueError as err:
            out.append(str(err))
        if self.baseline_floor <= 0:
            out.append("baseline_floor must be positive")
        if self.search_order not in SEARCH_ORDERS:
            out.append(f"search_order must be one of {SEARCH_ORDERS}")
        return out

    def lengths(self) -> range:
        if self.search_order == "longest_first":
            return range(self.e_max, self.e_min - 1, -1)
        return range(self.e_min, self.e_max + 1)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EventLabel:
    """A dispersal event at one cell over timesteps [start, end)."""

    cell: int
    start: int
    end: int

    @property
    def t_e(self) -> int:
        return self.start

    @property
    def length(self) -> int:
        return self.end - self.start


def _check_history(T: int, t_c: int, cfg: EventWindowConfig) -> None:
    lo, hi = t_c - cfg.e_max, t_c + cfg.horizon
    if lo < 0 or hi > T - 1:
        raise ValueError(
            f"insufficient history for t_c={t_c}: need timesteps [{lo}, {hi}], cube covers [0, {T - 1}]"
        )


def first_window(counts: np.ndarray, baselines: np.ndarray, t_c: int, cfg: EventWindowConfig):
    """The winning significant sub-period (t0, t1) for one cell at t_c, or None.

    Straight transcription of the labeling scan: lengths in search order,
    starts ascending from t_c - e_max, first significant window that ends
    after t_c wins.
    """
    _check_history(len(counts), t_c, cfg)
    start, end = t_c - cfg.e_max, t_c + cfg.horizon
    for k in cfg.lengths():
        for t0 in range(start, end - k + 2):
            t1 = t0 + k - 1
            if t1 <= t_c:
                continue
            c = int(counts[t0 : t1 + 1].sum())
            b = float(baselines[t0 : t1 + 1].sum())
            if b < cfg.baseline_floor:
                continue
            if is_significant(c, b, cfg.alpha):
                return t0, t1
    return None


def curve_from_window(window, t_c: int, horizon: int) -> np.ndarray:
    curve = np.ones(horizon)
    if window is not None:
        z = max(window[0] - t_c, 1)
        curve[z - 1 :] = 0.0
    return curve


def get_st(counts: np.ndarray, baselines: np.ndarray, t_c: int, cfg: EventWindowConfig) -> np.ndarray:
    """Ground-truth survival curve S(t_c+1..t_c+W) for one cell's series."""
    return curve_from_window(first_window(counts, baselines, t_c, cfg), t_c, cfg.horizon)


def get_st_cube(cube, cell: int, t_c: int, cfg: EventWindowConfig) -> np.ndarray:
    base = cube.pickup_baseline_series()[cell]
    return get_st(cube.pickup_counts[cell], base, t_c, cfg)


def monotone(curve: np.ndarray) -> np.ndarray:
    """Running minimum along the last axis (non-increasing survival)."""
    return np.minimum.accumulate(np.asarray(curve, dtype=np.float64), axis=-1)


def hazard(curve: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Discrete hazard (S(t-1) - S(t)) / max(S(t), eps) with S(0) = 1.

    Works on a single curve or a batch along the last axis; the curve is made
    monotone first.
    """
    s = monotone(curve)
    prev = np.concatenate([np.ones(s.shape[:-1] + (1,)), s[..., :-1]], axis=-1)
    return (prev - s) / np.maximum(s, eps)


def survival_from_hazard(h: np.ndarray) -> np.ndarray:
    s = np.empty_like(np.asarray(h, dtype=np.float64))
    prev = np.ones(s.shape[:-1])
    for j in range(s.shape[-1]):
        prev = prev / (1.0 + h[..., j])
        s[..., j] = prev
    return s


@dataclass
class SurvivalLabels:
    """Vectorized labeling result over a block of issue times.

    `t0`/`k` describe the winning window per (cell, t_c) (-1 where none);
    `first_zero` is the 1-based curve offset of the first zero, horizon + 1
    where the curve is all ones.
    """

    times: np.ndarray
    t0: np.ndarray
    k: np.ndarray
    first_zero: np.ndarray
    horizon: int

    def curves(self) -> np.ndarray:
        offsets = np.arange(1, self.horizon + 1)
        return (offsets[None, None, :] < self.first_zero[..., None]).astype(np.float64)


def valid_issue_range(n_steps: int, cfg: EventWindowConfig) -> tuple[int, int]:
    """Issue times [lo, hi) for which a full labeling scan fits in the cube."""
    return cfg.e_max, n_steps - cfg.horizon


def survival_labels(
    counts: np.ndarray, baselines: np.ndarray, cfg: EventWindowConfig, t_lo: int, t_hi: int
) -> SurvivalLabels:
    """`first_window` for every cell and every t_c in [t_lo, t_hi), vectorized.

    For each length the first significant start at or after each position is
    precomputed, turning the per-t_c scan into array lookups.
    """
    counts = np.atleast_2d(counts)
    baselines = np.atleast_2d(baselines)
    n_cells, T = counts.shape
    lo, hi = valid_issue_range(T, cfg)
    if t_lo < lo or t_hi > hi:
        raise ValueError(f"issue times [{t_lo}, {t_hi}) need history; valid range is [{lo}, {hi})")
    times = np.arange(t_lo, t_hi)
    W = cfg.horizon
    t0 = np.full((n_cells, len(times)), -1, dtype=np.int64)
    kk = np.full((n_cells, len(times)), -1, dtype=np.int64)
    found = np.zeros((n_cells, len(times)), dtype=bool)
    big = np.iinfo(np.int64).max
    for k in cfg.lengths():
        sig = window_significance(counts, baselines, k, cfg.alpha, cfg.baseline_floor)
        n_pos = sig.shape[1]
        idx = np.where(sig, np.arange(n_pos)[None, :], big)
        nxt = np.minimum.accumulate(idx[:, ::-1], axis=1)[:, ::-1]
        first = nxt[:, times - k + 2]  # window must end after t_c
        hit = (first <= (times + W - k + 1)[None, :]) & ~found
        t0[hit] = first[hit]
        kk[hit] = k
        found |= hit
    first_zero = np.full(t0.shape, W + 1, dtype=np.int64)
    first_zero[found] = np.maximum(t0 - times[None, :], 1)[found]
    return SurvivalLabels(times, t0, kk, first_zero, W)


def label_events(
    counts: np.ndarray,
    baselines: np.ndarray,
    cfg: EventWindowConfig,
    t_lo: int | None = None,
    t_hi: int | None = None,
) -> list[EventLabel]:
    """Event list from the labeling scan run at every issue time in [t_lo, t_hi).

    Each detection contributes its winning window; per cell, windows that
    overlap or touch form one chain, i.e. one event starting at the chain's
    first timestep. The reported period is capped at e_max steps. Labels are
    ordered by cell, then start.
    """
    counts = np.atleast_2d(counts)
    lo, hi = valid_issue_range(counts.shape[1], cfg)
    t_lo = lo if t_lo is None else max(t_lo, lo)
    t_hi = hi if t_hi is None else min(t_hi, hi)
    if t_hi <= t_lo:
        return []
    lab = survival_labels(counts, baselines, cfg, t_lo, t_hi)
    out: list[EventLabel] = []
    for cell in range(counts.shape[0]):
        hits = lab.t0[cell] >= 0
        if not hits.any():
            continue
        windows = sorted(set(zip(lab.t0[cell][hits].tolist(), (lab.t0[cell] + lab.k[cell])[hits].tolist())))
        cur_s, cur_e = windows[0]
        for s, e in windows[1:]:
            if s <= cur_e:
                cur_e = max(cur_e, e)
            else:
                out.append(EventLabel(cell, cur_s, min(cur_e, cur_s + cfg.e_max)))
                cur_s, cur_e = s, e
        out.append(EventLabel(cell, cur_s, min(cur_e, cur_s + cfg.e_max)))
    return out
