"""Two-stage event prediction: anomaly profile -> survival curve -> hazard alarm -> demand.

Curves hold Ŝ(t_c + 1) .. Ŝ(t_c + W). An alarm at scan index i (1 <= i < W)
predicts an event starting at t_c + i; its flag vector has entry j for
timestep t_c + j and is 1 for j in [i, W).
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .estimators import Estimator
from .features import FeatureContext
from .survival import DEFAULT_EPS, hazard, monotone

log = logging.getLogger(__name__)

NO_DEMAND = -1.0


@dataclass(frozen=True)
class PredictorConfig:
    gamma: float = 2.95
    sigma: float = 0.1
    eps: float = DEFAULT_EPS
    burn_in: int = 48

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("invalid PredictorConfig: " + "; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if not self.gamma > 0:
            out.append(f"gamma must be > 0 (got {self.gamma})")
        if not 0 < self.sigma < 1:
            out.append(f"sigma must lie in (0, 1) (got {self.sigma})")
        if not self.eps > 0:
            out.append("eps must be > 0")
        if self.burn_in < 0:
            out.append("burn_in must be >= 0")
        return out

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EventPrediction:
    cell: int
    issued_at: int
    predicted_start: int | None
    flags: np.ndarray
    demand: np.ndarray
    hazard: np.ndarray
    survival: np.ndarray
    reason: str | None = None

    @property
    def flagged(self) -> bool:
        return self.predicted_start is not None

    @property
    def end(self) -> int:
        return self.issued_at + len(self.flags)


# -- alarm rules on curves ------------------------------------------------------


def hazard_alarm(curves: np.ndarray, gamma: float, eps: float = DEFAULT_EPS) -> np.ndarray:
    """First scan index i in [1, W) with hazard H(i) >= gamma, 0 where none.

    Accepts one curve (W,) or a batch (..., W).
    """
    h = hazard(curves, eps)[..., :-1]
    hit = h >= gamma
    return np.where(hit.any(axis=-1), hit.argmax(axis=-1) + 1, 0)


def dil_alarm(curves: np.ndarray, sigma: float) -> np.ndarray:
    """First scan index i in [1, W) with Ŝ(i) < sigma, 0 where none."""
    hit = np.asarray(curves)[..., :-1] < sigma
    return np.where(hit.any(axis=-1), hit.argmax(axis=-1) + 1, 0)


def flags_for(i: int, horizon: int) -> np.ndarray:
    f = np.zeros(horizon, dtype=np.int8)
    if i:
        f[i:] = 1
    return f


def alarm_indices(curves: np.ndarray, mode: str, threshold: float, eps: float = DEFAULT_EPS) -> np.ndarray:
    if mode == "dilsa":
        return hazard_alarm(curves, threshold, eps)
    if mode == "dil":
        return dil_alarm(curves, threshold)
    raise ValueError(f"unknown predictor mode {mode!r}")


# -- f_e warm-up ----------------------------------------------------------------


def warmup_times(t_c: int, i: int, horizon: int) -> np.ndarray:
    """Issue times replayed through the demand model before predicting at t_c."""
    return np.arange(t_c + i - horizon, t_c)


def warmup_fe(f_e: Estimator, replay: np.ndarray) -> Estimator:
    """Reset `f_e` and feed the replay inputs (L, D) in order, one stream."""
    f_e.reset_state()
    for x in np.asarray(replay):
        f_e.predict(x)
    return f_e


# -- streaming run over all cells -------------------------------------------------


@dataclass
class PredictionRun:
    """Streamed model outputs for every cell over issue times [t_lo, t_hi)."""

    t_lo: int
    t_hi: int
    stream_start: int
    curves: np.ndarray  # (cells, n_t, W) raw survival outputs
    anomaly: np.ndarray  # (cells, n_stream, W) predicted anomaly profiles
    s_now: np.ndarray  # (cells, n_stream) survival slot fed at each step
    xs_hist: np.ndarray  # (n_stream, cells, D) float32 survival inputs
    stats: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.t_lo, self.t_hi)


class DilsaPredictor:
    def __init__(self, ctx: FeatureContext, f_a: Estimator, f_s: Estimator, f_e: Estimator, cfg: PredictorConfig):
        self.ctx, self.f_a, self.f_s, self.f_e, self.cfg = ctx, f_a, f_s, f_e, cfg
        self.W = ctx.cfg.horizon

    def issue_range(self) -> tuple[int, int]:
        return self.ctx.cfg.tau, self.ctx.T - self.W

    def run(self, t_lo: int, t_hi: int) -> PredictionRun:
        """Stream f_a and f_s over [t_lo - burn_in, t_hi) for every cell."""
        lo, hi = self.issue_range()
        if t_hi <= t_lo:
            raise ValueError(f"empty prediction range [{t_lo}, {t_hi})")
        if t_lo < lo or t_hi > hi:
            raise ValueError(f"prediction range [{t_lo}, {t_hi}) outside the usable range [{lo}, {hi})")
        start = max(lo, t_lo - self.cfg.burn_in)
        ctx, W = self.ctx, self.W
        n = t_hi - start
        D = ctx.layout("xs").size
        anomaly = np.zeros((ctx.n_cells, n, W))
        s_hist = np.ones((ctx.n_cells, n))
        curves = np.zeros((ctx.n_cells, n, W))
        xs_hist = np.zeros((n, ctx.n_cells, D), dtype=np.float32)
        self.f_a.reset_state()
        self.f_s.reset_state()
        s_now = np.ones(ctx.n_cells)
        chunk = 128
        for a in range(0, n, chunk):
            times = np.arange(start + a, min(start + a + chunk, t_hi))
            xa = ctx.xa_block(times)
            for j, t in enumerate(times):
                k = a + j
                F = np.maximum(self.f_a.predict(xa[:, j]), 0.0)
                xs = ctx.xs_block(np.array([t]), F[:, None, :], s_now[:, None])[:, 0]
                S = self.f_s.predict(xs)
                anomaly[:, k], s_hist[:, k], curves[:, k], xs_hist[k] = F, s_now, S, xs
                s_now = monotone(S)[:, 0]
        off = t_lo - start
        return PredictionRun(t_lo, t_hi, start, curves[:, off:], anomaly, s_hist, xs_hist, {"burn_in": off})

    def forecast(self, run: PredictionRun, cells: np.ndarray, times: np.ndarray, idx: np.ndarray):
        """Demand forecasts for alarms (cells[k], times[k], scan index idx[k]).

        Alarms sharing a replay length are warmed up as one batch of streams.
        Returns (demand (n, W), cold flags (n,)).
        """
        W = self.W
        out = np.full((len(cells), W), NO_DEMAND)
        cold = np.zeros(len(cells), dtype=bool)
        for i in np.unique(idx):
            sel = np.flatnonzero(idx == i)
            first = times[sel] + i - W
            ok = first >= run.stream_start
            cold[sel[~ok]] = True
            for group, length in ((sel[ok], W - i + 1), (sel[~ok], None)):
                if len(group) == 0:
                    continue
                if length is None:
                    # replay window predates the stream: predict from a cold state
                    steps = np.zeros((len(group), 1), dtype=np.int64)
                    steps[:, 0] = times[group] - run.stream_start
                else:
                    steps = (times[group] - W + i - run.stream_start)[:, None] + np.arange(length)[None, :]
                X = run.xs_hist[steps, cells[group][:, None]]
                self.f_e.reset_state()
                pred = self.f_e.predict_sequence(X) if hasattr(self.f_e, "predict_sequence") else self.f_e.predict(X[:, -1])[:, None]
                out[group] = np.maximum(pred[:, -1], 0.0)
        self.f_e.reset_state()
        return out, cold

    def predictions(self, run: PredictionRun, mode: str = "dilsa", threshold: float | None = None) -> list[EventPrediction]:
        """Flagged predictions (one per alarm) ordered by issue time, then cell."""
        if threshold is None:
            threshold = self.cfg.gamma if mode == "dilsa" else self.cfg.sigma
        idx = alarm_indices(run.curves, mode, threshold, self.cfg.eps)
        cells, cols = np.nonzero(idx)
        order = np.lexsort((cells, cols))
        cells, cols = cells[order], cols[order]
        times = run.t_lo + cols
        ii = idx[cells, cols]
        demand, cold = self.forecast(run, cells, times, ii)
        H = hazard(run.curves[cells, cols], self.cfg.eps)
        out = []
        for k in range(len(cells)):
            out.append(
                EventPrediction(
                    int(cells[k]), int(times[k]), int(times[k] + ii[k]), flags_for(int(ii[k]), self.W),
                    demand[k], H[k], run.curves[cells[k], cols[k]], "cold_warmup" if cold[k] else None,
                )
            )
        run.stats["cold_warmups"] = int(cold.sum())
        return out


def predict_cell(
    ctx: FeatureContext,
    f_a: Estimator,
    f_s: Estimator,
    f_e: Estimator,
    cell: int,
    t_c: int,
    cfg: PredictorConfig,
    s_now: float = 1.0,
    history: dict | None = None,
) -> EventPrediction:
    """One step of the predictor for a single cell.

    `f_a` and `f_s` are single-stream models whose state the caller positions;
    `history` maps earlier issue times to the x_e rows to replay during
    warm-up (missing rows fall back to a cold demand state).
    """
    W = ctx.cfg.horizon
    empty = np.full(W, NO_DEMAND)
    if t_c < ctx.cfg.tau or t_c + W >= ctx.T:
        return EventPrediction(cell, t_c, None, np.zeros(W, np.int8), empty, np.zeros(W), np.ones(W), "no_history")
    F = np.maximum(f_a.predict(ctx.xa_block(np.array([t_c]))[cell, 0]), 0.0)
    Fall = np.zeros((ctx.n_cells, 1, W))
    Fall[cell, 0] = F
    S_in = np.ones((ctx.n_cells, 1))
    S_in[cell, 0] = s_now
    xs = ctx.xs_block(np.array([t_c]), Fall, S_in)[cell, 0]
    S = f_s.predict(xs)
    H = hazard(S, cfg.eps)
    i = int(hazard_alarm(S, cfg.gamma, cfg.eps))
    if not i:
        return EventPrediction(cell, t_c, None, flags_for(0, W), empty, H, S)
    history = history or {}
    replay_t = warmup_times(t_c, i, W)
    reason = None
    if all(int(t) in history for t in replay_t):
        warmup_fe(f_e, np.array([history[int(t)] for t in replay_t]).reshape(len(replay_t), -1))
    else:
        f_e.reset_state()
        reason = "cold_warmup"
    demand = np.maximum(f_e.predict(xs), 0.0)
    return EventPrediction(cell, t_c, t_c + i, flags_for(i, W), demand, H, S, reason)
