"""Event matching, timing and demand metrics, threshold tuning.

Periods are half-open [start, end); adjacency is not overlap. Per-step alarms
at a cell are merged into predicted events by chaining overlapping predicted
periods; a chain starts where its first alarm said it would.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .predictor import EventPrediction, alarm_indices
from .survival import EventLabel, hazard, monotone


@dataclass(frozen=True)
class PredictedEvent:
    cell: int
    start: int
    end: int
    issued_at: int
    members: tuple = ()  # indices into the alarm list


def merge_alarms(alarms: list) -> list[PredictedEvent]:
    """Chain each cell's alarms whose predicted periods overlap, in issue order."""
    by_cell: dict[int, list[int]] = {}
    for k, a in enumerate(alarms):
        if a.predicted_start is not None:
            by_cell.setdefault(a.cell, []).append(k)
    out = []
    for cell in sorted(by_cell):
        ks = sorted(by_cell[cell], key=lambda k: (alarms[k].issued_at, alarms[k].predicted_start))
        cur = None
        for k in ks:
            a = alarms[k]
            if cur is not None and a.predicted_start < cur[1]:
                cur[1] = max(cur[1], a.end)
                cur[3].append(k)
            else:
                if cur is not None:
                    out.append(PredictedEvent(cell, cur[0], cur[1], cur[2], tuple(cur[3])))
                cur = [a.predicted_start, a.end, a.issued_at, [k]]
        out.append(PredictedEvent(cell, cur[0], cur[1], cur[2], tuple(cur[3])))
    return sorted(out, key=lambda e: (e.issued_at, e.cell, e.start))


def overlaps(a_start: int, a_end: int, b_start: int, b_end: int) -> bool:
    return a_start < b_end and b_start < a_end


@dataclass
class MatchResult:
    tp: int
    fp: int
    fn: int
    pairs: list  # (prediction index, label index)


def match_events(predictions: list, labels: list) -> MatchResult:
    """One-to-one overlap matching; earlier-issued predictions choose first.

    Predictions need cell/start/end/issued_at attributes (a PredictedEvent or
    similar); labels need cell/start/end. A prediction takes the earliest
    unmatched overlapping label at its cell.
    """
    free: dict[int, list[int]] = {}
    for j, lab in enumerate(labels):
        free.setdefault(lab.cell, []).append(j)
    for js in free.values():
        js.sort(key=lambda j: (labels[j].start, labels[j].end))
    order = sorted(range(len(predictions)), key=lambda k: (predictions[k].issued_at, k))
    pairs = []
    for k in order:
        p = predictions[k]
        for j in free.get(p.cell, []):
            lab = labels[j]
            if overlaps(p.start, p.end, lab.start, lab.end):
                pairs.append((k, j))
                free[p.cell].remove(j)
                break
    tp = len(pairs)
    return MatchResult(tp, len(predictions) - tp, len(labels) - tp, sorted(pairs))


def precision_recall_f1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def time_error(predicted_starts, true_starts, timestep_minutes: float) -> float | None:
    """Mean absolute start offset in minutes; None without matched pairs."""
    a = np.asarray(predicted_starts, dtype=np.float64)
    b = np.asarray(true_starts, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("start lists differ in length")
    if a.size == 0:
        return None
    return float(np.abs(a - b).mean() * timestep_minutes)


@dataclass
class DemandErrors:
    mae: float
    mape: float | None
    rmse: float
    mae_steps: np.ndarray
    mape_steps: np.ndarray
    rmse_steps: np.ndarray
    mape_excluded: int
    n: int


def demand_errors(predicted, actual) -> DemandErrors:
    """MAE, MAPE (zero actuals excluded and counted) and RMSE, per step and overall.

    Inputs are (n, W) or (W,) arrays of aligned forecasts and observations.
    """
    p = np.atleast_2d(np.asarray(predicted, dtype=np.float64))
    y = np.atleast_2d(np.asarray(actual, dtype=np.float64))
    if p.shape != y.shape:
        raise ValueError(f"forecast shape {p.shape} does not match actual shape {y.shape}")
    if p.size == 0:
        W = p.shape[1] if p.ndim == 2 else 0
        nan = np.full(W, np.nan)
        return DemandErrors(float("nan"), None, float("nan"), nan, nan, nan, 0, 0)
    err = p - y
    ok = y > 0
    rel = np.where(ok, np.abs(err) / np.where(ok, y, 1.0), 0.0)
    cnt = ok.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mape_steps = np.where(cnt > 0, rel.sum(axis=0) / np.maximum(cnt, 1), np.nan)
    return DemandErrors(
        float(np.abs(err).mean()),
        float(rel.sum() / ok.sum()) if ok.any() else None,
        float(np.sqrt((err * err).mean())),
        np.abs(err).mean(axis=0),
        mape_steps,
        np.sqrt((err * err).mean(axis=0)),
        int((~ok).sum()),
        int(p.shape[0]),
    )


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    time_error_minutes: float | None
    demand: DemandErrors | None = None
    baseline_demand: DemandErrors | None = None
    extra: dict = field(default_factory=dict)

    def scalars(self) -> dict:
        out = {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "time_error_minutes": self.time_error_minutes,
        }
        for name, d in (("demand", self.demand), ("baseline", self.baseline_demand)):
            if d is not None:
                out.update({f"{name}_mae": d.mae, f"{name}_mape": d.mape, f"{name}_rmse": d.rmse,
                            f"{name}_mape_excluded": d.mape_excluded, f"{name}_n": d.n})
        out.update(self.extra)
        return out

    def table(self) -> str:
        lines = []
        for k, v in self.scalars().items():
            if isinstance(v, float):
                v = f"{v:.4f}" if math.isfinite(v) else "nan"
            lines.append(f"{k:<24} {'-' if v is None else v}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in self.scalars().items():
            w.writerow([k, "" if v is None else (repr(v) if isinstance(v, float) else v)])
        return buf.getvalue()

    def steps_csv(self) -> str:
        """Per-horizon-step demand errors (forecast and target-profile baseline)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "mae", "mape", "rmse", "baseline_mae", "baseline_mape", "baseline_rmse"])
        if self.demand is None:
            return buf.getvalue()
        b = self.baseline_demand
        for j in range(len(self.demand.mae_steps)):
            row = [j + 1, self.demand.mae_steps[j], self.demand.mape_steps[j], self.demand.rmse_steps[j]]
            row += [b.mae_steps[j], b.mape_steps[j], b.rmse_steps[j]] if b is not None else ["", "", ""]
            w.writerow([row[0]] + [repr(float(x)) if x != "" else "" for x in row[1:]])
        return buf.getvalue()


def in_range(events, lo: int, hi: int) -> list:
    return [e for e in events if lo <= e.start < hi]


def evaluate(
    alarms: list,
    labels: list[EventLabel],
    lo: int,
    hi: int,
    timestep_minutes: float,
    actual_counts: np.ndarray | None = None,
    baselines: np.ndarray | None = None,
) -> EvalReport:
    """Score per-step alarms against labels whose start lies in [lo, hi).

    With `actual_counts`/`baselines` (cells, T) the demand forecasts of every
    alarm inside a matched event are compared with observed pickups over
    (t_c, t_c + W], alongside the target-profile baseline forecast.
    """
    events = in_range(merge_alarms(alarms), lo, hi)
    truth = in_range(labels, lo, hi)
    m = match_events(events, truth)
    p, r, f = precision_recall_f1(m.tp, m.fp, m.fn)
    te = time_error([events[k].start for k, _ in m.pairs], [truth[j].start for _, j in m.pairs], timestep_minutes)
    report = EvalReport(p, r, f, m.tp, m.fp, m.fn, te)
    if actual_counts is not None:
        members = [a for k, _ in m.pairs for a in events[k].members]
        preds, obs, base = [], [], []
        for a in members:
            al = alarms[a]
            W = len(al.flags)
            sl = slice(al.issued_at + 1, al.issued_at + W + 1)
            preds.append(al.demand)
            obs.append(actual_counts[al.cell, sl])
            if baselines is not None:
                base.append(baselines[al.cell, sl])
        if members:
            report.demand = demand_errors(np.array(preds), np.array(obs))
            if baselines is not None:
                report.baseline_demand = demand_errors(np.array(base), np.array(obs))
    return report


def score_curves(
    curves: np.ndarray, t_lo: int, mode: str, threshold: float, labels: list, lo: int, hi: int, eps: float
) -> tuple[float, float]:
    """(F1, time error in steps) of an alarm rule applied to streamed curves, no demand."""
    idx = alarm_indices(curves, mode, threshold, eps)
    cells, cols = np.nonzero(idx)
    W = curves.shape[-1]
    alarms = [
        EventPrediction(int(c), int(t_lo + j), int(t_lo + j + idx[c, j]), np.zeros(W, np.int8), np.empty(0), np.empty(0), np.empty(0))
        for c, j in zip(cells, cols)
    ]
    rep = evaluate(alarms, labels, lo, hi, 1.0)
    return rep.f1, (rep.time_error_minutes if rep.time_error_minutes is not None else float("inf"))


def tune_threshold(
    curves: np.ndarray, t_lo: int, mode: str, candidates, labels: list, lo: int, hi: int, eps: float = 1e-6
) -> tuple[float, list[tuple[float, float, float]]]:
    """Candidate with the best F1 (ties: smaller time error, then smaller threshold).

    Returns the winner and (threshold, F1, time error in steps) per candidate.
    """
    candidates = [float(c) for c in candidates]
    if not candidates:
        raise ValueError("no candidate thresholds")
    if hi <= lo or curves.shape[1] == 0:
        raise ValueError("empty validation range")
    scores = [(c, *score_curves(curves, t_lo, mode, c, labels, lo, hi, eps)) for c in candidates]
    best = min(scores, key=lambda s: (-s[1], s[2], s[0]))
    return best[0], scores


# -- CSV outputs -----------------------------------------------------------------


def write_predictions_csv(path: str | Path, alarms: list, grid) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        W = len(alarms[0].flags) if alarms else 0
        w.writerow(["row", "col", "issued_at", "predicted_start", "flags", *[f"demand_{j + 1}" for j in range(W)], "reason"])
        for a in alarms:
            r, c = grid.cell_rc(a.cell)
            w.writerow([r, c, a.issued_at, a.predicted_start, "".join(str(int(x)) for x in a.flags),
                        *[f"{float(x):.6f}" for x in a.demand], a.reason or ""])


def read_predictions_csv(path: str | Path, grid) -> list[EventPrediction]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing artifact: {path}")
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:5] != ["row", "col", "issued_at", "predicted_start", "flags"]:
            raise ValueError(f"{path}: not a predictions file")
        for row in reader:
            flags = np.array([int(ch) for ch in row[4]], dtype=np.int8)
            demand = np.array([float(x) for x in row[5 : 5 + len(flags)]])
            out.append(EventPrediction(grid.cell_id(int(row[0]), int(row[1])), int(row[2]), int(row[3]), flags,
                                       demand, np.empty(0), np.empty(0), row[-1] or None))
    return out


def write_curve_csv(path: str | Path, t_c: int, curve: np.ndarray, eps: float) -> None:
    s = monotone(curve)
    h = hazard(curve, eps)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "S", "H"])
        w.writerow([t_c, "1.0", "0.0"])
        for j in range(len(s)):
            w.writerow([t_c + j + 1, repr(float(s[j])), repr(float(h[j]))])

