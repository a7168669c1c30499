"""Ordered training sets for the survival, anomaly and demand estimators.

Rows are grouped into segments, each one independent recurrent stream: the
estimator resets its state at every segment start. Survival and anomaly
datasets have one segment per cell (time-ascending); the demand dataset has
one segment per emitted event block.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import FeatureContext, FeatureLayout
from .io import read_blob, write_blob
from .survival import EventWindowConfig, SurvivalLabels, survival_labels

DATASET_MAGIC = b"DILSADS\x00"


@dataclass
class SequenceDataset:
    kind: str
    layout: FeatureLayout
    X: np.ndarray  # (N, D) float32
    Y: np.ndarray  # (N, W) float32
    cells: np.ndarray  # (N,)
    times: np.ndarray  # (N,)
    segments: np.ndarray  # (n_segments, 2) row ranges [start, stop)
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.X)

    def __post_init__(self):
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValueError("X and Y row counts differ")
        if self.X.shape[0] and self.X.shape[1] != self.layout.size:
            raise ValueError(f"X has {self.X.shape[1]} columns, layout says {self.layout.size}")

    def segment_rows(self):
        for start, stop in self.segments:
            yield slice(int(start), int(stop))

    def index(self) -> set[tuple[int, int]]:
        return set(zip(self.cells.tolist(), self.times.tolist()))

    def save(self, path: str | Path) -> None:
        """Binary dataset plus `<path>.index.csv` (segments) and `<path>.schema.json` (blocks)."""
        path = Path(path)
        meta = {"kind": self.kind, "layout": self.layout.schema(), "skipped": self.skipped}
        arrays = {"X": self.X, "Y": self.Y, "cells": self.cells, "times": self.times, "segments": self.segments}
        write_blob(path, DATASET_MAGIC, meta, arrays)
        with open(str(path) + ".index.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["segment", "cell", "row_start", "row_stop", "t_start", "t_stop"])
            for i, (a, b) in enumerate(self.segments.tolist()):
                w.writerow([i, int(self.cells[a]), a, b, int(self.times[a]), int(self.times[b - 1]) + 1])
        Path(str(path) + ".schema.json").write_text(self.layout.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SequenceDataset":
        meta, a = read_blob(path, DATASET_MAGIC)
        lay = FeatureLayout(meta["layout"]["kind"], tuple((b["name"], b["length"]) for b in meta["layout"]["blocks"]))
        return cls(meta["kind"], lay, a["X"], a["Y"], a["cells"], a["times"], a["segments"], meta["skipped"])


def _per_cell_segments(n_cells: int, n_t: int) -> np.ndarray:
    starts = np.arange(n_cells) * n_t
    return np.stack([starts, starts + n_t], axis=1).astype(np.int64)


def _labels(ctx: FeatureContext, ecfg: EventWindowConfig, t_lo: int, t_hi: int) -> SurvivalLabels:
    base = ctx.cube.pickup_baseline_series()
    return survival_labels(ctx.cube.pickup_counts, base, ecfg, t_lo, t_hi)


def check_range(ctx: FeatureContext, ecfg: EventWindowConfig, t_lo: int, t_hi: int) -> tuple[int, int, int]:
    """Clip [t_lo, t_hi) to issue times with full history and labels; returns (lo, hi, skipped)."""
    if ecfg.horizon != ctx.cfg.horizon:
        raise ValueError("event and feature configs disagree on the horizon")
    lo = max(t_lo, ctx.cfg.tau, ecfg.e_max + 1)
    hi = min(t_hi, ctx.T - ecfg.horizon)
    if hi <= lo:
        raise ValueError(f"no eligible issue times in [{t_lo}, {t_hi})")
    skipped = (lo - t_lo + t_hi - hi) * ctx.n_cells
    return lo, hi, skipped


def survival_now(lab_prev: SurvivalLabels) -> np.ndarray:
    """Label for the S(t_c) slot: the previous step's curve evaluated at t_c."""
    return (lab_prev.first_zero > 1).astype(np.float64)


def _assemble_xs(ctx: FeatureContext, ecfg: EventWindowConfig, lo: int, hi: int, chunk: int = 256):
    """True-anomaly x_s rows and survival labels for all cells over [lo, hi)."""
    lab = _labels(ctx, ecfg, lo - 1, hi)
    s_now = survival_now(lab)[:, :-1]
    curves = lab.curves()[:, 1:]
    n_t = hi - lo
    D = ctx.layout("xs").size
    X = np.empty((ctx.n_cells, n_t, D), dtype=np.float32)
    for a in range(0, n_t, chunk):
        times = np.arange(lo + a, min(lo + a + chunk, hi))
        X[:, a : a + len(times)] = ctx.xs_block(times, ctx.target_anomaly(times), s_now[:, a : a + len(times)])
    return X, curves, lab


def build_fs_dataset(ctx: FeatureContext, ecfg: EventWindowConfig, t_lo: int, t_hi: int) -> SequenceDataset:
    """One x_s row per (cell, t_c), true target anomaly profile, survival curve labels."""
    lo, hi, skipped = check_range(ctx, ecfg, t_lo, t_hi)
    X, curves, _ = _assemble_xs(ctx, ecfg, lo, hi)
    n_t = hi - lo
    return SequenceDataset(
        "fs",
        ctx.layout("xs"),
        X.reshape(-1, X.shape[-1]),
        curves.reshape(-1, ecfg.horizon).astype(np.float32),
        np.repeat(np.arange(ctx.n_cells), n_t),
        np.tile(np.arange(lo, hi), ctx.n_cells),
        _per_cell_segments(ctx.n_cells, n_t),
        skipped,
    )


def build_fa_dataset(ctx: FeatureContext, ecfg: EventWindowConfig, t_lo: int, t_hi: int, chunk: int = 256) -> SequenceDataset:
    """One x_a row per (cell, t_c), labeled with the true target anomaly profile."""
    lo, hi, skipped = check_range(ctx, ecfg, t_lo, t_hi)
    n_t = hi - lo
    D = ctx.layout("xa").size
    X = np.empty((ctx.n_cells, n_t, D), dtype=np.float32)
    Y = np.empty((ctx.n_cells, n_t, ecfg.horizon), dtype=np.float32)
    for a in range(0, n_t, chunk):
        times = np.arange(lo + a, min(lo + a + chunk, hi))
        X[:, a : a + len(times)] = ctx.xa_block(times)
        Y[:, a : a + len(times)] = ctx.target_anomaly(times)
    return SequenceDataset(
        "fa",
        ctx.layout("xa"),
        X.reshape(-1, D),
        Y.reshape(-1, ecfg.horizon),
        np.repeat(np.arange(ctx.n_cells), n_t),
        np.tile(np.arange(lo, hi), ctx.n_cells),
        _per_cell_segments(ctx.n_cells, n_t),
        skipped,
    )


def event_blocks(first_zero: np.ndarray, horizon: int) -> list[tuple[int, int]]:
    """Event-only blocks for one cell's labels, as (start, stop) offsets.

    Scans forward. A block fires when an event start enters the horizon: the
    curve at offset t has its first zero exactly at the horizon end
    (S(t_g) = 0, S(t_g - 1) = 1), or its first zero at f < W right after a
    curve with no zero (the event became significant only once more of it was
    in view). The block is [s - W, s) for the event start s = t + f, clipped
    to earlier blocks and offset 0; the scan resumes at s.
    """
    out = []
    n = len(first_zero)
    no_event = horizon + 1
    t = 0
    while t < n:
        f = int(first_zero[t])
        fresh = f == horizon or (f < no_event and t > 0 and first_zero[t - 1] == no_event)
        if fresh:
            s = t + f
            a = max(s - horizon, out[-1][1] if out else 0, 0)
            if a < min(s, n):
                out.append((a, min(s, n)))
            t = s
        else:
            t += 1
    return out


def build_fe_dataset(
    ctx: FeatureContext, ecfg: EventWindowConfig, t_lo: int, t_hi: int, fs: SequenceDataset | None = None
) -> SequenceDataset:
    """Event-only x_e rows (same layout as x_s) labeled with future pickup counts.

    Passing the matching survival dataset `fs` reuses its rows instead of
    rebuilding features.
    """
    lo, hi, skipped = check_range(ctx, ecfg, t_lo, t_hi)
    n_t = hi - lo
    if fs is not None:
        if len(fs) != ctx.n_cells * n_t or fs.times[0] != lo:
            raise ValueError("survival dataset does not cover the same range")
        X_all = fs.X.reshape(ctx.n_cells, n_t, -1)
        lab = _labels(ctx, ecfg, lo, hi)
    else:
        X_all, _, lab_prev = _assemble_xs(ctx, ecfg, lo, hi)
        lab = SurvivalLabels(lab_prev.times[1:], lab_prev.t0[:, 1:], lab_prev.k[:, 1:], lab_prev.first_zero[:, 1:], lab_prev.horizon)
    rows_x, rows_c, rows_t, segs = [], [], [], []
    pos = 0
    for cell in range(ctx.n_cells):
        for a, b in event_blocks(lab.first_zero[cell], ecfg.horizon):
            rows_x.append(X_all[cell, a:b])
            rows_c.append(np.full(b - a, cell))
            rows_t.append(np.arange(lo + a, lo + b))
            segs.append((pos, pos + b - a))
            pos += b - a
    D = ctx.layout("xs").size
    if not segs:
        empty = np.zeros(0, dtype=np.int64)
        return SequenceDataset(
            "fe", ctx.layout("xe"), np.zeros((0, D), np.float32), np.zeros((0, ecfg.horizon), np.float32),
            empty, empty, np.zeros((0, 2), np.int64), skipped,
        )
    cells = np.concatenate(rows_c)
    times = np.concatenate(rows_t)
    Y = ctx.pc[cells[:, None], times[:, None] + np.arange(1, ecfg.horizon + 1)[None, :]]
    return SequenceDataset(
        "fe",
        ctx.layout("xe"),
        np.concatenate(rows_x).astype(np.float32),
        Y.astype(np.float32),
        cells.astype(np.int64),
        times.astype(np.int64),
        np.array(segs, dtype=np.int64),
        skipped,
    )


def dataset_summary(ds: SequenceDataset) -> str:
    return json.dumps(
        {"kind": ds.kind, "rows": len(ds), "segments": len(ds.segments), "columns": ds.layout.size, "skipped": ds.skipped},
        sort_keys=True,
    )
