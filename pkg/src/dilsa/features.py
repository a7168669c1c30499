"""Feature profiles and input/output vectors for the three estimators.

Vector layouts (blocks in this order, each optional block controlled by a
flag)::

    x_s / x_e : Q(3) Wx(5) M(4)? G(W) F(W)   V(|V|)? N(P*2*(tau+1))? S(1)
    x_a       : Q(3) Wx(5) M(4)? G(W) F(tau) V(|V|)? N(P*2*(tau+1))?

Q  time profile: day of year (1..366), day of week (Mon=0), steps since day start
Wx weather: avg_wind, rain, snow, temp_max, temp_min
M  daily profile: sums over [t_d, t_c) of pickups, pickup baselines, drops, drop baselines
G  pickup baselines over (t_c, t_c + W]
F  anomaly profile: per-step pickup LLR, over the target period for x_s/x_e
   and over (t_c - tau, t_c] for x_a
V  POI category counts of the cell
N  recent profile of every cell in the (2*radius+1)^2 patch, row-major, each
   as (pickup, drop) pairs for t_c - tau .. t_c; off-grid cells are zero
S  survival at t_c
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .anomaly import DEFAULT_BASELINE_FLOOR, llr_array
from .grid import CountCube, GridConfig, PoiTable, WeatherTable, weather_matrix


@dataclass(frozen=True)
class FeatureConfig:
    horizon: int = 10
    tau: int = 10
    radius: int = 4
    use_recent: bool = True
    use_daily: bool = True
    use_poi: bool = True
    baseline_floor: float = DEFAULT_BASELINE_FLOOR

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("invalid FeatureConfig: " + "; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if self.horizon < 1:
            out.append("horizon must be >= 1")
        if self.tau < 0:
            out.append("tau must be >= 0")
        if self.radius < 0:
            out.append("radius must be >= 0")
        return out

    @property
    def patch_cells(self) -> int:
        return (2 * self.radius + 1) ** 2

    def flags(self) -> str:
        return "".join(f for f, on in zip("RDP", (self.use_recent, self.use_daily, self.use_poi)) if on) or "-"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FeatureLayout:
    kind: str
    blocks: tuple  # ((name, length), ...)

    @property
    def size(self) -> int:
        return sum(n for _, n in self.blocks)

    def slices(self) -> dict[str, slice]:
        out, pos = {}, 0
        for name, n in self.blocks:
            out[name] = slice(pos, pos + n)
            pos += n
        return out

    def schema(self) -> dict:
        return {
            "kind": self.kind,
            "size": self.size,
            "blocks": [{"name": n, "offset": s.start, "length": s.stop - s.start} for n, s in self.slices().items()],
        }

    def to_json(self) -> str:
        return json.dumps(self.schema(), indent=2, sort_keys=True)


def layout(kind: str, cfg: FeatureConfig, n_poi: int) -> FeatureLayout:
    """Block layout for kind "xs", "xe" or "xa"."""
    if kind not in ("xs", "xe", "xa"):
        raise ValueError(f"unknown vector kind {kind!r}")
    W = cfg.horizon
    blocks = [("Q", 3), ("W", 5)]
    if cfg.use_daily:
        blocks.append(("M", 4))
    blocks.append(("G", W))
    blocks.append(("F", W if kind != "xa" else cfg.tau))
    if cfg.use_poi:
        blocks.append(("V", n_poi))
    if cfg.use_recent:
        blocks.append(("N", cfg.patch_cells * 2 * (cfg.tau + 1)))
    if kind != "xa":
        blocks.append(("S", 1))
    return FeatureLayout(kind, tuple(blocks))


def vector_length(kind: str, horizon: int, tau: int, radius: int, n_poi: int) -> int:
    """Closed-form vector length with every block enabled."""
    patch = (2 * radius + 1) ** 2 * 2 * (tau + 1)
    if kind == "xa":
        return 3 + 5 + 4 + horizon + tau + n_poi + patch
    return 3 + 5 + 4 + horizon + horizon + n_poi + patch + 1


class FeatureContext:
    """Precomputed per-cell series from which feature blocks are sliced.

    All `*_block` methods build features for every cell at once over an
    array of issue times, returning (cells, n_times, size) arrays.
    """

    def __init__(self, cube: CountCube, weather: WeatherTable, poi: PoiTable, cfg: FeatureConfig):
        if not cube.has_baselines:
            raise ValueError("cube has no baselines")
        self.cube = cube
        self.grid: GridConfig = cube.config
        self.cfg = cfg
        self.n_cells = self.grid.n_cells
        self.T = cube.n_steps
        spd = self.grid.steps_per_day
        pc = cube.pickup_counts.astype(np.float64)
        dc = cube.drop_counts.astype(np.float64)
        pb = cube.pickup_baseline_series()
        db = cube.drop_baseline_series()
        self.pc, self.dc, self.pb, self.db = pc, dc, pb, db
        self.llr = llr_array(pc, np.maximum(pb, cfg.baseline_floor))
        zero = np.zeros((self.n_cells, 1))
        self._prefix = np.stack(
            [np.concatenate([zero, np.cumsum(a, axis=1)], axis=1) for a in (pc, pb, dc, db)], axis=-1
        )
        days = self.T // spd
        self.weather = weather_matrix(weather, self.grid, days)
        self.poi = poi.vectors.astype(np.float64)
        if self.poi.shape[0] != self.n_cells:
            raise ValueError(f"POI table has {self.poi.shape[0]} cells, grid has {self.n_cells}")
        dates = [self.grid.day_date(d) for d in range(days)]
        self._doy = np.array([d.timetuple().tm_yday for d in dates], dtype=np.float64)
        self._dow = np.array([d.weekday() for d in dates], dtype=np.float64)
        # patch gather indices into a zero-padded grid
        r = cfg.radius
        R, C = self.grid.rows, self.grid.cols
        rr, cc = np.divmod(np.arange(self.n_cells), C)
        offs = [(dr, dcol) for dr in range(-r, r + 1) for dcol in range(-r, r + 1)]
        self._patch = np.stack([(rr + r + dr) * (C + 2 * r) + (cc + r + dcol) for dr, dcol in offs], axis=1)
        pad = lambda a: np.pad(a.reshape(R, C, -1), ((r, r), (r, r), (0, 0))).reshape((R + 2 * r) * (C + 2 * r), -1)  # noqa: E731
        self._pc_pad = pad(pc)
        self._dc_pad = pad(dc)

    @property
    def n_poi(self) -> int:
        return self.poi.shape[1]

    def layout(self, kind: str) -> FeatureLayout:
        return layout(kind, self.cfg, self.n_poi)

    def issue_range(self, label_history: int = 0) -> tuple[int, int]:
        """Issue times [lo, hi) with full recent history and a full target period."""
        return max(self.cfg.tau, label_history), self.T - self.cfg.horizon

    def _check_times(self, times: np.ndarray, need_future: bool) -> None:
        if times.min() < self.cfg.tau:
            raise ValueError(f"t_c={int(times.min())} lacks {self.cfg.tau} steps of history")
        if times.max() >= self.T or (need_future and times.max() + self.cfg.horizon >= self.T):
            raise ValueError(f"t_c={int(times.max())} has no full target period in a {self.T}-step cube")

    # -- blocks ---------------------------------------------------------------

    def time_profile(self, times: np.ndarray) -> np.ndarray:
        spd = self.grid.steps_per_day
        day = times // spd
        q = np.stack([self._doy[day], self._dow[day], (times % spd).astype(np.float64)], axis=-1)
        return np.broadcast_to(q, (self.n_cells,) + q.shape)

    def weather_profile(self, times: np.ndarray) -> np.ndarray:
        return self.weather[:, times // self.grid.steps_per_day, :]

    def daily_profile(self, times: np.ndarray) -> np.ndarray:
        t_d = times - times % self.grid.steps_per_day
        return self._prefix[:, times, :] - self._prefix[:, t_d, :]

    def _window(self, a: np.ndarray, times: np.ndarray, lo: int, hi: int) -> np.ndarray:
        """a[:, t + lo .. t + hi] for every t, shape (rows, n_t, hi - lo + 1)."""
        idx = times[:, None] + np.arange(lo, hi + 1)[None, :]
        return a[:, idx]

    def target_profile(self, times: np.ndarray) -> np.ndarray:
        return self._window(self.pb, times, 1, self.cfg.horizon)

    def target_anomaly(self, times: np.ndarray) -> np.ndarray:
        """True per-step pickup LLR over (t_c, t_c + W]."""
        return self._window(self.llr, times, 1, self.cfg.horizon)

    def recent_anomaly(self, times: np.ndarray) -> np.ndarray:
        """Per-step pickup LLR over (t_c - tau, t_c]."""
        if self.cfg.tau == 0:
            return np.zeros((self.n_cells, len(times), 0))
        return self._window(self.llr, times, -self.cfg.tau + 1, 0)

    def recent_profile(self, times: np.ndarray) -> np.ndarray:
        tau = self.cfg.tau
        p = self._window(self._pc_pad, times, -tau, 0)[self._patch]  # cells, P, n_t, tau+1
        d = self._window(self._dc_pad, times, -tau, 0)[self._patch]
        n = np.stack([p, d], axis=-1)  # cells, P, n_t, tau+1, 2
        n = np.moveaxis(n, 2, 1)  # cells, n_t, P, tau+1, 2
        return n.reshape(self.n_cells, len(times), -1)

    def target_counts(self, times: np.ndarray) -> np.ndarray:
        """Observed pickups over (t_c, t_c + W] (the demand output vector)."""
        return self._window(self.pc, times, 1, self.cfg.horizon)

    # -- vectors --------------------------------------------------------------

    def _assemble(self, kind: str, times: np.ndarray, anomaly: np.ndarray, s_now: np.ndarray | None) -> np.ndarray:
        times = np.asarray(times, dtype=np.int64)
        parts = [self.time_profile(times), self.weather_profile(times)]
        if self.cfg.use_daily:
            parts.append(self.daily_profile(times))
        parts.append(self._window(self.pb, times, 1, self.cfg.horizon))
        parts.append(anomaly)
        if self.cfg.use_poi:
            parts.append(np.broadcast_to(self.poi[:, None, :], (self.n_cells, len(times), self.n_poi)))
        if self.cfg.use_recent:
            parts.append(self.recent_profile(times))
        if kind != "xa":
            parts.append(np.asarray(s_now, dtype=np.float64).reshape(self.n_cells, len(times), 1))
        return np.concatenate(parts, axis=-1)

    def xs_block(self, times: np.ndarray, anomaly: np.ndarray, s_now: np.ndarray) -> np.ndarray:
        """x_s (and x_e) for all cells; `anomaly` is (cells, n_t, W), `s_now` (cells, n_t)."""
        times = np.asarray(times, dtype=np.int64)
        self._check_times(times, need_future=False)
        if times.max() + self.cfg.horizon >= self.T:
            raise ValueError("target baselines run past the end of the cube")
        anomaly = np.asarray(anomaly, dtype=np.float64).reshape(self.n_cells, len(times), self.cfg.horizon)
        return self._assemble("xs", times, anomaly, s_now)

    def xa_block(self, times: np.ndarray) -> np.ndarray:
        times = np.asarray(times, dtype=np.int64)
        self._check_times(times, need_future=False)
        if times.max() + self.cfg.horizon >= self.T:
            raise ValueError("target baselines run past the end of the cube")
        return self._assemble("xa", times, self.recent_anomaly(times), None)


def build_xs(ctx: FeatureContext, cell: int, t_c: int, anomaly_target: np.ndarray, s_now: float) -> np.ndarray:
    """x_s for one (cell, t_c). Only `cell`'s anomaly/survival inputs matter."""
    F = np.zeros((ctx.n_cells, 1, ctx.cfg.horizon))
    F[cell, 0] = anomaly_target
    S = np.ones((ctx.n_cells, 1))
    S[cell, 0] = s_now
    return ctx.xs_block(np.array([t_c]), F, S)[cell, 0]


def build_xa(ctx: FeatureContext, cell: int, t_c: int) -> np.ndarray:
    return ctx.xa_block(np.array([t_c]))[cell, 0]


def build_ys(curve: np.ndarray) -> np.ndarray:
    return np.asarray(curve, dtype=np.float64).copy()


def build_ye(ctx: FeatureContext, cell: int, t_c: int) -> np.ndarray:
    if t_c + ctx.cfg.horizon >= ctx.T:
        raise ValueError(f"t_c={t_c} has no full target period")
    return ctx.target_counts(np.array([t_c]))[cell, 0]


# -- standardization -----------------------------------------------------------


@dataclass
class Standardizer:
    """Per-feature min-max scaling fitted on training rows."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        X = np.asarray(X)
        flat = X.reshape(-1, X.shape[-1])
        if flat.shape[0] == 0:
            raise ValueError("cannot fit a standardizer on zero rows")
        return cls(flat.min(axis=0).astype(np.float64), flat.max(axis=0).astype(np.float64))

    def apply(self, X: np.ndarray) -> np.ndarray:
        span = self.hi - self.lo
        scale = np.where(span > 0, 1.0 / np.where(span > 0, span, 1.0), 0.0)
        return (np.asarray(X, dtype=np.float64) - self.lo) * scale
