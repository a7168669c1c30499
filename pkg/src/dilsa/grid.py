"""Spatio-temporal grid: trip ingestion, count cubes, baselines, weather and POI tables."""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd

from .io import read_blob, write_blob

log = logging.getLogger(__name__)

CUBE_MAGIC = b"DILSACUB"
WEATHER_FIELDS = ("avg_wind", "rain", "snow", "temp_max", "temp_min")
TRIP_COLUMNS = (
    "pickup_datetime",
    "pickup_latitude",
    "pickup_longitude",
    "dropoff_datetime",
    "dropoff_latitude",
    "dropoff_longitude",
)


@dataclass(frozen=True)
class GridConfig:
    """Rectangular lat/lon grid paired with fixed-length timesteps.

    Timestep 0 starts at `start` (midnight) plus `day_start_offset` steps; a
    "day" is `steps_per_day` consecutive steps from there.
    """

    lat_min: float = 40.70
    lat_max: float = 40.82
    lon_min: float = -74.02
    lon_max: float = -73.93
    rows: int = 32
    cols: int = 32
    timestep_minutes: int = 30
    start: str = "2014-01-01"
    days: int = 365
    day_start_offset: int = 0
    cell_size_m: float = 400.0

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("invalid GridConfig: " + "; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if self.rows < 1 or self.cols < 1:
            out.append(f"rows/cols must be >= 1 (got {self.rows}x{self.cols})")
        if self.timestep_minutes < 1 or 1440 % self.timestep_minutes:
            out.append(f"timestep_minutes must divide 1440 (got {self.timestep_minutes})")
        if not self.lat_max > self.lat_min:
            out.append("lat_max must exceed lat_min")
        if not self.lon_max > self.lon_min:
            out.append("lon_max must exceed lon_min")
        if self.days < 1:
            out.append(f"days must be >= 1 (got {self.days})")
        try:
            dt.date.fromisoformat(str(self.start))
        except ValueError:
            out.append(f"start must be an ISO date (got {self.start!r})")
        return out

    @property
    def steps_per_day(self) -> int:
        return 1440 // self.timestep_minutes

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def n_steps(self) -> int:
        return self.days * self.steps_per_day

    @property
    def epoch(self) -> dt.datetime:
        d = dt.date.fromisoformat(str(self.start))
        return dt.datetime(d.year, d.month, d.day) + dt.timedelta(
            minutes=self.day_start_offset * self.timestep_minutes
        )

    def day_date(self, day: int) -> dt.date:
        return dt.date.fromisoformat(str(self.start)) + dt.timedelta(days=int(day))

    def step_time(self, t: int) -> dt.datetime:
        return self.epoch + dt.timedelta(minutes=int(t) * self.timestep_minutes)

    def cell_rc(self, cell: int) -> tuple[int, int]:
        return divmod(int(cell), self.cols)

    def cell_id(self, row: int, col: int) -> int:
        return int(row) * self.cols + int(col)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """(lat, lon) of every cell center, in cell-id order."""
        dlat = (self.lat_max - self.lat_min) / self.rows
        dlon = (self.lon_max - self.lon_min) / self.cols
        r, c = np.divmod(np.arange(self.n_cells), self.cols)
        return self.lat_min + (r + 0.5) * dlat, self.lon_min + (c + 0.5) * dlon

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GridConfig":
        return cls(**d)


@dataclass(frozen=True)
class TripRecord:
    pickup_time: dt.datetime
    pickup_lat: float
    pickup_lon: float
    drop_time: dt.datetime
    drop_lat: float
    drop_lon: float

    def __post_init__(self):
        if self.drop_time < self.pickup_time:
            raise ValueError(f"drop_time {self.drop_time} precedes pickup_time {self.pickup_time}")


@dataclass
class TripTable:
    """Columnar trip records (times as datetime64[s])."""

    pickup_time: np.ndarray
    pickup_lat: np.ndarray
    pickup_lon: np.ndarray
    drop_time: np.ndarray
    drop_lat: np.ndarray
    drop_lon: np.ndarray

    def __len__(self) -> int:
        return len(self.pickup_time)

    @classmethod
    def from_records(cls, records: Iterable[TripRecord]) -> "TripTable":
        recs = list(records)
        return cls(
            pickup_time=np.array([r.pickup_time for r in recs], dtype="datetime64[s]"),
            pickup_lat=np.array([r.pickup_lat for r in recs], dtype=np.float64),
            pickup_lon=np.array([r.pickup_lon for r in recs], dtype=np.float64),
            drop_time=np.array([r.drop_time for r in recs], dtype="datetime64[s]"),
            drop_lat=np.array([r.drop_lat for r in recs], dtype=np.float64),
            drop_lon=np.array([r.drop_lon for r in recs], dtype=np.float64),
        )

    def records(self) -> Iterable[TripRecord]:
        for i in range(len(self)):
            yield TripRecord(
                self.pickup_time[i].astype(dt.datetime),
                float(self.pickup_lat[i]),
                float(self.pickup_lon[i]),
                self.drop_time[i].astype(dt.datetime),
                float(self.drop_lat[i]),
                float(self.drop_lon[i]),
            )


# -- mapping ----------------------------------------------------------------


def cell_indices(lat: np.ndarray, lon: np.ndarray, config: GridConfig) -> np.ndarray:
    """Cell ids by half-open uniform binning; the top/right edge is inclusive. -1 if outside."""
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    fr = (lat - config.lat_min) / (config.lat_max - config.lat_min) * config.rows
    fc = (lon - config.lon_min) / (config.lon_max - config.lon_min) * config.cols
    inside = (
        (lat >= config.lat_min)
        & (lat <= config.lat_max)
        & (lon >= config.lon_min)
        & (lon <= config.lon_max)
    )
    r = np.minimum(np.floor(np.where(inside, fr, 0.0)).astype(np.int64), config.rows - 1)
    c = np.minimum(np.floor(np.where(inside, fc, 0.0)).astype(np.int64), config.cols - 1)
    return np.where(inside, r * config.cols + c, -1)


def time_indices(times: np.ndarray, config: GridConfig) -> np.ndarray:
    """Timestep index of each datetime64 value; -1 outside the configured span."""
    t = np.asarray(times, dtype="datetime64[s]")
    elapsed = (t - np.datetime64(config.epoch, "s")).astype(np.int64)
    step = config.timestep_minutes * 60
    idx = np.floor_divide(elapsed, step)
    ok = (elapsed >= 0) & (idx < config.n_steps)
    return np.where(ok, idx, -1)


def map_to_grid(record: TripRecord, config: GridConfig):
    """((src_cell, src_t), (dst_cell, dst_t)) with None for an out-of-bounds end."""
    table = TripTable.from_records([record])
    sc = int(cell_indices(table.pickup_lat, table.pickup_lon, config)[0])
    st = int(time_indices(table.pickup_time, config)[0])
    dc = int(cell_indices(table.drop_lat, table.drop_lon, config)[0])
    dt_ = int(time_indices(table.drop_time, config)[0])
    src = (sc, st) if sc >= 0 and st >= 0 else None
    dst = (dc, dt_) if dc >= 0 and dt_ >= 0 else None
    return src, dst


# -- count cube ---------------------------------------------------------------


@dataclass
class CountCube:
    config: GridConfig
    pickup_counts: np.ndarray
    drop_counts: np.ndarray
    pickup_baseline: np.ndarray | None = None
    drop_baseline: np.ndarray | None = None
    skipped: dict = field(default_factory=lambda: {"pickup": 0, "drop": 0})
    training_days: tuple = ()

    @property
    def n_steps(self) -> int:
        return self.pickup_counts.shape[1]

    @property
    def has_baselines(self) -> bool:
        return self.pickup_baseline is not None

    def merge(self, other: "CountCube") -> "CountCube":
        """Sum of two partial count cubes over the same grid."""
        if other.config != self.config:
            raise ValueError("cannot merge cubes built on different grids")
        return CountCube(
            self.config,
            self.pickup_counts + other.pickup_counts,
            self.drop_counts + other.drop_counts,
            skipped={k: self.skipped[k] + other.skipped[k] for k in ("pickup", "drop")},
        )

    def _series(self, base: np.ndarray | None) -> np.ndarray:
        if base is None:
            raise ValueError("cube has no baselines; run compute_baselines first")
        spd = self.config.steps_per_day
        days = self.n_steps // spd
        if base.ndim == 2:
            return np.tile(base, (1, days))
        weekdays = [self.config.day_date(d).weekday() for d in range(days)]
        return np.concatenate([base[:, w, :] for w in weekdays], axis=1)

    def pickup_baseline_series(self) -> np.ndarray:
        """Pickup baselines expanded onto the cube's full time axis, (cells, T)."""
        return self._series(self.pickup_baseline)

    def drop_baseline_series(self) -> np.ndarray:
        return self._series(self.drop_baseline)

    def save(self, path: str | Path) -> None:
        meta = {
            "grid": self.config.to_dict(),
            "skipped": self.skipped,
            "training_days": list(self.training_days),
        }
        arrays = {"pickup_counts": self.pickup_counts, "drop_counts": self.drop_counts}
        if self.has_baselines:
            arrays["pickup_baseline"] = self.pickup_baseline
            arrays["drop_baseline"] = self.drop_baseline
        write_blob(path, CUBE_MAGIC, meta, arrays)

    @classmethod
    def load(cls, path: str | Path) -> "CountCube":
        meta, arrays = read_blob(path, CUBE_MAGIC)
        return cls(
            GridConfig.from_dict(meta["grid"]),
            arrays["pickup_counts"],
            arrays["drop_counts"],
            arrays.get("pickup_baseline"),
            arrays.get("drop_baseline"),
            skipped=meta["skipped"],
            training_days=tuple(meta["training_days"]),
        )


def _accumulate(cells: np.ndarray, times: np.ndarray, config: GridConfig) -> tuple[np.ndarray, int]:
    ok = (cells >= 0) & (times >= 0)
    flat = cells[ok] * config.n_steps + times[ok]
    counts = np.bincount(flat, minlength=config.n_cells * config.n_steps)
    return counts.reshape(config.n_cells, config.n_steps).astype(np.int64), int((~ok).sum())


def build_count_cube(records: Iterable[TripRecord] | TripTable, config: GridConfig) -> CountCube:
    """Pickup/drop counts per (cell, timestep); out-of-bounds ends are skipped and tallied."""
    table = records if isinstance(records, TripTable) else TripTable.from_records(records)
    if len(table) == 0:
        log.warning("empty trip stream: count cube is all zeros")
    pc, ps = _accumulate(
        cell_indices(table.pickup_lat, table.pickup_lon, config), time_indices(table.pickup_time, config), config
    )
    dc, ds = _accumulate(
        cell_indices(table.drop_lat, table.drop_lon, config), time_indices(table.drop_time, config), config
    )
    return CountCube(config, pc, dc, skipped={"pickup": ps, "drop": ds})


def _resolve_day(day, config: GridConfig) -> int:
    if isinstance(day, (dt.date, dt.datetime)):
        d = day.date() if isinstance(day, dt.datetime) else day
        return (d - dt.date.fromisoformat(str(config.start))).days
    if isinstance(day, str):
        return _resolve_day(dt.date.fromisoformat(day), config)
    return int(day)


def compute_baselines(cube: CountCube, training_days: Iterable, day_of_week: bool = False) -> CountCube:
    """Mean count at each time-of-day slot over the training days.

    `training_days` holds day indices, dates or ISO date strings. With
    `day_of_week` the mean is taken per weekday instead (shape cells x 7 x slots).
    """
    config = cube.config
    spd = config.steps_per_day
    n_days = cube.n_steps // spd
    days = []
    for d in training_days:
        idx = _resolve_day(d, config)
        if not 0 <= idx < n_days:
            raise ValueError(f"training day {d} is not covered by the cube ({config.start} + {n_days} days)")
        days.append(idx)
    if not days:
        raise ValueError("training_days must be non-empty")
    days = sorted(set(days))
    pc = cube.pickup_counts.reshape(config.n_cells, n_days, spd)
    dc = cube.drop_counts.reshape(config.n_cells, n_days, spd)
    if day_of_week:
        pb = np.zeros((config.n_cells, 7, spd))
        db = np.zeros((config.n_cells, 7, spd))
        for w in range(7):
            sel = [d for d in days if config.day_date(d).weekday() == w] or days
            pb[:, w] = pc[:, sel].mean(axis=1)
            db[:, w] = dc[:, sel].mean(axis=1)
    else:
        pb = pc[:, days].mean(axis=1)
        db = dc[:, days].mean(axis=1)
    return CountCube(config, cube.pickup_counts, cube.drop_counts, pb, db, dict(cube.skipped), tuple(days))


# -- weather ------------------------------------------------------------------


@dataclass
class WeatherTable:
    """Daily weather per station: values[date_index, station_index, field]."""

    station_ids: list
    station_lat: np.ndarray
    station_lon: np.ndarray
    dates: list  # sorted datetime.date
    values: np.ndarray  # NaN where a station has no record for a date

    def __post_init__(self):
        v = self.values
        both = ~np.isnan(v[..., 3]) & ~np.isnan(v[..., 4])
        bad = both & (v[..., 3] < v[..., 4])
        if bad.any():
            di, si = map(int, np.argwhere(bad)[0])
            raise ValueError(f"temp_max < temp_min at station {self.station_ids[si]} on {self.dates[di]}")
        self._date_index = {d: i for i, d in enumerate(self.dates)}

    def date_index(self, date: dt.date) -> int:
        i = self._date_index.get(date)
        if i is None or np.isnan(self.values[i, :, 0]).all():
            raise KeyError(f"no station has weather data for {date}")
        return i


def station_distances(lat: np.ndarray, lon: np.ndarray, weather: WeatherTable) -> np.ndarray:
    """Equirectangular distance in km, shape (points, stations)."""
    lat = np.atleast_1d(np.asarray(lat, dtype=np.float64))[:, None]
    lon = np.atleast_1d(np.asarray(lon, dtype=np.float64))[:, None]
    mean_lat = np.radians((lat + weather.station_lat[None, :]) / 2)
    dy = (lat - weather.station_lat[None, :]) * 110.574
    dx = (lon - weather.station_lon[None, :]) * 111.320 * np.cos(mean_lat)
    return np.hypot(dx, dy)


def inverse_distance_average(values: np.ndarray, distances: np.ndarray) -> np.ndarray:
    """Inverse-distance weighted mean over the first axis of `values`.

    Stations with NaN values are ignored; a station at zero distance is
    returned exactly.
    """
    values = np.asarray(values, dtype=np.float64)
    distances = np.asarray(distances, dtype=np.float64)
    have = ~np.isnan(values).any(axis=tuple(range(1, values.ndim)))
    if not have.any():
        raise ValueError("no station values available")
    v, d = values[have], distances[have]
    zero = d == 0
    if zero.any():
        return v[np.argmax(zero)].copy()
    w = 1.0 / d
    return np.tensordot(w, v, axes=(0, 0)) / w.sum()


def weather_profile(cell: int, date: dt.date, weather: WeatherTable, config: GridConfig) -> np.ndarray:
    """(avg_wind, rain, snow, temp_max, temp_min) at the cell center for a date."""
    i = weather.date_index(date)
    lat, lon = config.cell_centers()
    dist = station_distances(lat[cell], lon[cell], weather)[0]
    return inverse_distance_average(weather.values[i], dist)


def weather_matrix(weather: WeatherTable, config: GridConfig, n_days: int | None = None) -> np.ndarray:
    """Weather profile for every cell and day, shape (cells, days, 5)."""
    n_days = config.days if n_days is None else n_days
    lat, lon = config.cell_centers()
    dist = station_distances(lat, lon, weather)
    out = np.zeros((config.n_cells, n_days, len(WEATHER_FIELDS)))
    for d in range(n_days):
        date = config.day_date(d)
        try:
            i = weather.date_index(date)
        except KeyError as err:
            raise ValueError(str(err.args[0])) from None
        vals = weather.values[i]
        have = ~np.isnan(vals).any(axis=1)
        dd = dist[:, have]
        vv = vals[have]
        zero = dd == 0
        w = np.where(zero.any(axis=1, keepdims=True), zero.astype(float), 1.0 / np.where(zero, 1.0, dd))
        out[:, d] = (w @ vv) / w.sum(axis=1, keepdims=True)
    return out


# -- POI ----------------------------------------------------------------------


@dataclass
class PoiTable:
    """Per-cell POI category counts, shape (cells, categories)."""

    vectors: np.ndarray

    def __post_init__(self):
        if (self.vectors < 0).any():
            raise ValueError("POI counts must be non-negative")

    @property
    def n_categories(self) -> int:
        return self.vectors.shape[1]


# -- CSV ----------------------------------------------------------------------


def read_trips_csv(path: str | Path) -> TripTable:
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = [c for c in TRIP_COLUMNS if c not in df.columns]
    if missing:
        raise ValueError(f"{path}: missing trip columns {missing}")
    times = {}
    for col in ("pickup_datetime", "dropoff_datetime"):
        parsed = pd.to_datetime(df[col], errors="coerce", format="ISO8601")
        bad = parsed.isna().to_numpy()
        if bad.any():
            i = int(np.argmax(bad))
            raise ValueError(f"{path}: line {i + 2}: malformed timestamp {df[col].iloc[i]!r} in {col}")
        times[col] = parsed.to_numpy().astype("datetime64[s]")
    nums = {}
    for col in ("pickup_latitude", "pickup_longitude", "dropoff_latitude", "dropoff_longitude"):
        vals = pd.to_numeric(df[col], errors="coerce").to_numpy(dtype=np.float64)
        bad = np.isnan(vals)
        if bad.any():
            i = int(np.argmax(bad))
            raise ValueError(f"{path}: line {i + 2}: malformed coordinate {df[col].iloc[i]!r} in {col}")
        nums[col] = vals
    return TripTable(
        times["pickup_datetime"],
        nums["pickup_latitude"],
        nums["pickup_longitude"],
        times["dropoff_datetime"],
        nums["dropoff_latitude"],
        nums["dropoff_longitude"],
    )


def write_trips_csv(path: str | Path, trips: TripTable) -> None:
    fmt = lambda t: np.datetime_as_string(t, unit="s").astype(object)  # noqa: E731
    df = pd.DataFrame(
        {
            "pickup_datetime": np.char.replace(fmt(trips.pickup_time).astype(str), "T", " "),
            "pickup_latitude": trips.pickup_lat,
            "pickup_longitude": trips.pickup_lon,
            "dropoff_datetime": np.char.replace(fmt(trips.drop_time).astype(str), "T", " "),
            "dropoff_latitude": trips.drop_lat,
            "dropoff_longitude": trips.drop_lon,
        }
    )
    df.to_csv(path, index=False, float_format="%.6f")


def read_weather_csv(path: str | Path) -> WeatherTable:
    df = pd.read_csv(path)
    need = ["station_id", "lat", "lon", "date", *WEATHER_FIELDS]
    missing = [c for c in need if c not in df.columns]
    if missing:
        raise ValueError(f"{path}: missing weather columns {missing}")
    df["station_id"] = df["station_id"].astype(str)
    stations = df.groupby("station_id", sort=True)[["lat", "lon"]].first()
    ids = list(stations.index)
    dates = sorted({dt.date.fromisoformat(str(d)) for d in df["date"]})
    di = {d: i for i, d in enumerate(dates)}
    si = {s: i for i, s in enumerate(ids)}
    values = np.full((len(dates), len(ids), len(WEATHER_FIELDS)), np.nan)
    for row in df.itertuples(index=False):
        values[di[dt.date.fromisoformat(str(row.date))], si[row.station_id]] = [
            getattr(row, f) for f in WEATHER_FIELDS
        ]
    return WeatherTable(ids, stations["lat"].to_numpy(float), stations["lon"].to_numpy(float), dates, values)


def write_weather_csv(path: str | Path, weather: WeatherTable) -> None:
    rows = []
    for di, d in enumerate(weather.dates):
        for si, sid in enumerate(weather.station_ids):
            v = weather.values[di, si]
            if np.isnan(v).any():
                continue
            rows.append([sid, weather.station_lat[si], weather.station_lon[si], d.isoformat(), *v])
    pd.DataFrame(rows, columns=["station_id", "lat", "lon", "date", *WEATHER_FIELDS]).to_csv(
        path, index=False, float_format="%.6f"
    )


def read_poi_csv(path: str | Path, config: GridConfig) -> PoiTable:
    df = pd.read_csv(path)
    if list(df.columns[:2]) != ["row", "col"]:
        raise ValueError(f"{path}: POI CSV must start with row,col columns")
    cats = df.columns[2:]
    vectors = np.zeros((config.n_cells, len(cats)), dtype=np.int64)
    for row in df.itertuples(index=False):
        r, c = int(row[0]), int(row[1])
        if not (0 <= r < config.rows and 0 <= c < config.cols):
            raise ValueError(f"{path}: cell ({r}, {c}) outside the {config.rows}x{config.cols} grid")
        vectors[config.cell_id(r, c)] = row[2:]
    return PoiTable(vectors)


def write_poi_csv(path: str | Path, poi: PoiTable, config: GridConfig) -> None:
    r, c = np.divmod(np.arange(config.n_cells), config.cols)
    df = pd.DataFrame(poi.vectors, columns=[f"cat_{i}" for i in range(poi.n_categories)])
    df.insert(0, "col", c)
    df.insert(0, "row", r)
    df.to_csv(path, index=False)

