"""Synthetic trip streams with planted gathering-then-dispersal events.

Background pickups at every (cell, step) are Poisson with a diurnal rate;
each trip drops off at a uniformly random cell shortly after. A planted event
at cell l starting at t_e adds a pickup surge (rate times `magnitude`) over
its duration and, unless it is precursor-free, a drop surge of
`precursor_steps` steps starting `lag` steps earlier (at l, or at a neighbor
when `precursor_offset` is set). Events happen only at "venue" cells, which
carry extra POI counts in category 0 and a preferred start slot of the day.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .grid import GridConfig, PoiTable, TripTable, WeatherTable, write_poi_csv, write_trips_csv, write_weather_csv
from .survival import EventLabel

_MAX_TRIES = 10_000


@dataclass(frozen=True)
class SynthConfig:
    rows: int = 20
    cols: int = 20
    days: int = 60
    timestep_minutes: int = 30
    start: str = "2014-01-01"
    base_rate: float = 5.0
    diurnal_amplitude: float = 0.4
    diurnal_peak_hour: float = 18.0
    n_events: int = 40
    magnitude: float = 8.0
    lag: int = 4
    precursor_steps: int = 2
    precursor_offset: tuple = (0, 0)
    duration_min: int = 3
    duration_max: int = 8
    no_precursor_fraction: float = 0.25
    n_venues: int = 10
    slot_jitter: int = 1
    n_poi: int = 16
    venue_poi_boost: int = 20
    n_stations: int = 2
    margin_steps: int = 24
    min_gap_steps: int = 40
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "precursor_offset", tuple(int(v) for v in self.precursor_offset))
        problems = self.problems()
        if problems:
            raise ValueError("invalid SynthConfig: " + "; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if self.magnitude <= 1:
            out.append(f"magnitude must exceed 1 (got {self.magnitude})")
        if self.lag < 0:
            out.append("lag must be >= 0")
        if not 1 <= self.duration_min <= self.duration_max:
            out.append("need 1 <= duration_min <= duration_max")
        if self.base_rate <= 0:
            out.append("base_rate must be positive")
        if not 0 <= self.diurnal_amplitude < 1:
            out.append("diurnal_amplitude must lie in [0, 1)")
        if not 0 <= self.no_precursor_fraction <= 1:
            out.append("no_precursor_fraction must lie in [0, 1]")
        if self.n_events < 0 or self.n_venues < 1 or self.n_venues > self.rows * self.cols:
            out.append("need n_events >= 0 and 1 <= n_venues <= cells")
        if self.n_poi < 1:
            out.append("n_poi must be >= 1")
        return out

    def grid(self) -> GridConfig:
        # ~400 m cells around lower Manhattan
        dlat, dlon = 0.0036, 0.0047
        return GridConfig(
            lat_min=40.70,
            lat_max=40.70 + self.rows * dlat,
            lon_min=-74.02,
            lon_max=-74.02 + self.cols * dlon,
            rows=self.rows,
            cols=self.cols,
            timestep_minutes=self.timestep_minutes,
            start=self.start,
            days=self.days,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["precursor_offset"] = list(self.precursor_offset)
        return d


@dataclass(frozen=True)
class PlantedEvent:
    cell: int
    start: int
    duration: int
    precursor_cell: int | None  # None for precursor-free events

    def label(self) -> EventLabel:
        return EventLabel(self.cell, self.start, self.start + self.duration)


@dataclass
class SynthData:
    config: SynthConfig
    grid: GridConfig
    trips: TripTable
    events: list  # PlantedEvent, ordered by (start, cell)
    weather: WeatherTable
    poi: PoiTable
    venues: np.ndarray

    def labels(self) -> list[EventLabel]:
        return sorted((e.label() for e in self.events), key=lambda e: (e.cell, e.start))

    def write(self, outdir: str | Path) -> dict[str, Path]:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "trips": out / "trips.csv",
            "weather": out / "weather.csv",
            "poi": out / "poi.csv",
            "truth": out / "truth.csv",
        }
        write_trips_csv(paths["trips"], self.trips)
        write_weather_csv(paths["weather"], self.weather)
        write_poi_csv(paths["poi"], self.poi, self.grid)
        write_labels_csv(paths["truth"], self.labels(), self.grid)
        return paths


def diurnal_profile(cfg: SynthConfig) -> np.ndarray:
    """Per-slot rate multipliers, peaking at `diurnal_peak_hour`."""
    spd = 1440 // cfg.timestep_minutes
    hours = (np.arange(spd) + 0.5) * cfg.timestep_minutes / 60.0
    return 1.0 + cfg.diurnal_amplitude * np.cos(2 * np.pi * (hours - cfg.diurnal_peak_hour) / 24.0)


def _neighbor(cell: int, offset: tuple, grid: GridConfig) -> int:
    r, c = grid.cell_rc(cell)
    r = min(max(r + offset[0], 0), grid.rows - 1)
    c = min(max(c + offset[1], 0), grid.cols - 1)
    return grid.cell_id(r, c)


def plant_events(cfg: SynthConfig, grid: GridConfig, rng: np.random.Generator) -> tuple[list[PlantedEvent], np.ndarray]:
    """Venue cells and non-colliding event placements (rejection sampling)."""
    spd = grid.steps_per_day
    T = grid.n_steps
    venues = np.sort(rng.choice(grid.n_cells, size=cfg.n_venues, replace=False))
    slots = rng.integers(spd // 2, spd - cfg.duration_max - 2, size=cfg.n_venues)
    lead = cfg.lag + cfg.precursor_steps
    events: list[PlantedEvent] = []
    busy: dict[int, list[tuple[int, int]]] = {}
    tries = 0
    while len(events) < cfg.n_events:
        tries += 1
        if tries > _MAX_TRIES:
            raise RuntimeError(f"could only place {len(events)} of {cfg.n_events} events without collisions")
        v = int(rng.integers(cfg.n_venues))
        day = int(rng.integers(cfg.days))
        start = day * spd + int(slots[v]) + int(rng.integers(-cfg.slot_jitter, cfg.slot_jitter + 1))
        dur = int(rng.integers(cfg.duration_min, cfg.duration_max + 1))
        if start - lead < cfg.margin_steps or start + dur + cfg.margin_steps > T:
            continue
        cell = int(venues[v])
        pre = None if rng.random() < cfg.no_precursor_fraction else _neighbor(cell, cfg.precursor_offset, grid)
        span = (start - lead - cfg.min_gap_steps, start + dur + cfg.min_gap_steps)
        touched = {cell} | ({pre} if pre is not None else set())
        if any(a < span[1] and span[0] < b for c in touched for a, b in busy.get(c, [])):
            continue
        for c in touched:
            busy.setdefault(c, []).append(span)
        events.append(PlantedEvent(cell, start, dur, pre))
    events.sort(key=lambda e: (e.start, e.cell))
    return events, venues


def _weather(cfg: SynthConfig, grid: GridConfig, rng: np.random.Generator) -> WeatherTable:
    n = cfg.n_stations
    lat = grid.lat_min + (grid.lat_max - grid.lat_min) * np.linspace(0.1, 0.9, n)
    lon = grid.lon_min + (grid.lon_max - grid.lon_min) * np.linspace(0.9, 0.1, n)
    dates = [grid.day_date(d) for d in range(cfg.days)]
    season = 10 * np.sin(2 * np.pi * (np.arange(cfg.days) - 100) / 365.0)
    vals = np.empty((cfg.days, n, 5))
    vals[..., 0] = rng.gamma(4.0, 1.5, (cfg.days, n))
    vals[..., 1] = rng.exponential(0.1, (cfg.days, n)) * (rng.random((cfg.days, n)) < 0.3)
    vals[..., 2] = rng.exponential(0.5, (cfg.days, n)) * (rng.random((cfg.days, n)) < 0.05)
    tmin = 5 + season[:, None] + rng.normal(0, 2, (cfg.days, n))
    vals[..., 4] = tmin
    vals[..., 3] = tmin + rng.uniform(3, 12, (cfg.days, n))
    return WeatherTable([f"S{i}" for i in range(n)], lat, lon, dates, np.round(vals, 3))


def _place(cells: np.ndarray, steps: np.ndarray, grid: GridConfig, rng: np.random.Generator):
    """Uniform random coordinates and seconds inside the given cells/steps."""
    dlat = (grid.lat_max - grid.lat_min) / grid.rows
    dlon = (grid.lon_max - grid.lon_min) / grid.cols
    r, c = np.divmod(cells, grid.cols)
    # stay clear of cell edges so CSV rounding cannot move a point
    lat = grid.lat_min + (r + rng.uniform(0.05, 0.95, len(cells))) * dlat
    lon = grid.lon_min + (c + rng.uniform(0.05, 0.95, len(cells))) * dlon
    secs = steps * grid.timestep_minutes * 60 + rng.integers(0, grid.timestep_minutes * 60, len(cells))
    return lat, lon, secs


def generate(cfg: SynthConfig | None = None) -> SynthData:
    cfg = cfg or SynthConfig()
    grid = cfg.grid()
    rng = np.random.default_rng(cfg.seed)
    events, venues = plant_events(cfg, grid, rng)
    T = grid.n_steps
    rate = cfg.base_rate * np.tile(diurnal_profile(cfg), cfg.days)[None, :] * np.ones((grid.n_cells, 1))
    pick_rate = rate.copy()
    extra_drop = np.zeros_like(rate)
    for e in events:
        pick_rate[e.cell, e.start : e.start + e.duration] *= cfg.magnitude
        if e.precursor_cell is not None:
            a = e.start - cfg.lag
            sl = slice(a, a + cfg.precursor_steps)
            extra_drop[e.precursor_cell, sl] += (cfg.magnitude - 1) * rate[e.precursor_cell, sl]
    # pickup-driven trips: drop at a random cell, up to 20 minutes later
    n = rng.poisson(pick_rate).ravel()
    src = np.repeat(np.arange(grid.n_cells * T), n)
    p_cell, p_step = np.divmod(src, T)
    p_lat, p_lon, p_sec = _place(p_cell, p_step, grid, rng)
    d_cell = rng.integers(0, grid.n_cells, len(src))
    d_sec = p_sec + rng.integers(60, 1200, len(src))
    d_lat, d_lon, _ = _place(d_cell, np.zeros(len(src), dtype=np.int64), grid, rng)
    # precursor trips: arrive at the event area during the drop surge
    m = rng.poisson(extra_drop).ravel()
    dst = np.repeat(np.arange(grid.n_cells * T), m)
    q_cell, q_step = np.divmod(dst, T)
    q_lat, q_lon, q_sec = _place(q_cell, q_step, grid, rng)
    o_cell = rng.integers(0, grid.n_cells, len(dst))
    o_lat, o_lon, _ = _place(o_cell, np.zeros(len(dst), dtype=np.int64), grid, rng)
    o_sec = np.maximum(q_sec - rng.integers(60, 1200, len(dst)), 0)
    epoch = np.datetime64(grid.epoch, "s")
    pick_sec = np.concatenate([p_sec, o_sec])
    order = np.argsort(pick_sec, kind="stable")
    trips = TripTable(
        epoch + pick_sec[order].astype("timedelta64[s]"),
        np.concatenate([p_lat, o_lat])[order],
        np.concatenate([p_lon, o_lon])[order],
        epoch + np.concatenate([d_sec, q_sec])[order].astype("timedelta64[s]"),
        np.concatenate([d_lat, q_lat])[order],
        np.concatenate([d_lon, q_lon])[order],
    )
    poi = rng.poisson(3.0, (grid.n_cells, cfg.n_poi))
    poi[venues, 0] += cfg.venue_poi_boost
    return SynthData(cfg, grid, trips, events, _weather(cfg, grid, rng), PoiTable(poi), venues)


# -- label CSV -----------------------------------------------------------------


def write_labels_csv(path: str | Path, labels: list[EventLabel], grid: GridConfig) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", "t_start", "t_end", "start_time", "end_time"])
        for e in labels:
            r, c = grid.cell_rc(e.cell)
            w.writerow([r, c, e.start, e.end, grid.step_time(e.start).isoformat(), grid.step_time(e.end).isoformat()])


def read_labels_csv(path: str | Path, grid: GridConfig) -> list[EventLabel]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing artifact: {path}")
    out = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.DictReader(fh)):
            try:
                out.append(EventLabel(grid.cell_id(int(row["row"]), int(row["col"])), int(row["t_start"]), int(row["t_end"])))
            except (KeyError, ValueError) as err:
                raise ValueError(f"{path}: line {i + 2}: bad label row ({err})") from None
    return out
