"""Command-line pipeline driven by one INI config.

    dilsa --config run.ini <command> [options]

Stages read earlier artifacts from the output directory and write their own
together with `<stage>.manifest.json`, which records the config hash of the
sections the stage depends on and a sha256 of every output file. A stage
refuses inputs whose manifest hash differs from the current config. Relative
paths in [paths] resolve against the config file's directory.

Failures print one line `error: <kind>: <message>` on stderr and exit
nonzero (2 for config problems, 1 otherwise).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .anomaly import llr_map
from .config import PipelineConfig, load_config, stage_hash
from .datasets import SequenceDataset, dataset_summary
from .estimators import load_estimator
from .evaluation import evaluate, read_predictions_csv, tune_threshold, write_curve_csv, write_predictions_csv
from .features import FeatureContext
from .grid import (
    CountCube,
    build_count_cube,
    read_poi_csv,
    read_trips_csv,
    read_weather_csv,
    write_poi_csv,
    write_trips_csv,
    write_weather_csv,
)
from .pipeline import (
    ABLATION_FLAGS,
    Models,
    ablation_run,
    build_datasets,
    ground_truth,
    issue_window,
    step_range,
    train_models,
    with_baselines,
)
from .predictor import DilsaPredictor
from .synth import generate, read_labels_csv, write_labels_csv

log = logging.getLogger(__name__)

FORMATS = """file formats:
  trips.csv    pickup_time,pickup_lat,pickup_lon,dropoff_time,dropoff_lat,dropoff_lon (ISO times)
  weather.csv  date,station,lat,lon,tmax,tmin,prcp,snow,snwd
  poi.csv      row,col,<one column per category>
  truth.csv    row,col,t_start,t_end,start_time,end_time ([t_start, t_end) timestep indices)
  *.bin        binary artifacts: 8-byte magic, version, header length, JSON header, raw arrays
"""


class StageError(Exception):
    def __init__(self, kind: str, message: str, code: int = 1):
        super().__init__(message)
        self.kind, self.code = kind, code


@dataclasses.dataclass
class Env:
    cfg: PipelineConfig
    base: Path

    def path(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.base / q

    @property
    def out(self) -> Path:
        return self.path(self.cfg.paths.output)

    def artifact(self, name: str) -> Path:
        return self.out / name

    def source(self, key: str) -> Path:
        p = self.path(getattr(self.cfg.paths, key))
        if not p.exists():
            raise StageError("missing-input", f"{p} ({key} file named in [paths])")
        return p


# -- manifests -----------------------------------------------------------------


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(env: Env, stage: str, outputs: list[Path], extra: dict | None = None) -> Path:
    out = {
        "stage": stage,
        "config_hash": stage_hash(env.cfg, stage),
        "outputs": {p.relative_to(env.out).as_posix(): _sha256(p) for p in sorted(outputs)},
    }
    if extra:
        out["summary"] = extra
    path = env.artifact(f"{stage}.manifest.json")
    path.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return path


def require(env: Env, stage: str, name: str) -> Path:
    """Path of an artifact produced by `stage`, checked against its manifest."""
    path = env.artifact(name)
    man = env.artifact(f"{stage}.manifest.json")
    if not path.exists():
        raise StageError("missing-input", f"{path} (run `dilsa {stage}` first)")
    if not man.exists():
        raise StageError("missing-input", f"{man} (run `dilsa {stage}` first)")
    meta = json.loads(man.read_text())
    want = stage_hash(env.cfg, stage)
    if meta.get("config_hash") != want:
        raise StageError(
            "config-mismatch", f"{path} was built with config hash {meta.get('config_hash')}, current config gives {want}"
        )
    recorded = meta.get("outputs", {}).get(name)
    if recorded is not None and recorded != _sha256(path):
        raise StageError("stale-artifact", f"{path} changed after `dilsa {stage}` wrote it")
    return path


# -- shared loaders ---------------------------------------------------------------


def _cube(env: Env) -> CountCube:
    return CountCube.load(require(env, "baseline", "baseline.bin"))


def _context(env: Env, cube: CountCube | None = None) -> FeatureContext:
    cube = cube if cube is not None else _cube(env)
    weather = read_weather_csv(env.source("weather"))
    poi = read_poi_csv(env.source("poi"), env.cfg.grid)
    return FeatureContext(cube, weather, poi, env.cfg.features)


def _truth(env: Env) -> list:
    if env.cfg.paths.truth:
        return read_labels_csv(env.source("truth"), env.cfg.grid)
    return read_labels_csv(require(env, "label", "labels.csv"), env.cfg.grid)


def _models(env: Env) -> Models:
    loaded = {k: load_estimator(require(env, "train", f"{k}.model")) for k in ("fa", "fs", "fe")}
    return Models(loaded["fa"], loaded["fs"], loaded["fe"])


# -- commands --------------------------------------------------------------------


def cmd_synth(env: Env, args) -> list[Path]:
    data = generate(env.cfg.synth)
    if data.grid != env.cfg.grid:
        raise StageError("config", "[grid] differs from the grid implied by [synth] (extent, size, start, days or step)", 2)
    targets = {k: env.path(getattr(env.cfg.paths, k)) for k in ("trips", "weather", "poi")}
    targets["truth"] = env.path(env.cfg.paths.truth or "truth.csv")
    for p in targets.values():
        p.parent.mkdir(parents=True, exist_ok=True)
    write_trips_csv(targets["trips"], data.trips)
    write_weather_csv(targets["weather"], data.weather)
    write_poi_csv(targets["poi"], data.poi, data.grid)
    write_labels_csv(targets["truth"], data.labels(), data.grid)
    print(f"synth: {len(data.trips)} trips, {len(data.events)} planted events -> {targets['trips'].parent}")
    return []


def cmd_ingest(env: Env, args) -> list[Path]:
    trips = read_trips_csv(env.source("trips"))
    cube = build_count_cube(trips, env.cfg.grid)
    out = env.artifact("cube.bin")
    cube.save(out)
    print(f"ingest: {len(trips)} trips, {cube.skipped} outside the grid or period")
    return [out]


def cmd_baseline(env: Env, args) -> list[Path]:
    cube = with_baselines(CountCube.load(require(env, "ingest", "cube.bin")), env.cfg)
    out = env.artifact("baseline.bin")
    cube.save(out)
    csv_path = env.artifact("baseline.csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", "slot", "pickup_baseline", "drop_baseline"])
        for cell in range(cube.config.n_cells):
            r, c = cube.config.cell_rc(cell)
            for s in range(cube.config.steps_per_day):
                w.writerow([r, c, s, repr(float(cube.pickup_baseline[cell, s])), repr(float(cube.drop_baseline[cell, s]))])
    return [out, csv_path]


def cmd_score(env: Env, args) -> list[Path]:
    cube = _cube(env)
    lo, hi = step_range(env.cfg, "test") if args.start is None else (args.start, args.stop)
    g = cube.config
    heat = llr_map(cube.pickup_counts, cube.pickup_baseline_series(), lo, hi, (g.rows, g.cols))
    out = env.artifact("llr_heatmap.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", *[f"col_{c}" for c in range(g.cols)]])
        for r in range(g.rows):
            w.writerow([r, *[repr(float(v)) for v in heat[r]]])
    print(f"score: LLR heat map over steps [{lo}, {hi}), max {heat.max():.2f}")
    return [out]


def cmd_label(env: Env, args) -> list[Path]:
    cube = _cube(env)
    labels = ground_truth(cube, env.cfg)
    out = env.artifact("labels.csv")
    write_labels_csv(out, labels, env.cfg.grid)
    print(f"label: {len(labels)} events")
    return [out]


def cmd_build_datasets(env: Env, args) -> list[Path]:
    datasets = build_datasets(_context(env), env.cfg)
    outs = []
    for name, ds in datasets.items():
        path = env.artifact(f"{name}.bin")
        ds.save(path)
        outs += [path, Path(str(path) + ".index.csv"), Path(str(path) + ".schema.json")]
        print(f"build-datasets: {dataset_summary(ds)}")
    return outs


def cmd_train(env: Env, args) -> list[Path]:
    datasets = {k: SequenceDataset.load(require(env, "datasets", f"{k}.bin")) for k in ("fa", "fs", "fe")}
    models = train_models(datasets, env.cfg)
    outs = []
    for name in ("fa", "fs", "fe"):
        est = getattr(models, name)
        path = env.artifact(f"{name}.model")
        est.save(path)
        outs.append(path)
        print(f"train: {name} final loss {est.history[-1]:.6f}")
    return outs


def cmd_tune(env: Env, args) -> list[Path]:
    ctx = _context(env)
    models = _models(env)
    cfg = env.cfg
    pred = DilsaPredictor(ctx, models.fa, models.fs, models.fe, cfg.predictor)
    a, b, lo, hi = issue_window(cfg, "tune", ctx.T)
    run = pred.run(a, b)
    truth = _truth(env)
    gamma, gs = tune_threshold(run.curves, run.t_lo, "dilsa", cfg.tune.gamma_candidates, truth, lo, hi, cfg.predictor.eps)
    sigma, ss = tune_threshold(run.curves, run.t_lo, "dil", cfg.tune.sigma_candidates, truth, lo, hi, cfg.predictor.eps)
    out = env.artifact("tune.json")
    out.write_text(json.dumps({"gamma": gamma, "sigma": sigma}, sort_keys=True) + "\n")
    scores = env.artifact("tune_scores.csv")
    with open(scores, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rule", "threshold", "f1", "time_error_steps"])
        for rule, rows in (("dilsa", gs), ("dil", ss)):
            for c, f, t in rows:
                w.writerow([rule, repr(c), repr(f), repr(t)])
    print(f"tune: gamma {gamma}, sigma {sigma}")
    return [out, scores]


def cmd_predict(env: Env, args) -> list[Path]:
    tuned = json.loads(require(env, "tune", "tune.json").read_text())
    ctx = _context(env)
    models = _models(env)
    cfg = env.cfg
    pred = DilsaPredictor(ctx, models.fa, models.fs, models.fe, cfg.predictor)
    a, b, _, _ = issue_window(cfg, "test", ctx.T)
    run = pred.run(a, b)
    outs = []
    for name, mode, thr in (("predictions.csv", "dilsa", tuned["gamma"]), ("dil_predictions.csv", "dil", tuned["sigma"])):
        alarms = pred.predictions(run, mode, thr)
        path = env.artifact(name)
        write_predictions_csv(path, alarms, cfg.grid)
        outs.append(path)
        if mode == "dilsa":
            n_alarms, cold = len(alarms), run.stats.get("cold_warmups", 0)
            curve_dir = env.artifact("curves")
            curve_dir.mkdir(exist_ok=True)
            for old in sorted(curve_dir.glob("*.csv")):
                old.unlink()
            for al in alarms[: args.max_curves]:
                r, c = cfg.grid.cell_rc(al.cell)
                p = curve_dir / f"curve_r{r}_c{c}_t{al.issued_at}.csv"
                write_curve_csv(p, al.issued_at, al.survival, cfg.predictor.eps)
                outs.append(p)
    print(f"predict: {n_alarms} alarms over issue times [{a}, {b}), {cold} cold warm-ups")
    return outs


def cmd_evaluate(env: Env, args) -> list[Path]:
    cfg = env.cfg
    preds = {}
    for name in ("predictions.csv", "dil_predictions.csv"):
        path = env.artifact(name)
        if not path.exists():
            raise StageError("missing-input", f"{path} (run `dilsa predict` first)")
        preds[name] = read_predictions_csv(require(env, "predict", name), cfg.grid)
    cube = _cube(env)
    truth = _truth(env)
    _, _, lo, hi = issue_window(cfg, "test", cube.n_steps)
    counts = cube.pickup_counts.astype(np.float64)
    base = cube.pickup_baseline_series()
    minutes = cfg.grid.timestep_minutes
    rep = evaluate(preds["predictions.csv"], truth, lo, hi, minutes, counts, base)
    dil = evaluate(preds["dil_predictions.csv"], truth, lo, hi, minutes)
    outs = []
    for name, text in (
        ("report.txt", "DILSA\n" + rep.table() + "\n\nDIL\n" + dil.table() + "\n"),
        ("report.csv", rep.to_csv()),
        ("report_dil.csv", dil.to_csv()),
        ("demand_steps.csv", rep.steps_csv()),
    ):
        path = env.artifact(name)
        path.write_text(text)
        outs.append(path)
    print(rep.table())
    return outs


def cmd_ablate(env: Env, args) -> list[Path]:
    cfg = env.cfg
    cube = CountCube.load(require(env, "ingest", "cube.bin"))
    weather = read_weather_csv(env.source("weather"))
    poi = read_poi_csv(env.source("poi"), cfg.grid)
    flags = tuple(args.flags.split(",")) if args.flags else ABLATION_FLAGS
    results = ablation_run(cube, weather, poi, cfg, flags)
    W = cfg.events.horizon
    out = env.artifact("ablation.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["flags", "input_size", "n_instances", "fe_rmse", "fs_rmse",
                    *[f"fe_rmse_{j + 1}" for j in range(W)], *[f"fs_rmse_{j + 1}" for j in range(W)]])
        for r in results:
            w.writerow([r.flags, r.input_size, r.n_instances, repr(r.fe_rmse), repr(r.fs_rmse),
                        *[repr(float(x)) for x in r.fe_rmse_steps], *[repr(float(x)) for x in r.fs_rmse_steps]])
    print(f"ablate: {len(results)} feature sets -> {out}")
    return [out]


COMMANDS = {
    "synth": (cmd_synth, "generate synthetic trips, weather, POI and planted truth into the [paths] files"),
    "ingest": (cmd_ingest, "aggregate trips into the count cube (cube.bin)"),
    "baseline": (cmd_baseline, "per-slot baselines over the training days (baseline.bin, baseline.csv)"),
    "score": (cmd_score, "LLR heat map over a step range (llr_heatmap.csv)"),
    "label": (cmd_label, "event labels from the significance scan (labels.csv)"),
    "build-datasets": (cmd_build_datasets, "training sets for the anomaly, survival and demand models (fa/fs/fe.bin)"),
    "train": (cmd_train, "fit the three recurrent estimators (fa/fs/fe.model)"),
    "tune": (cmd_tune, "pick the hazard and survival thresholds on the tuning days (tune.json)"),
    "predict": (cmd_predict, "alarms and demand forecasts over the test days (predictions.csv, curves/)"),
    "evaluate": (cmd_evaluate, "precision, recall, F1, time error and demand errors (report.*)"),
    "ablate": (cmd_ablate, "retrain per feature-flag set and report per-step RMSE (ablation.csv)"),
}
STAGE_OF = {"build-datasets": "datasets"}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dilsa", description=__doc__, epilog=FORMATS,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", required=True, help="INI config file")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=FORMATS,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        if name == "score":
            p.add_argument("--start", type=int, help="first timestep (default: test split start)")
            p.add_argument("--stop", type=int, help="end timestep, exclusive")
        if name == "predict":
            p.add_argument("--max-curves", type=int, default=20, help="survival/hazard curve CSVs to write")
        if name == "ablate":
            p.add_argument("--flags", help="comma-separated feature sets over R, D, P (default: all eight)")
    return ap


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)
    try:
        try:
            cfg = load_config(args.config)
        except FileNotFoundError as err:
            raise StageError("missing-input", str(err), 2) from None
        except ValueError as err:
            raise StageError("config", str(err), 2) from None
        env = Env(cfg, Path(args.config).resolve().parent)
        if args.command == "score" and (args.start is None) != (args.stop is None):
            raise StageError("usage", "--start and --stop go together", 2)
        env.out.mkdir(parents=True, exist_ok=True)
        fn = COMMANDS[args.command][0]
        outputs = fn(env, args)
        write_manifest(env, STAGE_OF.get(args.command, args.command), outputs)
    except StageError as err:
        print(f"error: {err.kind}: {err}", file=sys.stderr)
        return err.code
    except (FileNotFoundError, ValueError, FloatingPointError) as err:
        print(f"error: {type(err).__name__}: {' '.join(str(err).split())}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())
