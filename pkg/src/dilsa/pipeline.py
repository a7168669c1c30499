"""End-to-end orchestration shared by the CLI and the experiment scripts."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .datasets import SequenceDataset, build_fa_dataset, build_fe_dataset, build_fs_dataset, event_blocks
from .estimators import Estimator, RecurrentRegressor
from .evaluation import EvalReport, demand_errors, evaluate, tune_threshold
from .features import FeatureConfig, FeatureContext
from .grid import CountCube, PoiTable, WeatherTable, compute_baselines
from .predictor import DilsaPredictor, PredictionRun
from .survival import label_events, survival_labels

log = logging.getLogger(__name__)


def step_range(cfg: PipelineConfig, name: str) -> tuple[int, int]:
    spd = cfg.grid.steps_per_day
    s = cfg.split
    return getattr(s, f"{name}_start") * spd, getattr(s, f"{name}_end") * spd


def with_baselines(cube: CountCube, cfg: PipelineConfig) -> CountCube:
    return compute_baselines(cube, range(cfg.split.train_start, cfg.split.train_end))


def ground_truth(cube: CountCube, cfg: PipelineConfig) -> list:
    """Event labels from the labeling scan over the whole cube."""
    return label_events(cube.pickup_counts, cube.pickup_baseline_series(), cfg.events)


@dataclass
class Models:
    fa: Estimator
    fs: Estimator
    fe: Estimator
    seconds: dict = field(default_factory=dict)


def build_datasets(ctx: FeatureContext, cfg: PipelineConfig) -> dict[str, SequenceDataset]:
    lo, hi = step_range(cfg, "train")
    hi -= cfg.events.horizon  # targets stay inside the training days
    fs = build_fs_dataset(ctx, cfg.events, lo, hi)
    fa = build_fa_dataset(ctx, cfg.events, lo, hi)
    fe = build_fe_dataset(ctx, cfg.events, lo, hi, fs=fs)
    return {"fs": fs, "fa": fa, "fe": fe}


def train_models(datasets: dict[str, SequenceDataset], cfg: PipelineConfig) -> Models:
    W = cfg.events.horizon
    out = {}
    secs = {}
    for name, act in (("fa", "linear"), ("fs", "sigmoid"), ("fe", "linear")):
        ds = datasets[name]
        tcfg = cfg.train.train_config(name, cfg.seed)
        model = RecurrentRegressor(ds.layout.size, tcfg.hidden, W, act, seed=cfg.seed)
        scaler = out["fs"].scaler if name == "fe" else None
        t0 = time.perf_counter()
        model.fit(ds, tcfg, scaler=scaler)
        secs[name] = time.perf_counter() - t0
        log.info("trained %s on %d rows in %.1fs (final loss %.5f)", name, len(ds), secs[name], model.history[-1])
        out[name] = model
    return Models(out["fa"], out["fs"], out["fe"], secs)


def issue_window(cfg: PipelineConfig, name: str, T: int) -> tuple[int, int, int, int]:
    """(issue_lo, issue_hi, score_lo, score_hi) for a split range.

    Alarms are issued from W steps before the range so that events starting
    at its beginning can be predicted; scoring counts events starting inside.
    """
    lo, hi = step_range(cfg, name)
    W = cfg.events.horizon
    return max(lo - W, cfg.features.tau), min(hi, T - W), lo, hi


@dataclass
class BenchmarkResult:
    gamma: float
    sigma: float
    dilsa: EvalReport
    dil: EvalReport
    gamma_scores: list
    sigma_scores: list
    alarms: list
    dil_alarms: list
    seconds: dict

    def summary(self) -> dict:
        d = {
            "gamma": self.gamma,
            "sigma": self.sigma,
            "dilsa_f1": self.dilsa.f1,
            "dilsa_precision": self.dilsa.precision,
            "dilsa_recall": self.dilsa.recall,
            "dilsa_time_error_minutes": self.dilsa.time_error_minutes,
            "dil_f1": self.dil.f1,
            "dil_time_error_minutes": self.dil.time_error_minutes,
        }
        if self.dilsa.demand is not None:
            d["fe_mae"] = self.dilsa.demand.mae
            d["target_profile_mae"] = self.dilsa.baseline_demand.mae
        d.update({f"seconds_{k}": round(v, 1) for k, v in self.seconds.items()})
        return d


def tune_and_test(ctx: FeatureContext, models: Models, cfg: PipelineConfig, truth: list) -> BenchmarkResult:
    """Tune gamma and sigma on the tuning days, then score both rules on the test days."""
    T = ctx.T
    secs = {}
    pred = DilsaPredictor(ctx, models.fa, models.fs, models.fe, cfg.predictor)
    t0 = time.perf_counter()
    a, b, lo, hi = issue_window(cfg, "tune", T)
    run = pred.run(a, b)
    gamma, gscores = tune_threshold(run.curves, run.t_lo, "dilsa", cfg.tune.gamma_candidates, truth, lo, hi, cfg.predictor.eps)
    sigma, sscores = tune_threshold(run.curves, run.t_lo, "dil", cfg.tune.sigma_candidates, truth, lo, hi, cfg.predictor.eps)
    secs["tune"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    a, b, lo, hi = issue_window(cfg, "test", T)
    run = pred.run(a, b)
    alarms = pred.predictions(run, "dilsa", gamma)
    dil_alarms = pred.predictions(run, "dil", sigma)
    minutes = cfg.grid.timestep_minutes
    counts = ctx.pc
    rep = evaluate(alarms, truth, lo, hi, minutes, counts, ctx.pb)
    rep.extra["cold_warmups"] = run.stats.get("cold_warmups", 0)
    dil = evaluate(dil_alarms, truth, lo, hi, minutes, counts, ctx.pb)
    secs["test"] = time.perf_counter() - t0
    return BenchmarkResult(gamma, sigma, rep, dil, gscores, sscores, alarms, dil_alarms, secs)


def run_benchmark(
    cube: CountCube, weather: WeatherTable, poi: PoiTable, cfg: PipelineConfig, truth: list | None = None
) -> tuple[BenchmarkResult, Models, FeatureContext]:
    """Baselines, datasets, training, tuning and testing in memory.

    `truth` defaults to the labeling scan's events.
    """
    secs = {}
    t0 = time.perf_counter()
    cube = with_baselines(cube, cfg)
    ctx = FeatureContext(cube, weather, poi, cfg.features)
    datasets = build_datasets(ctx, cfg)
    secs["datasets"] = time.perf_counter() - t0
    models = train_models(datasets, cfg)
    secs.update({f"train_{k}": v for k, v in models.seconds.items()})
    if truth is None:
        truth = ground_truth(cube, cfg)
    result = tune_and_test(ctx, models, cfg, truth)
    result.seconds = {**secs, **result.seconds}
    return result, models, ctx


# -- feature ablation ---------------------------------------------------------------


ABLATION_FLAGS = ("RDP", "RD", "RP", "DP", "R", "D", "P", "-")


def feature_config_for(flags: str, base: FeatureConfig) -> FeatureConfig:
    flags = flags.upper()
    bad = set(flags) - set("RDP-")
    if bad:
        raise ValueError(f"unknown feature flags {sorted(bad)}; use letters R, D, P or '-'")
    return dataclasses.replace(base, use_recent="R" in flags, use_daily="D" in flags, use_poi="P" in flags)


@dataclass
class AblationResult:
    flags: str
    input_size: int
    fe_rmse_steps: np.ndarray
    fe_rmse: float
    fs_rmse_steps: np.ndarray
    fs_rmse: float
    n_instances: int


def demand_on_event_blocks(pred: DilsaPredictor, run: PredictionRun, lab_first_zero: np.ndarray, t_lo: int):
    """f_e forecasts on event-only blocks of the range, with predicted inputs.

    Each block is replayed from its first step, as during training; returns
    (forecasts, observed counts) stacked over all block steps.
    """
    W = pred.W
    preds, obs = [], []
    for cell in range(lab_first_zero.shape[0]):
        for a, b in event_blocks(lab_first_zero[cell], W):
            steps = t_lo + np.arange(a, b) - run.stream_start
            pred.f_e.reset_state()
            out = pred.f_e.predict_sequence(run.xs_hist[steps, cell][None])[0]
            preds.append(np.maximum(out, 0.0))
            times = t_lo + np.arange(a, b)
            obs.append(pred.ctx.pc[cell, times[:, None] + np.arange(1, W + 1)[None, :]])
    pred.f_e.reset_state()
    if not preds:
        return np.zeros((0, W)), np.zeros((0, W))
    return np.concatenate(preds), np.concatenate(obs)


def ablation_run(cube: CountCube, weather: WeatherTable, poi: PoiTable, cfg: PipelineConfig, flag_sets=ABLATION_FLAGS) -> list[AblationResult]:
    """Retrain all three estimators per feature-flag combination and score on the test days.

    Reported per-step RMSE: the demand model on event-only blocks of the test
    days, and the survival model against the labeled curves, both fed with
    predicted anomaly profiles and rolling survival estimates.
    """
    cube = with_baselines(cube, cfg)
    out = []
    for flags in flag_sets:
        fcfg = feature_config_for(flags, cfg.features)
        vcfg = dataclasses.replace(cfg, features=fcfg)
        ctx = FeatureContext(cube, weather, poi, fcfg)
        models = train_models(build_datasets(ctx, vcfg), vcfg)
        pred = DilsaPredictor(ctx, models.fa, models.fs, models.fe, vcfg.predictor)
        a, b, lo, hi = issue_window(vcfg, "test", ctx.T)
        a = max(lo, vcfg.events.e_max)
        run = pred.run(a, b)
        lab = survival_labels(cube.pickup_counts, cube.pickup_baseline_series(), vcfg.events, a, b)
        p, y = demand_on_event_blocks(pred, run, lab.first_zero, a)
        de = demand_errors(p, y)
        err = run.curves - lab.curves()
        out.append(
            AblationResult(
                fcfg.flags(), ctx.layout("xs").size, de.rmse_steps, de.rmse,
                np.sqrt((err**2).mean(axis=(0, 1))), float(np.sqrt((err**2).mean())), de.n,
            )
        )
        log.info("ablation %s: fe rmse %.3f, fs rmse %.4f", fcfg.flags(), de.rmse, out[-1].fs_rmse)
    return out

