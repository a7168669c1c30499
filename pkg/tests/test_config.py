import dataclasses
from pathlib import Path

import pytest

from dilsa.config import PipelineConfig, benchmark_config, load_config, stage_hash

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_defaults_match_parameter_table():
    cfg = PipelineConfig()
    assert (cfg.events.alpha, cfg.events.e_min, cfg.events.e_max, cfg.events.horizon) == (0.001, 1, 10, 10)
    assert cfg.features.tau == 10 and cfg.features.radius == 4
    assert cfg.grid.timestep_minutes == 30


@pytest.mark.parametrize("name", ["benchmark", "smoke"])
def test_example_configs_round_trip(name):
    cfg = load_config(CONFIGS / f"{name}.ini")
    assert load_config(text=cfg.to_ini()) == cfg


def test_benchmark_config_values():
    cfg = benchmark_config()
    assert (cfg.grid.rows, cfg.grid.cols, cfg.grid.days) == (20, 20, 60)
    assert (cfg.synth.n_events, cfg.synth.magnitude, cfg.synth.base_rate, cfg.synth.lag) == (40, 8.0, 5.0, 4)
    assert (cfg.split.train_end, cfg.split.tune_end, cfg.split.test_end) == (40, 45, 60)


def test_every_problem_reported():
    text = "[grid]\nrows = x\nbogus = 1\n[events]\nalpha = 2\n[nope]\na = 1\n[run]\nseed = q\n"
    with pytest.raises(ValueError) as err:
        load_config(text=text)
    msg = str(err.value)
    for part in ("rows", "bogus", "alpha", "[nope]", "seed"):
        assert part in msg


def test_split_checks():
    with pytest.raises(ValueError, match="split"):
        load_config(text="[split]\ntrain_end = 400\ntune_start = 365\n")
    with pytest.raises(FileNotFoundError, match="missing.ini"):
        load_config("/nonexistent/missing.ini")


def test_stage_hash_scoping():
    a = PipelineConfig()
    b = dataclasses.replace(a, predictor=dataclasses.replace(a.predictor, gamma=5.0))
    assert stage_hash(a, "datasets") == stage_hash(b, "datasets")
    assert stage_hash(a, "predict") != stage_hash(b, "predict")
    c = dataclasses.replace(a, seed=3)
    assert stage_hash(a, "ingest") == stage_hash(c, "ingest")
    assert stage_hash(a, "train") != stage_hash(c, "train")
