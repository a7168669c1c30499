"""Synthetic end-to-end benchmark: generate, train, tune, test; prints a JSON summary.

    python3 scripts/run_benchmark.py [--seed 0] [--truth planted|labels] [--epochs-scale 1.0]
"""

import argparse
import dataclasses
import json
import logging
import time

from dilsa.config import benchmark_config
from dilsa.grid import build_count_cube
from dilsa.pipeline import run_benchmark
from dilsa.synth import SynthConfig, generate


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--truth", choices=("planted", "labels"), default="planted")
    ap.add_argument("--epochs-scale", type=float, default=1.0)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    t0 = time.perf_counter()
    cfg = benchmark_config(seed=args.seed, synth=SynthConfig(seed=args.seed))
    if args.epochs_scale != 1.0:
        t = cfg.train
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(
            t,
            epochs_fa=max(1, round(t.epochs_fa * args.epochs_scale)),
            epochs_fs=max(1, round(t.epochs_fs * args.epochs_scale)),
            epochs_fe=max(1, round(t.epochs_fe * args.epochs_scale)),
        ))
    data = generate(cfg.synth)
    cube = build_count_cube(data.trips, data.grid)
    truth = data.labels() if args.truth == "planted" else None
    result, _, _ = run_benchmark(cube, data.weather, data.poi, cfg, truth)
    summary = result.summary()
    summary["seconds_total"] = round(time.perf_counter() - t0, 1)
    summary["gamma_scores"] = result.gamma_scores
    summary["sigma_scores"] = result.sigma_scores
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
