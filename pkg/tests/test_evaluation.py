from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dilsa.evaluation import (
    demand_errors,
    evaluate,
    match_events,
    merge_alarms,
    precision_recall_f1,
    read_predictions_csv,
    time_error,
    tune_threshold,
    write_predictions_csv,
)
from dilsa.grid import GridConfig
from dilsa.predictor import EventPrediction, flags_for
from dilsa.survival import EventLabel


@dataclass
class P:
    cell: int
    start: int
    end: int
    issued_at: int


def lab(cell, start, end):
    return EventLabel(cell, start, end)


def alarm(cell, t_c, i, W=4, demand=None):
    d = np.zeros(W) if demand is None else np.asarray(demand, float)
    return EventPrediction(cell, t_c, t_c + i, flags_for(i, W), d, np.zeros(W), np.ones(W))


def test_overlap_is_tp():
    m = match_events([P(0, 13, 17, 9)], [lab(0, 10, 14)])
    assert (m.tp, m.fp, m.fn) == (1, 0, 0)


def test_adjacent_is_fp_and_fn():
    m = match_events([P(0, 15, 17, 11)], [lab(0, 10, 14)])
    assert (m.tp, m.fp, m.fn) == (0, 1, 1)
    assert match_events([P(0, 14, 17, 11)], [lab(0, 10, 14)]).tp == 0


def test_duplicate_predictions_one_tp():
    m = match_events([P(0, 12, 16, 9), P(0, 11, 13, 8)], [lab(0, 10, 14)])
    assert (m.tp, m.fp, m.fn) == (1, 1, 0)
    assert m.pairs == [(1, 0)]  # earliest issued wins


def test_other_cell_never_matches():
    m = match_events([P(1, 10, 14, 5)], [lab(0, 10, 14)])
    assert (m.tp, m.fp, m.fn) == (0, 1, 1)


def test_prf_values():
    assert precision_recall_f1(3, 1, 2) == pytest.approx((0.75, 0.6, 2 * 0.75 * 0.6 / 1.35))
    assert precision_recall_f1(0, 0, 0) == (0.0, 0.0, 0.0)
    assert precision_recall_f1(0, 4, 0) == (0.0, 0.0, 0.0)


def test_time_error_examples():
    assert time_error([10, 20], [10, 20], 30) == 0
    assert time_error([11, 23], [10, 20], 30) == 60
    assert time_error([8, 12], [10, 10], 30) == 60
    assert time_error([], [], 30) is None


def test_demand_error_examples():
    z = demand_errors([[3.0, 4.0]], [[3.0, 4.0]])
    assert (z.mae, z.mape, z.rmse) == (0, 0, 0)
    e = demand_errors([12.0], [10.0])
    assert e.mae == 2 and e.mape == pytest.approx(0.2) and e.rmse == 2
    ex = demand_errors([[5.0, 12.0]], [[0.0, 10.0]])
    assert ex.mape_excluded == 1 and ex.mape == pytest.approx(0.2)
    assert ex.mae == pytest.approx(3.5) and ex.rmse == pytest.approx(np.sqrt(14.5))
    with pytest.raises(ValueError):
        demand_errors([1.0, 2.0], [1.0])


def test_merge_chains_overlapping_alarms():
    alarms = [alarm(0, 10, 3), alarm(0, 11, 2), alarm(0, 12, 1), alarm(0, 20, 2), alarm(1, 10, 1)]
    events = merge_alarms(alarms)
    got = {(e.cell, e.start, e.end, e.members) for e in events}
    assert got == {(0, 13, 16, (0, 1, 2)), (0, 22, 24, (3,)), (1, 11, 14, (4,))}


def test_evaluate_end_to_end_scenario():
    alarms = [alarm(0, 8, 2), alarm(0, 9, 1), alarm(1, 30, 3), alarm(2, 50, 1)]
    labels = [lab(0, 11, 13), lab(1, 31, 35), lab(3, 40, 42), lab(0, 200, 202)]
    rep = evaluate(alarms, labels, 0, 100, 30.0)
    assert (rep.tp, rep.fp, rep.fn) == (2, 1, 1)
    assert rep.precision == pytest.approx(2 / 3) and rep.recall == pytest.approx(2 / 3)
    # chain at cell 0 starts at 10 (true 11), cell 1 at 33 (true 31)
    assert rep.time_error_minutes == pytest.approx(45.0)
    assert "precision" in rep.table() and rep.to_csv().startswith("metric")


def test_evaluate_demand_on_matched_chains():
    counts = np.zeros((2, 40))
    counts[0, 11:15] = 10
    base = np.full((2, 40), 2.0)
    alarms = [alarm(0, 10, 1, demand=[10, 10, 10, 10]), alarm(1, 20, 1, demand=[99, 99, 99, 99])]
    rep = evaluate(alarms, [lab(0, 11, 15)], 0, 40, 30.0, counts, base)
    assert rep.demand.mae == 0 and rep.demand.n == 1
    assert rep.baseline_demand.mae == 8


def test_tune_threshold_rules():
    W = 4
    curves = np.ones((1, 20, W))
    curves[0, 5] = [1, 1, 0.2, 0.0]  # hazard 4 at i=3, event at 8
    curves[0, 15] = [1, 0.6, 0.6, 0.6]  # hazard 0.67 at i=2: false alarm below gamma 0.67
    labels = [lab(0, 8, 10)]
    best, scores = tune_threshold(curves, 0, "dilsa", [3.0], labels, 0, 20)
    assert best == 3.0
    best, scores = tune_threshold(curves, 0, "dilsa", [0.5, 3.0, 1e5], labels, 0, 20)
    assert best == 3.0
    assert dict((c, f) for c, f, _ in scores)[1e5] == 0.0
    with pytest.raises(ValueError):
        tune_threshold(curves, 0, "dilsa", [], labels, 0, 20)
    with pytest.raises(ValueError, match="empty"):
        tune_threshold(curves, 0, "dilsa", [1.0], labels, 5, 5)


def test_predictions_csv_round_trip(tmp_path):
    grid = GridConfig(rows=3, cols=4)
    alarms = [alarm(5, 10, 2, demand=[1.5, 2, 3, 4]), alarm(11, 12, 1)]
    write_predictions_csv(tmp_path / "p.csv", alarms, grid)
    back = read_predictions_csv(tmp_path / "p.csv", grid)
    assert [(a.cell, a.issued_at, a.predicted_start) for a in back] == [(5, 10, 12), (11, 12, 13)]
    np.testing.assert_allclose(back[0].demand, [1.5, 2, 3, 4])
    with pytest.raises(FileNotFoundError, match="nope.csv"):
        read_predictions_csv(tmp_path / "nope.csv", grid)


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 50), st.integers(1, 5)), max_size=12),
       st.lists(st.tuples(st.integers(0, 3), st.integers(0, 50), st.integers(1, 5)), max_size=12))
def test_match_counts_consistent(preds, labs):
    P_ = [P(c, s, s + d, s - 1) for c, s, d in preds]
    L_ = [lab(c, s, s + d) for c, s, d in labs]
    m = match_events(P_, L_)
    assert m.tp + m.fp == len(P_) and m.tp + m.fn == len(L_)
    assert len({j for _, j in m.pairs}) == m.tp
    p, r, f = precision_recall_f1(m.tp, m.fp, m.fn)
    assert 0 <= f <= max(p, r) + 1e-12 and f >= min(p, r) - 1e-12 or f == 0
    # cell relabeling leaves counts unchanged
    m2 = match_events([P((x.cell + 1) % 4, x.start, x.end, x.issued_at) for x in P_],
                      [lab((x.cell + 1) % 4, x.start, x.end) for x in L_])
    assert (m2.tp, m2.fp, m2.fn) == (m.tp, m.fp, m.fn)
