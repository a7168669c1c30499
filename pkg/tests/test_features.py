import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dilsa.features import (
    FeatureConfig,
    FeatureContext,
    Standardizer,
    build_xa,
    build_xs,
    build_ye,
    build_ys,
    layout,
    vector_length,
)
from oracles import xa_length, xs_length


def test_full_size_length():
    assert vector_length("xs", 10, 10, 4, 129) == 1944
    assert layout("xs", FeatureConfig(), 129).size == 1944
    assert layout("xa", FeatureConfig(), 129).size == xa_length(10, 10, 4, 129)


@given(st.integers(1, 12), st.integers(0, 6), st.integers(0, 3), st.integers(0, 20), st.booleans(), st.booleans(), st.booleans())
def test_layout_lengths(W, tau, radius, n_poi, r, d, p):
    cfg = FeatureConfig(horizon=W, tau=tau, radius=radius, use_recent=r, use_daily=d, use_poi=p)
    assert layout("xs", cfg, n_poi).size == xs_length(W, tau, radius, n_poi, r, d, p)
    assert layout("xe", cfg, n_poi).blocks == layout("xs", cfg, n_poi).blocks
    names = [n for n, _ in layout("xs", cfg, n_poi).blocks]
    assert names[:2] == ["Q", "W"] and names[-1] == "S"


def test_schema_json_round_trip():
    lay = layout("xs", FeatureConfig(tau=2, radius=1), 3)
    schema = json.loads(lay.to_json())
    assert [b["name"] for b in schema["blocks"]] == ["Q", "W", "M", "G", "F", "V", "N", "S"]
    assert sum(b["length"] for b in schema["blocks"]) == lay.size


def test_xs_components(small_ctx):
    ctx = small_ctx
    W, tau = ctx.cfg.horizon, ctx.cfg.tau
    t_c, cell = 100, 7
    F = np.arange(W, dtype=float)
    x = build_xs(ctx, cell, t_c, F, 0.25)
    s = ctx.layout("xs").slices()
    assert len(x) == ctx.layout("xs").size
    spd = ctx.grid.steps_per_day
    day = t_c // spd
    assert x[s["Q"]].tolist() == [day + 1, ctx.grid.day_date(day).weekday(), t_c % spd]
    t_d = day * spd
    assert x[s["M"]][0] == ctx.cube.pickup_counts[cell, t_d:t_c].sum()
    assert x[s["M"]][3] == pytest.approx(ctx.db[cell, t_d:t_c].sum())
    np.testing.assert_allclose(x[s["G"]], ctx.pb[cell, t_c + 1 : t_c + W + 1])
    np.testing.assert_allclose(x[s["F"]], F)
    np.testing.assert_array_equal(x[s["V"]], ctx.poi[cell])
    assert x[s["S"]][0] == 0.25
    n = x[s["N"]].reshape(9, tau + 1, 2)
    # patch centre is the cell itself: interleaved (pickup, drop) from t_c - tau
    np.testing.assert_array_equal(n[4, :, 0], ctx.cube.pickup_counts[cell, t_c - tau : t_c + 1])
    np.testing.assert_array_equal(n[4, :, 1], ctx.cube.drop_counts[cell, t_c - tau : t_c + 1])


def test_corner_patch_zero_padded(small_ctx):
    x = build_xa(small_ctx, 0, 60)
    n = x[small_ctx.layout("xa").slices()["N"]].reshape(3, 3, -1)
    assert (n[0] == 0).all() and (n[:, 0] == 0).all()
    assert n[1:, 1:].sum() > 0


def test_daily_profile_zero_at_day_start(small_ctx):
    spd = small_ctx.grid.steps_per_day
    x = build_xs(small_ctx, 3, 2 * spd, np.zeros(10), 1.0)
    assert (x[small_ctx.layout("xs").slices()["M"]] == 0).all()


def test_degenerate_patch(small_data, small_cube):
    ctx = FeatureContext(small_cube, small_data.weather, small_data.poi, FeatureConfig(tau=0, radius=0))
    x = build_xs(ctx, 2, 30, np.zeros(10), 1.0)
    assert ctx.layout("xs").slices()["N"].stop - ctx.layout("xs").slices()["N"].start == 2
    assert len(x) == ctx.layout("xs").size


def test_xa_recent_anomaly_and_determinism(small_ctx):
    x1 = build_xa(small_ctx, 4, 80)
    x2 = build_xa(small_ctx, 4, 80)
    np.testing.assert_array_equal(x1, x2)
    F = x1[small_ctx.layout("xa").slices()["F"]]
    np.testing.assert_allclose(F, small_ctx.llr[4, 80 - small_ctx.cfg.tau + 1 : 81])


def test_quiet_cube_has_zero_anomaly(small_data, small_cube):
    from dilsa.grid import CountCube

    flat = np.ones_like(small_cube.pickup_counts) * 3
    cube = CountCube(small_cube.config, flat, flat.copy(), np.full_like(small_cube.pickup_baseline, 3.0),
                     np.full_like(small_cube.drop_baseline, 3.0))
    ctx = FeatureContext(cube, small_data.weather, small_data.poi, FeatureConfig(tau=3, radius=1))
    assert (build_xa(ctx, 5, 50)[ctx.layout("xa").slices()["F"]] == 0).all()


def test_history_checks(small_ctx):
    with pytest.raises(ValueError, match="history"):
        build_xa(small_ctx, 0, 1)
    with pytest.raises(ValueError):
        build_ye(small_ctx, 0, small_ctx.T - 3)


def test_outputs(small_ctx):
    assert build_ys(np.ones(10)).tolist() == [1.0] * 10
    assert build_ys(np.array([1, 1, 1, 0, 0, 0, 0, 0, 0, 0])).tolist() == [1, 1, 1, 0, 0, 0, 0, 0, 0, 0]
    y = build_ye(small_ctx, 6, 40)
    np.testing.assert_array_equal(y, small_ctx.cube.pickup_counts[6, 41:51])


def test_standardizer_examples():
    sc = Standardizer.fit(np.array([[0.0, 3.0], [10.0, 3.0]]))
    np.testing.assert_allclose(sc.apply(np.array([[10.0, 3.0], [0.0, 3.0], [5.0, 9.0]])), [[1, 0], [0, 0], [0.5, 0]])
    assert sc.apply(np.array([[-5.0, 3.0]]))[0, 0] == -0.5
    with pytest.raises(ValueError):
        Standardizer.fit(np.zeros((0, 2)))


@given(st.lists(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3), min_size=1, max_size=30))
def test_standardized_training_rows_in_unit_range(rows):
    X = np.array(rows)
    Z = Standardizer.fit(X).apply(X)
    assert (Z >= -1e-12).all() and (Z <= 1 + 1e-12).all()
