import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dilsa.datasets import SequenceDataset
from dilsa.estimators import (
    EstimatorState,
    LSTMLayer,
    RecurrentRegressor,
    TrainConfig,
    clip_gradients,
    clone,
    load_estimator,
    logistic_baseline,
    mlp_baseline,
)
from dilsa.features import FeatureLayout


def toy_dataset(X, Y, seg_len=None):
    X = np.asarray(X, np.float32)
    Y = np.asarray(Y, np.float32)
    n = len(X)
    seg_len = seg_len or n
    starts = np.arange(0, n, seg_len)
    segs = np.stack([starts, np.minimum(starts + seg_len, n)], axis=1)
    lay = FeatureLayout("xs", (("Q", X.shape[1]),))
    return SequenceDataset("toy", lay, X, Y, np.zeros(n, np.int64), np.arange(n), segs)


def test_zero_weights_sigmoid_gives_half():
    m = RecurrentRegressor(5, (4,), 3, "sigmoid")
    m.zero_weights()
    np.testing.assert_allclose(m.predict(np.ones(5)), 0.5)
    mlp = mlp_baseline(5, (3,), 2, "sigmoid")
    mlp.zero_weights()
    np.testing.assert_allclose(mlp.predict(np.ones(5)), 0.5)


def test_state_carries_across_calls():
    m = RecurrentRegressor(3, (6,), 2, seed=1)
    x = np.array([0.3, -0.2, 0.8])
    a = m.predict(x)
    b = m.predict(x)
    assert not np.allclose(a, b)
    m.reset_state()
    np.testing.assert_allclose(m.predict(x), a)


def test_snapshot_restore(tmp_path):
    m = RecurrentRegressor(3, (5, 4), 2, seed=2)
    for v in np.linspace(-1, 1, 4):
        m.predict(np.full(3, v))
    snap = m.snapshot_state()
    nxt = m.predict(np.ones(3))
    snap.save(tmp_path / "state.bin")
    m.reset_state()
    m.restore_state(EstimatorState.load(tmp_path / "state.bin"))
    np.testing.assert_array_equal(m.predict(np.ones(3)), nxt)


def test_batched_predict_matches_single_streams():
    m = RecurrentRegressor(4, (5,), 3, seed=3)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(2, 6, 4))
    batch = m.predict_sequence(X)
    for b in range(2):
        m.reset_state()
        np.testing.assert_allclose(m.predict_sequence(X[b : b + 1])[0], batch[b], atol=1e-12)
    with pytest.raises(ValueError, match="expected 4"):
        m.predict(np.ones(3))


def _numeric_grad(f, p, h=1e-6):
    g = np.zeros_like(p)
    it = np.nditer(p, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = p[i]
        p[i] = old + h
        up = f()
        p[i] = old - h
        down = f()
        p[i] = old
        g[i] = (up - down) / (2 * h)
    return g


@pytest.mark.parametrize("act,loss", [("linear", "mse"), ("sigmoid", "mse"), ("sigmoid", "bce")])
def test_recurrent_gradients(act, loss):
    rng = np.random.default_rng(4)
    m = RecurrentRegressor(3, (4, 3), 2, act, seed=5)
    X = rng.normal(size=(2, 5, 3))
    Y = rng.uniform(size=(2, 5, 2))
    mask = np.ones((2, 5), bool)
    mask[1, 3:] = False
    state = [(rng.normal(size=(2, h)) * 0.1, rng.normal(size=(2, h)) * 0.1) for h in (4, 3)]
    _, grads, _ = m.loss_and_grads(X, Y, mask, state, loss)
    for p, g in zip(m.params(), grads):
        num = _numeric_grad(lambda: m.loss_and_grads(X, Y, mask, state, loss)[0], p)
        np.testing.assert_allclose(g, num, rtol=1e-4, atol=1e-7)


def test_mlp_gradients():
    rng = np.random.default_rng(6)
    m = mlp_baseline(4, (3,), 2, seed=1)
    X, Y = rng.normal(size=(7, 4)), rng.normal(size=(7, 2))
    _, grads = m.loss_and_grads(X, Y, np.ones(7))
    for p, g in zip(m.params(), grads):
        num = _numeric_grad(lambda: m.loss_and_grads(X, Y, np.ones(7))[0], p)
        np.testing.assert_allclose(g, num, rtol=1e-4, atol=1e-8)


def test_lstm_forget_bias_starts_at_one():
    layer = LSTMLayer(3, 4, np.random.default_rng(0))
    b = layer.params()[-1]
    np.testing.assert_array_equal(b[4:8], 1.0)


def test_fit_constant_target():
    rng = np.random.default_rng(7)
    X = rng.uniform(size=(256, 4))
    ds = toy_dataset(X, np.full((256, 3), 0.7), seg_len=32)
    m = RecurrentRegressor(4, (8,), 3, "sigmoid", seed=0)
    hist = m.fit(ds, TrainConfig(epochs=40, lr=1e-2, bptt=8, batch_size=4))
    assert hist[-1] < hist[0]
    out = m.predict_sequence(X[None, :32])[0]
    assert np.abs(out - 0.7).max() < 0.05


def test_fit_deterministic_for_seed():
    rng = np.random.default_rng(8)
    X = rng.uniform(size=(64, 3))
    ds = toy_dataset(X, X[:, :2], seg_len=16)
    cfg = TrainConfig(epochs=3, bptt=4, batch_size=2, seed=11)
    a = RecurrentRegressor(3, (5,), 2, seed=3)
    b = RecurrentRegressor(3, (5,), 2, seed=3)
    a.fit(ds, cfg)
    b.fit(ds, cfg)
    for p, q in zip(a.params(), b.params()):
        np.testing.assert_array_equal(p, q)


def test_train_config_validation():
    with pytest.raises(ValueError, match="epochs"):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError, match="loss"):
        TrainConfig(loss="hinge")


def test_linear_mlp_fits_linear_map():
    rng = np.random.default_rng(9)
    X = rng.uniform(size=(400, 3))
    Y = X @ np.array([[1.0, -2.0], [0.5, 0.0], [3.0, 1.0]]) + 0.25
    m = mlp_baseline(3, (), 2, seed=0)
    m.fit(toy_dataset(X, Y), TrainConfig(epochs=300, lr=3e-2, bptt=1, batch_size=100))
    pred = m.predict(X)
    r2 = 1 - ((pred - Y) ** 2).sum() / ((Y - Y.mean(axis=0)) ** 2).sum()
    assert r2 > 0.99


def test_logistic_learns_threshold():
    rng = np.random.default_rng(10)
    X = rng.uniform(-1, 1, size=(400, 2))
    Y = np.stack([(X[:, 0] > 0), (X[:, 1] > 0)], axis=1).astype(float)
    m = logistic_baseline(2, 2)
    m.fit(toy_dataset(X, Y), TrainConfig(epochs=200, lr=5e-2, bptt=1, batch_size=100, loss="bce"))
    assert ((m.predict(X) > 0.5) == Y.astype(bool)).mean() > 0.95


@pytest.mark.parametrize("make", [
    lambda: RecurrentRegressor(3, (4,), 2, "sigmoid", seed=1),
    lambda: mlp_baseline(3, (4,), 2, seed=1),
    lambda: logistic_baseline(3, 2, seed=1),
])
def test_save_load_bit_exact(tmp_path, make):
    rng = np.random.default_rng(12)
    X = rng.uniform(size=(40, 3))
    m = make()
    m.fit(toy_dataset(X, (X[:, :2] > 0.5).astype(float), seg_len=10), TrainConfig(epochs=2, bptt=5, batch_size=2))
    m.save(tmp_path / "m.bin")
    back = load_estimator(tmp_path / "m.bin")
    assert type(back) is type(m)
    m.reset_state()
    np.testing.assert_array_equal(back.predict(X[:5]) if back.kind != "recurrent" else back.predict_sequence(X[None, :5]),
                                  m.predict(X[:5]) if m.kind != "recurrent" else m.predict_sequence(X[None, :5]))
    assert back.history == m.history


def test_clone_is_independent():
    m = RecurrentRegressor(2, (3,), 1, seed=0)
    c = clone(m)
    c.params()[0][...] = 0
    assert np.abs(m.params()[0]).sum() > 0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=6), st.floats(0.1, 10))
def test_clip_gradients_bounds_norm(vals, cap):
    grads = [np.array(vals, dtype=float), np.array(vals[::-1], dtype=float)]
    before = np.sqrt(sum((g**2).sum() for g in grads))
    clip_gradients(grads, cap)
    after = np.sqrt(sum((g**2).sum() for g in grads))
    assert after <= cap + 1e-9 or np.isclose(after, before)
