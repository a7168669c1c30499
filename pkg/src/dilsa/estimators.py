"""From-scratch regressors: a stateful LSTM stack and stateless baselines.

All share one interface: ``fit(dataset, cfg)``, ``predict(x)`` (advances the
recurrent state for stateful models), ``reset_state``, ``snapshot_state`` /
``restore_state`` and ``save`` / ``load``. Arithmetic is float64 throughout.

Recurrent training replays each dataset segment as an independent stream,
starting from a zero state, in truncated chunks of ``cfg.bptt`` steps; the
state is carried across chunks without gradient. Up to ``cfg.batch_size``
streams are processed side by side.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .features import Standardizer
from .io import read_blob, write_blob

log = logging.getLogger(__name__)

MODEL_MAGIC = b"DILSAEST"
STATE_MAGIC = b"DILSAST\x00"
ACTIVATIONS = ("sigmoid", "linear")
LOSSES = ("mse", "bce")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    hidden: tuple = (32,)
    bptt: int = 16
    batch_size: int = 64
    clip_norm: float = 5.0
    loss: str = "mse"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        problems = self.problems()
        if problems:
            raise ValueError("invalid TrainConfig: " + "; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if self.epochs < 1:
            out.append(f"epochs must be >= 1 (got {self.epochs})")
        if self.lr <= 0:
            out.append("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            out.append("beta1, beta2 must lie in [0, 1)")
        if self.bptt < 1 or self.batch_size < 1:
            out.append("bptt and batch_size must be >= 1")
        if any(h < 1 for h in self.hidden):
            out.append("hidden sizes must be >= 1")
        if self.loss not in LOSSES:
            out.append(f"loss must be one of {LOSSES}")
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# -- layers ------------------------------------------------------------------


class Dense:
    """Affine map on the last axis."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None):
        bound = 1.0 / np.sqrt(n_in)
        self.W = rng.uniform(-bound, bound, (n_in, n_out)) if rng is not None else np.zeros((n_in, n_out))
        self.b = np.zeros(n_out)

    def params(self) -> list[np.ndarray]:
        return [self.W, self.b]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return x @ self.W + self.b, x

    def backward(self, dout: np.ndarray, cache: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        x = cache
        x2 = x.reshape(-1, x.shape[-1])
        d2 = dout.reshape(-1, dout.shape[-1])
        return dout @ self.W.T, [x2.T @ d2, d2.sum(axis=0)]


class LSTMLayer:
    """LSTM with gate order (input, forget, cell, output) packed in one matrix."""

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator | None):
        bound = 1.0 / np.sqrt(n_in + n_hidden)
        H = n_hidden
        if rng is not None:
            self.Wx = rng.uniform(-bound, bound, (n_in, 4 * H))
            self.Wh = rng.uniform(-bound, bound, (H, 4 * H))
        else:
            self.Wx = np.zeros((n_in, 4 * H))
            self.Wh = np.zeros((H, 4 * H))
        self.b = np.zeros(4 * H)
        self.b[H : 2 * H] = 1.0 if rng is not None else 0.0
        self.H = H

    def params(self) -> list[np.ndarray]:
        return [self.Wx, self.Wh, self.b]

    def forward(self, X: np.ndarray, h: np.ndarray, c: np.ndarray):
        """X is (B, L, n_in); returns hidden sequence (B, L, H), final (h, c) and a cache."""
        B, L, _ = X.shape
        H = self.H
        zx = X @ self.Wx + self.b
        hs = np.empty((B, L, H))
        cache = []
        for t in range(L):
            z = zx[:, t] + h @ self.Wh
            i = sigmoid(z[:, :H])
            f = sigmoid(z[:, H : 2 * H])
            g = np.tanh(z[:, 2 * H : 3 * H])
            o = sigmoid(z[:, 3 * H :])
            c_new = f * c + i * g
            tc = np.tanh(c_new)
            h_new = o * tc
            cache.append((h, c, i, f, g, o, tc))
            h, c = h_new, c_new
            hs[:, t] = h
        return hs, (h, c), (X, cache)

    def backward(self, dhs: np.ndarray, cache) -> tuple[np.ndarray, list[np.ndarray]]:
        X, steps = cache
        B, L, _ = X.shape
        H = self.H
        dWh = np.zeros_like(self.Wh)
        dz_all = np.empty((B, L, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in range(L - 1, -1, -1):
            h_prev, c_prev, i, f, g, o, tc = steps[t]
            dh = dhs[:, t] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dz = np.concatenate(
                [di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=1
            )
            dz_all[:, t] = dz
            dWh += h_prev.T @ dz
            dh_next = dz @ self.Wh.T
            dc_next = dc * f
        dz2 = dz_all.reshape(B * L, 4 * H)
        dWx = X.reshape(B * L, -1).T @ dz2
        db = dz2.sum(axis=0)
        dX = dz_all @ self.Wx.T
        return dX, [dWx, dWh, db]


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, beta1: float, beta2: float, eps: float):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr = np.sqrt(1 - b2**self.t) / (1 - b1**self.t)
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * corr * m / (np.sqrt(v) + self.eps)


def clip_gradients(grads: list[np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if max_norm > 0 and norm > max_norm:
        for g in grads:
            g *= max_norm / norm
    return norm


# -- loss ---------------------------------------------------------------------


def head_loss(z: np.ndarray, y: np.ndarray, mask: np.ndarray, activation: str, loss: str):
    """Masked loss of pre-activations `z` against `y`, and its gradient w.r.t. `z`.

    `mask` broadcasts over the output axis; the loss is averaged over
    unmasked entries.
    """
    out = sigmoid(z) if activation == "sigmoid" else z
    m = np.broadcast_to(mask[..., None], z.shape).astype(np.float64)
    n = max(m.sum(), 1.0)
    if loss == "bce":
        if activation != "sigmoid":
            raise ValueError("binary cross-entropy needs a sigmoid head")
        p = np.clip(out, 1e-12, 1 - 1e-12)
        value = -float((m * (y * np.log(p) + (1 - y) * np.log(1 - p))).sum()) / n
        return value, m * (out - y) / n
    diff = out - y
    value = float((m * diff * diff).sum()) / n
    dout = 2.0 * m * diff / n
    if activation == "sigmoid":
        dout = dout * out * (1.0 - out)
    return value, dout


# -- estimator state ------------------------------------------------------------


@dataclass
class EstimatorState:
    """Recurrent activations, one (h, c) pair per layer; empty for stateless models."""

    arrays: list = field(default_factory=list)

    def save(self, path: str | Path) -> None:
        write_blob(path, STATE_MAGIC, {"n": len(self.arrays)}, {f"s{i}": a for i, a in enumerate(self.arrays)})

    @classmethod
    def load(cls, path: str | Path) -> "EstimatorState":
        meta, arrays = read_blob(path, STATE_MAGIC)
        return cls([arrays[f"s{i}"] for i in range(meta["n"])])


# -- estimators ---------------------------------------------------------------


class Estimator:
    """Common plumbing: input scaling, output scaling, persistence."""

    kind = "base"
    stateful = False

    def __init__(self, input_dim: int, output_dim: int, output_activation: str):
        if input_dim < 1 or output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if output_activation not in ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {ACTIVATIONS}")
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.output_activation = output_activation
        self.scaler: Standardizer | None = None
        self.y_scale = np.ones(output_dim)
        self.history: list[float] = []

    # subclasses provide layers(), _forward_train, _backward, _step
    def layers(self) -> list:
        raise NotImplementedError

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers() for p in layer.params()]

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def _prep(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"input has length {x.shape[-1]}, expected {self.input_dim}")
        return self.scaler.apply(x) if self.scaler is not None else x

    def _finish(self, z: np.ndarray) -> np.ndarray:
        if self.output_activation == "sigmoid":
            return sigmoid(z)
        return z * self.y_scale

    def _target_scale(self, Y: np.ndarray) -> np.ndarray:
        if self.output_activation == "sigmoid":
            return np.ones(self.output_dim)
        peak = np.abs(Y).max(axis=0) if len(Y) else np.ones(self.output_dim)
        return np.where(peak > 0, peak, 1.0)

    def _setup_fit(self, dataset, scaler: Standardizer | None) -> tuple[np.ndarray, np.ndarray]:
        if dataset.X.shape[1] != self.input_dim:
            raise ValueError(f"dataset has {dataset.X.shape[1]} columns, estimator expects {self.input_dim}")
        if len(dataset) == 0:
            raise ValueError("cannot fit on an empty dataset")
        self.scaler = scaler if scaler is not None else Standardizer.fit(dataset.X)
        self.y_scale = self._target_scale(np.asarray(dataset.Y, dtype=np.float64))
        X = self.scaler.apply(dataset.X)
        Y = np.asarray(dataset.Y, dtype=np.float64) / self.y_scale
        return X, Y

    def reset_state(self) -> None:
        pass

    def snapshot_state(self) -> EstimatorState:
        return EstimatorState()

    def restore_state(self, state: EstimatorState) -> None:
        pass

    def save(self, path: str | Path) -> None:
        meta = {
            "kind": self.kind,
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "output_activation": self.output_activation,
            "arch": self._arch(),
            "history": self.history,
        }
        arrays = {f"p{i}": p for i, p in enumerate(self.params())}
        arrays["y_scale"] = self.y_scale
        if self.scaler is not None:
            arrays["scaler_lo"] = self.scaler.lo
            arrays["scaler_hi"] = self.scaler.hi
        write_blob(path, MODEL_MAGIC, meta, arrays)

    def _arch(self) -> dict:
        return {}


def _load_common(est: Estimator, meta: dict, arrays: dict) -> Estimator:
    for i, p in enumerate(est.params()):
        q = arrays[f"p{i}"]
        if q.shape != p.shape:
            raise ValueError(f"parameter {i} has shape {q.shape}, expected {p.shape}")
        p[...] = q
    est.y_scale = arrays["y_scale"]
    if "scaler_lo" in arrays:
        est.scaler = Standardizer(arrays["scaler_lo"], arrays["scaler_hi"])
    est.history = list(meta["history"])
    return est


class RecurrentRegressor(Estimator):
    """LSTM stack with a dense head; keeps per-stream state between predict calls."""

    kind = "recurrent"
    stateful = True

    def __init__(self, input_dim: int, hidden_dims, output_dim: int, output_activation: str = "linear", seed: int = 0):
        super().__init__(input_dim, output_dim, output_activation)
        hidden_dims = tuple(int(h) for h in hidden_dims)
        if not hidden_dims or min(hidden_dims) < 1:
            raise ValueError("need at least one recurrent layer with >= 1 unit")
        self.hidden_dims = hidden_dims
        self.seed = seed
        self._init_layers(np.random.default_rng(seed))
        self.state: list | None = None

    def _init_layers(self, rng: np.random.Generator | None) -> None:
        dims = (self.input_dim,) + self.hidden_dims
        self.lstm = [LSTMLayer(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        self.head = Dense(self.hidden_dims[-1], self.output_dim, rng)

    def zero_weights(self) -> None:
        self._init_layers(None)

    def layers(self) -> list:
        return self.lstm + [self.head]

    def _arch(self) -> dict:
        return {"hidden_dims": list(self.hidden_dims), "seed": self.seed}

    def _zero_state(self, batch: int) -> list:
        return [(np.zeros((batch, layer.H)), np.zeros((batch, layer.H))) for layer in self.lstm]

    # -- core forward/backward on padded stream chunks -------------------------

    def forward_chunk(self, X: np.ndarray, state: list):
        """Pre-activations for X (B, L, D) (already scaled) from `state`."""
        caches = []
        new_state = []
        h = X
        for layer, (h0, c0) in zip(self.lstm, state):
            h, st, cache = layer.forward(h, h0, c0)
            caches.append(cache)
            new_state.append(st)
        z, head_cache = self.head.forward(h)
        return z, new_state, (caches, head_cache)

    def backward_chunk(self, dz: np.ndarray, caches) -> list[np.ndarray]:
        lstm_caches, head_cache = caches
        dh, head_grads = self.head.backward(dz, head_cache)
        grads: list[list[np.ndarray]] = []
        for layer, cache in zip(reversed(self.lstm), reversed(lstm_caches)):
            dh, g = layer.backward(dh, cache)
            grads.append(g)
        return [g for gs in reversed(grads) for g in gs] + head_grads

    def loss_and_grads(self, X, Y, mask, state=None, loss: str = "mse"):
        """Loss over one chunk and gradients for every parameter (finite-difference checkable)."""
        X = np.asarray(X, dtype=np.float64)
        state = state if state is not None else self._zero_state(X.shape[0])
        z, new_state, caches = self.forward_chunk(X, state)
        value, dz = head_loss(z, Y, mask, self.output_activation, loss)
        return value, self.backward_chunk(dz, caches), new_state

    # -- interface -------------------------------------------------------------

    def reset_state(self) -> None:
        self.state = None

    def snapshot_state(self) -> EstimatorState:
        if self.state is None:
            return EstimatorState()
        return EstimatorState([a.copy() for pair in self.state for a in pair])

    def restore_state(self, state: EstimatorState) -> None:
        if not state.arrays:
            self.state = None
            return
        a = [x.copy() for x in state.arrays]
        self.state = [(a[2 * i], a[2 * i + 1]) for i in range(len(self.lstm))]

    def predict(self, x: np.ndarray) -> np.ndarray:
        """One step for a single stream (x of shape (D,)) or for B streams ((B, D))."""
        x = np.asarray(x)
        single = x.ndim == 1
        Xs = self._prep(x.reshape(1, -1) if single else x)
        B = Xs.shape[0]
        if self.state is None:
            self.state = self._zero_state(B)
        elif self.state[0][0].shape[0] != B:
            raise ValueError(f"state holds {self.state[0][0].shape[0]} streams, got {B} inputs")
        z, self.state, _ = self.forward_chunk(Xs[:, None, :], self.state)
        out = self._finish(z[:, 0])
        return out[0] if single else out

    def predict_sequence(self, X: np.ndarray) -> np.ndarray:
        """Run (B, L, D) inputs step by step from the current state; returns (B, L, W)."""
        X = np.asarray(X)
        return np.stack([self.predict(X[:, t]) for t in range(X.shape[1])], axis=1)

    def fit(self, dataset, cfg: TrainConfig, scaler: Standardizer | None = None) -> list[float]:
        X, Y = self._setup_fit(dataset, scaler)
        rng = np.random.default_rng(cfg.seed)
        opt = Adam(self.params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
        segs = np.asarray(dataset.segments)
        self.history = []
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(segs))
            total, weight = 0.0, 0.0
            for a in range(0, len(order), cfg.batch_size):
                batch = segs[order[a : a + cfg.batch_size]]
                lengths = batch[:, 1] - batch[:, 0]
                L = int(lengths.max())
                idx = batch[:, :1] + np.arange(L)[None, :]
                valid = np.arange(L)[None, :] < lengths[:, None]
                idx = np.where(valid, idx, batch[:, :1])
                state = self._zero_state(len(batch))
                for s in range(0, L, cfg.bptt):
                    sl = slice(s, min(s + cfg.bptt, L))
                    m = valid[:, sl]
                    value, grads, state = self.loss_and_grads(X[idx[:, sl]], Y[idx[:, sl]], m, state, cfg.loss)
                    if not np.isfinite(value):
                        raise FloatingPointError(f"non-finite loss at epoch {epoch + 1}, stream offset {s}")
                    clip_gradients(grads, cfg.clip_norm)
                    opt.step(grads)
                    n = float(m.sum())
                    total += value * n
                    weight += n
            self.history.append(total / max(weight, 1.0))
            log.info("%s epoch %d loss %.6f", self.kind, epoch + 1, self.history[-1])
        self.reset_state()
        return self.history

    @classmethod
    def load(cls, path: str | Path) -> "RecurrentRegressor":
        meta, arrays = read_blob(path, MODEL_MAGIC)
        if meta["kind"] != cls.kind:
            raise ValueError(f"{path} holds a {meta['kind']} model")
        est = cls(meta["input_dim"], meta["arch"]["hidden_dims"], meta["output_dim"], meta["output_activation"], meta["arch"]["seed"])
        return _load_common(est, meta, arrays)


class MLPRegressor(Estimator):
    """Stateless feed-forward net (tanh hidden layers); hidden=() is a linear model."""

    kind = "mlp"

    def __init__(self, input_dim: int, hidden_dims, output_dim: int, output_activation: str = "linear", seed: int = 0):
        super().__init__(input_dim, output_dim, output_activation)
        self.hidden_dims = tuple(int(h) for h in hidden_dims)
        self.seed = seed
        rng = np.random.default_rng(seed)
        dims = (input_dim,) + self.hidden_dims + (output_dim,)
        self.dense = [Dense(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    def layers(self) -> list:
        return self.dense

    def zero_weights(self) -> None:
        for d in self.dense:
            d.W[...] = 0.0
            d.b[...] = 0.0

    def _arch(self) -> dict:
        return {"hidden_dims": list(self.hidden_dims), "seed": self.seed}

    def forward(self, X: np.ndarray):
        caches = []
        h = X
        for i, d in enumerate(self.dense):
            z, cache = d.forward(h)
            caches.append(cache)
            h = np.tanh(z) if i < len(self.dense) - 1 else z
            if i < len(self.dense) - 1:
                caches.append(h)
        return h, caches

    def loss_and_grads(self, X, Y, mask, loss: str = "mse"):
        X = np.asarray(X, dtype=np.float64)
        z, caches = self.forward(X)
        value, dz = head_loss(z, Y, mask, self.output_activation, loss)
        grads: list[list[np.ndarray]] = []
        d = dz
        for i in range(len(self.dense) - 1, -1, -1):
            if i < len(self.dense) - 1:
                act = caches[2 * i + 1]
                d = d * (1.0 - act * act)
            d, g = self.dense[i].backward(d, caches[2 * i])
            grads.append(g)
        return value, [g for gs in reversed(grads) for g in gs]

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        single = x.ndim == 1
        z, _ = self.forward(self._prep(x.reshape(1, -1) if single else x))
        out = self._finish(z)
        return out[0] if single else out

    def fit(self, dataset, cfg: TrainConfig, scaler: Standardizer | None = None) -> list[float]:
        X, Y = self._setup_fit(dataset, scaler)
        rng = np.random.default_rng(cfg.seed)
        opt = Adam(self.params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
        rows = cfg.batch_size * cfg.bptt
        self.history = []
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(X))
            total = 0.0
            for a in range(0, len(order), rows):
                sel = order[a : a + rows]
                value, grads = self.loss_and_grads(X[sel], Y[sel], np.ones(len(sel)), cfg.loss)
                if not np.isfinite(value):
                    raise FloatingPointError(f"non-finite loss at epoch {epoch + 1}")
                clip_gradients(grads, cfg.clip_norm)
                opt.step(grads)
                total += value * len(sel)
            self.history.append(total / len(X))
        return self.history

    @classmethod
    def load(cls, path: str | Path) -> "MLPRegressor":
        meta, arrays = read_blob(path, MODEL_MAGIC)
        if meta["kind"] != cls.kind:
            raise ValueError(f"{path} holds a {meta['kind']} model")
        est = cls(meta["input_dim"], meta["arch"]["hidden_dims"], meta["output_dim"], meta["output_activation"], meta["arch"]["seed"])
        return _load_common(est, meta, arrays)


class LogisticRegressor(MLPRegressor):
    """Independent sigmoid output per horizon step on a linear score."""

    kind = "logistic"

    def __init__(self, input_dim: int, output_dim: int, seed: int = 0):
        super().__init__(input_dim, (), output_dim, "sigmoid", seed)

    @classmethod
    def load(cls, path: str | Path) -> "LogisticRegressor":
        meta, arrays = read_blob(path, MODEL_MAGIC)
        if meta["kind"] != cls.kind:
            raise ValueError(f"{path} holds a {meta['kind']} model")
        return _load_common(cls(meta["input_dim"], meta["output_dim"], meta["arch"]["seed"]), meta, arrays)


def recurrent_regressor(input_dim, hidden_dims, output_dim, output_activation="linear", seed=0) -> RecurrentRegressor:
    return RecurrentRegressor(input_dim, hidden_dims, output_dim, output_activation, seed)


def mlp_baseline(input_dim, hidden_dims, output_dim, output_activation="linear", seed=0) -> MLPRegressor:
    return MLPRegressor(input_dim, hidden_dims, output_dim, output_activation, seed)


def logistic_baseline(input_dim, output_dim, seed=0) -> LogisticRegressor:
    return LogisticRegressor(input_dim, output_dim, seed)


def load_estimator(path: str | Path) -> Estimator:
    meta, _ = read_blob(path, MODEL_MAGIC)
    cls = {"recurrent": RecurrentRegressor, "mlp": MLPRegressor, "logistic": LogisticRegressor}[meta["kind"]]
    return cls.load(path)


def clone(est: Estimator) -> Estimator:
    """Independent copy sharing nothing (weights and state)."""
    return copy.deepcopy(est)
