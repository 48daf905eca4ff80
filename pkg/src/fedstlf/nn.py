"""Stacked LSTM forecaster written directly against numpy.

Column-vector convention throughout: a step input is ``(I, B)``, hidden and
cell states are ``(H, B)`` where ``B`` is the number of windows processed
together. A single window is just ``B == 1``.

Gate blocks along the ``4H`` axis are always ordered input, forget,
candidate, output.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, FedStlfError, ShapeError, UsageError

GATE_ORDER = ("i", "f", "g", "o")
DEFAULT_LOOK_BACK = 12

CHECKPOINT_MAGIC = b"FLSM"
CHECKPOINT_VERSION = 1


class NonFiniteError(FedStlfError, ArithmeticError):
    """A parameter tree picked up NaN or Inf."""


def _frozen(a, shape=None) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if shape is not None and arr.shape != shape:
        raise ShapeError(f"expected shape {shape}, got {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class LstmLayerParams:
    W_x: np.ndarray
    W_h: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        W_x = np.asarray(self.W_x, dtype=np.float64)
        if W_x.ndim != 2 or W_x.shape[0] % 4 != 0 or W_x.shape[0] == 0:
            raise ShapeError(f"W_x must be (4H, I), got {W_x.shape}")
        hidden = W_x.shape[0] // 4
        object.__setattr__(self, "W_x", _frozen(W_x))
        object.__setattr__(self, "W_h", _frozen(self.W_h, (4 * hidden, hidden)))
        b = np.asarray(self.b, dtype=np.float64)
        if b.shape == (4 * hidden,):
            b = b.reshape(-1, 1)
        object.__setattr__(self, "b", _frozen(b, (4 * hidden, 1)))

    @property
    def input_dim(self) -> int:
        return self.W_x.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W_h.shape[1]

    def gate_slice(self, gate: str) -> slice:
        k = GATE_ORDER.index(gate)
        H = self.hidden_dim
        return slice(k * H, (k + 1) * H)


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the stacked LSTM plus its linear dense head."""

    lstm_layers: tuple[LstmLayerParams, ...]
    dense_W: np.ndarray
    dense_b: float

    def __post_init__(self):
        layers = tuple(self.lstm_layers)
        if not layers:
            raise ShapeError("a model needs at least one LSTM layer")
        if layers[0].input_dim != 1:
            raise ShapeError("first layer must take a scalar feature (input_dim 1)")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.input_dim != prev.hidden_dim:
                raise ShapeError(
                    f"layer input_dim {nxt.input_dim} != previous hidden_dim {prev.hidden_dim}"
                )
        object.__setattr__(self, "lstm_layers", layers)
        object.__setattr__(
            self, "dense_W", _frozen(self.dense_W, (1, layers[-1].hidden_dim))
        )
        object.__setattr__(self, "dense_b", float(self.dense_b))
        for arr in self.arrays():
            if not np.all(np.isfinite(arr)):
                raise NonFiniteError("non-finite value in model parameters")

    @property
    def widths(self) -> tuple[int, ...]:
        return (1,) + tuple(layer.hidden_dim for layer in self.lstm_layers)

    def arrays(self) -> list[np.ndarray]:
        """All parameter arrays in canonical flatten order."""
        out = []
        for layer in self.lstm_layers:
            out.extend((layer.W_x, layer.W_h, layer.b))
        out.append(self.dense_W)
        out.append(np.array([self.dense_b]))
        return out

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        if self.widths != other.widths:
            return False
        return bool(np.array_equal(flatten(self), flatten(other)))

    __hash__ = None


# Gradients share the parameter tree layout.
Gradients = ModelParams


def _check_widths(layer_widths: Sequence[int]) -> tuple[int, ...]:
    try:
        widths = tuple(int(w) for w in layer_widths)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"layer widths must be integers: {layer_widths!r}") from exc
    if len(widths) < 2:
        raise ConfigurationError("layer widths need the input width plus at least one LSTM layer")
    if any(w <= 0 for w in widths):
        raise ConfigurationError(f"layer widths must be positive: {widths}")
    if widths[0] != 1:
        raise ConfigurationError("input width must be 1 (scalar load feature)")
    return widths


def param_count(layer_widths: Sequence[int]) -> int:
    widths = _check_widths(layer_widths)
    total = 0
    for I, H in zip(widths, widths[1:]):
        total += 4 * H * I + 4 * H * H + 4 * H
    return total + widths[-1] + 1


def init_params(layer_widths: Sequence[int], seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases except the forget gate (1.0)."""
    widths = _check_widths(layer_widths)
    rng = np.random.default_rng(seed)

    def glorot(rows, cols):
        limit = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-limit, limit, size=(rows, cols))

    layers = []
    for I, H in zip(widths, widths[1:]):
        b = np.zeros((4 * H, 1))
        b[H : 2 * H] = 1.0
        layers.append(LstmLayerParams(glorot(4 * H, I), glorot(4 * H, H), b))
    return ModelParams(tuple(layers), glorot(1, widths[-1]), 0.0)


def zeros_like(m: ModelParams) -> ModelParams:
    return unflatten(np.zeros(param_count(m.widths)), m.widths)


def flatten(m: ModelParams) -> np.ndarray:
    return np.concatenate([a.ravel() for a in m.arrays()])


def unflatten(v, shape_spec: Sequence[int]) -> ModelParams:
    widths = _check_widths(shape_spec)
    v = np.asarray(v, dtype=np.float64)
    expected = param_count(widths)
    if v.ndim != 1 or v.size != expected:
        raise ShapeError(f"flat vector must have length {expected}, got shape {v.shape}")
    pos = 0

    def take(rows, cols):
        nonlocal pos
        block = v[pos : pos + rows * cols].reshape(rows, cols)
        pos += rows * cols
        return block

    layers = []
    for I, H in zip(widths, widths[1:]):
        W_x = take(4 * H, I)
        W_h = take(4 * H, H)
        b = take(4 * H, 1)
        layers.append(LstmLayerParams(W_x, W_h, b))
    dense_W = take(1, widths[-1])
    return ModelParams(tuple(layers), dense_W, v[pos])


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_cell_forward(p: LstmLayerParams, x_t, h_prev, c_prev):
    """One gated step. Returns ``(h, c, cache)``."""
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    I, H = p.input_dim, p.hidden_dim
    if x_t.ndim != 2 or x_t.shape[0] != I:
        raise ShapeError(f"x_t must be ({I}, B), got {x_t.shape}")
    B = x_t.shape[1]
    if h_prev.shape != (H, B) or c_prev.shape != (H, B):
        raise ShapeError(
            f"states must be ({H}, {B}), got {h_prev.shape} and {c_prev.shape}"
        )
    z = p.W_x @ x_t + p.W_h @ h_prev + p.b
    i = _sigmoid(z[0:H])
    f = _sigmoid(z[H : 2 * H])
    g = np.tanh(z[2 * H : 3 * H])
    o = _sigmoid(z[3 * H : 4 * H])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, (x_t, h_prev, c_prev, i, f, g, o, tanh_c)


def lstm_cell_backward(p: LstmLayerParams, cache, dh, dc):
    """Backward through one step.

    ``dh`` and ``dc`` are the total upstream gradients on this step's outputs.
    Returns ``(dx, dh_prev, dc_prev, dW_x, dW_h, db)``.
    """
    x_t, h_prev, c_prev, i, f, g, o, tanh_c = cache
    do = dh * tanh_c
    dc = dc + dh * o * (1.0 - tanh_c * tanh_c)
    di = dc * g
    dg = dc * i
    df = dc * c_prev
    dc_prev = dc * f
    dz = np.concatenate(
        (di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o))
    )
    dW_x = dz @ x_t.T
    dW_h = dz @ h_prev.T
    db = dz.sum(axis=1, keepdims=True)
    dx = p.W_x.T @ dz
    dh_prev = p.W_h.T @ dz
    return dx, dh_prev, dc_prev, dW_x, dW_h, db


@dataclass
class ForwardCache:
    params: ModelParams
    steps: list = field(default_factory=list)  # per layer, per time step
    h_last: np.ndarray | None = None
    batched: bool = False


def _as_batch(window, look_back):
    X = np.asarray(window, dtype=np.float64)
    batched = X.ndim == 2
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ShapeError(f"window must be 1-D or (B, T), got shape {X.shape}")
    if look_back is not None and X.shape[1] != look_back:
        raise ShapeError(f"window length {X.shape[1]} != look-back {look_back}")
    if X.shape[1] == 0:
        raise ShapeError("empty window")
    return X, batched


def model_forward(m: ModelParams, window, look_back: int | None = DEFAULT_LOOK_BACK):
    """Unroll all layers over ``window`` from zero states.

    ``window`` is one sequence of scalars (returns a float prediction) or a
    ``(B, T)`` array of windows (returns a length-``B`` array).
    """
    X, batched = _as_batch(window, look_back)
    B, T = X.shape
    cache = ForwardCache(params=m, batched=batched)
    inputs = [X[:, t][None, :] for t in range(T)]
    for layer in m.lstm_layers:
        H = layer.hidden_dim
        h = np.zeros((H, B))
        c = np.zeros((H, B))
        outs, steps = [], []
        for x_t in inputs:
            h, c, step = lstm_cell_forward(layer, x_t, h, c)
            outs.append(h)
            steps.append(step)
        cache.steps.append(steps)
        inputs = outs
    cache.h_last = inputs[-1]
    pred = (m.dense_W @ cache.h_last).ravel() + m.dense_b
    if not batched:
        return float(pred[0]), cache
    return pred, cache


def predict(m: ModelParams, X, look_back: int | None = None) -> np.ndarray:
    """Batched predictions in scaled units, shape ``(B,)``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        return np.zeros(0)
    pred, _ = model_forward(m, X, look_back=look_back)
    return pred


def mse_loss(pred, target):
    """Squared error and its derivative w.r.t. ``pred``.

    For array inputs the loss is the batch mean and the derivative is that of
    the mean.
    """
    if np.ndim(pred) == 0 and np.ndim(target) == 0:
        diff = float(pred) - float(target)
        return diff * diff, 2.0 * diff
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} and target {target.shape} differ")
    diff = pred - target
    n = diff.size
    return float(np.mean(diff * diff)), 2.0 * diff / n


def model_backward(m: ModelParams, caches: ForwardCache, dloss_dpred) -> Gradients:
    """Backpropagation through time over every step and layer."""
    if not isinstance(caches, ForwardCache) or caches.params is not m or caches.h_last is None:
        raise UsageError("caches do not belong to a forward pass of these params")
    B = caches.h_last.shape[1]
    dpred = np.asarray(dloss_dpred, dtype=np.float64).reshape(1, -1)
    if dpred.shape[1] != B:
        raise ShapeError(f"dloss_dpred has {dpred.shape[1]} entries, batch is {B}")

    dense_W = dpred @ caches.h_last.T
    dense_b = float(dpred.sum())

    T = len(caches.steps[0])
    d_outs = [None] * T
    d_outs[-1] = m.dense_W.T @ dpred
    layer_grads = []
    for layer, steps in zip(reversed(m.lstm_layers), reversed(caches.steps)):
        H = layer.hidden_dim
        gW_x = np.zeros_like(layer.W_x)
        gW_h = np.zeros_like(layer.W_h)
        gb = np.zeros_like(layer.b)
        dh_next = np.zeros((H, B))
        dc_next = np.zeros((H, B))
        d_inputs = [None] * T
        for t in range(T - 1, -1, -1):
            dh = dh_next if d_outs[t] is None else dh_next + d_outs[t]
            dx, dh_next, dc_next, dW_x, dW_h, db = lstm_cell_backward(
                layer, steps[t], dh, dc_next
            )
            gW_x += dW_x
            gW_h += dW_h
            gb += db
            d_inputs[t] = dx
        layer_grads.append(LstmLayerParams(gW_x, gW_h, gb))
        d_outs = d_inputs
    return ModelParams(tuple(reversed(layer_grads)), dense_W, dense_b)


def batch_gradient(m: ModelParams, X, y, look_back: int | None = None):
    """Mean-squared-error loss and its gradient over a batch of windows."""
    pred, cache = model_forward(m, np.atleast_2d(X), look_back=look_back)
    loss, dpred = mse_loss(pred, np.asarray(y, dtype=np.float64).reshape(pred.shape))
    return loss, model_backward(m, cache, dpred)


def _congruent(a: ModelParams, b: ModelParams):
    if a.widths != b.widths:
        raise ShapeError(f"parameter trees differ in shape: {a.widths} vs {b.widths}")


def sgd_step(m: ModelParams, g: Gradients, lr: float) -> ModelParams:
    _congruent(m, g)
    return unflatten(flatten(m) - lr * flatten(g), m.widths)


@dataclass(frozen=True)
class AdamState:
    m: ModelParams
    v: ModelParams
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: ModelParams, **hyper) -> "AdamState":
        zero = zeros_like(params)
        return cls(m=zero, v=zero, **hyper)


def adam_step(m: ModelParams, g: Gradients, s: AdamState, lr: float):
    """One bias-corrected Adam update. Returns ``(params, state)``."""
    _congruent(m, g)
    _congruent(m, s.m)
    _congruent(m, s.v)
    t = s.t + 1
    grad = flatten(g)
    first = s.beta1 * flatten(s.m) + (1.0 - s.beta1) * grad
    second = s.beta2 * flatten(s.v) + (1.0 - s.beta2) * grad * grad
    m_hat = first / (1.0 - s.beta1**t)
    v_hat = second / (1.0 - s.beta2**t)
    new = flatten(m) - lr * m_hat / (np.sqrt(v_hat) + s.eps)
    state = AdamState(
        m=unflatten(first, m.widths),
        v=unflatten(second, m.widths),
        t=t,
        beta1=s.beta1,
        beta2=s.beta2,
        eps=s.eps,
    )
    return unflatten(new, m.widths), state


def checkpoint_bytes(m: ModelParams) -> bytes:
    widths = m.widths
    vec = flatten(m)
    header = CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(widths))
    header += struct.pack(f"<{len(widths)}I", *widths)
    header += struct.pack("<Q", vec.size)
    return header + vec.astype("<f8").tobytes()


def params_from_checkpoint_bytes(data: bytes) -> ModelParams:
    if data[:4] != CHECKPOINT_MAGIC:
        raise UsageError("not a model checkpoint (bad magic)")
    try:
        version, count = struct.unpack_from("<II", data, 4)
        if version != CHECKPOINT_VERSION:
            raise UsageError(f"unsupported checkpoint version {version}")
        widths = struct.unpack_from(f"<{count}I", data, 12)
        pos = 12 + 4 * count
        (length,) = struct.unpack_from("<Q", data, pos)
    except struct.error as exc:
        raise UsageError("truncated checkpoint header") from exc
    pos += 8
    body = data[pos:]
    if len(body) != 8 * length:
        raise UsageError(f"checkpoint body has {len(body)} bytes, expected {8 * length}")
    vec = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return unflatten(vec, widths)


def save_checkpoint(m: ModelParams, path) -> Path:
    path = Path(path)
    path.write_bytes(checkpoint_bytes(m))
    return path


def load_checkpoint(path) -> ModelParams:
    return params_from_checkpoint_bytes(Path(path).read_bytes())


def checksum(m: ModelParams) -> str:
    return hashlib.sha256(flatten(m).astype("<f8").tobytes()).hexdigest()[:16]
