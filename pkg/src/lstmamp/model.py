"""Windowed LSTM regressor: one predicted sample per input window.

Gate blocks are stored stacked in the order f, i, o, g, so that for a layer
``W`` is ``[4H, D]``, ``U`` is ``[4H, H]`` and ``b`` is ``[4H]``. Per-gate
views (``W_f``, ``U_g``, ...) are exposed as properties.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kernels import gate_update
from .tensor import DTYPE, ShapeError, sigmoid

GATES = ("f", "i", "o", "g")

MAGIC = b"LSTMAMP1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIIIIII")

# Inference runs on fixed-size row chunks so every BLAS call has the same
# shape; small row counts switch kernels and change the last bits.
INFER_CHUNK = 64


@dataclass(frozen=True)
class ModelConfig:
    num_step: int = 32
    num_hidden: int = 24
    num_layer: int = 1
    num_feature: int = 1
    sample_rate: int = 16000

    def __post_init__(self):
        for name in ("num_step", "num_hidden", "num_layer", "num_feature", "sample_rate"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.num_layer not in (1, 2):
            raise ValueError(f"num_layer must be 1 or 2, got {self.num_layer}")
        if self.num_feature not in (1, 2):
            raise ValueError(f"num_feature must be 1 or 2, got {self.num_feature}")

    def input_dim(self, layer: int) -> int:
        return self.num_feature if layer == 0 else self.num_hidden


def _gate_view(attr: str, k: int):
    def get(self):
        H = self.num_hidden
        return getattr(self, attr)[k * H:(k + 1) * H]
    return property(get)


@dataclass
class LstmLayerParams:
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    @property
    def num_hidden(self) -> int:
        return self.U.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [self.W, self.U, self.b]

    @classmethod
    def zeros(cls, input_dim: int, num_hidden: int, dtype=DTYPE) -> "LstmLayerParams":
        H = num_hidden
        return cls(np.zeros((4 * H, input_dim), dtype), np.zeros((4 * H, H), dtype),
                   np.zeros(4 * H, dtype))


for _k, _g in enumerate(GATES):
    for _attr in ("W", "U", "b"):
        setattr(LstmLayerParams, f"{_attr}_{_g}", _gate_view(_attr, _k))


@dataclass
class LstmParams:
    layers: list[LstmLayerParams]
    W_out: np.ndarray
    b_out: np.ndarray

    @classmethod
    def zeros(cls, config: ModelConfig, dtype=DTYPE) -> "LstmParams":
        layers = [LstmLayerParams.zeros(config.input_dim(k), config.num_hidden, dtype)
                  for k in range(config.num_layer)]
        return cls(layers, np.zeros((1, config.num_hidden), dtype), np.zeros(1, dtype))

    def arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend(layer.arrays())
        out.extend([self.W_out, self.b_out])
        return out

    def names(self) -> list[str]:
        out = []
        for k in range(len(self.layers)):
            out.extend(f"layers[{k}].{a}" for a in ("W", "U", "b"))
        out.extend(["W_out", "b_out"])
        return out

    def copy(self) -> "LstmParams":
        return self.astype(self.W_out.dtype)

    def astype(self, dtype) -> "LstmParams":
        layers = [LstmLayerParams(*(np.array(a, dtype=dtype) for a in l.arrays()))
                  for l in self.layers]
        return LstmParams(layers, np.array(self.W_out, dtype=dtype),
                          np.array(self.b_out, dtype=dtype))

    def zeros_like(self) -> "LstmParams":
        return self.from_arrays([np.zeros_like(a) for a in self.arrays()])

    def from_arrays(self, arrays: list[np.ndarray]) -> "LstmParams":
        arrays = list(arrays)
        layers = [LstmLayerParams(*arrays[3 * k:3 * k + 3]) for k in range(len(self.layers))]
        return LstmParams(layers, arrays[-2], arrays[-1])

    def count(self) -> int:
        return sum(a.size for a in self.arrays())

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    def locate(self, flat_index: int) -> str:
        """Human readable path of the weight at a position in the flat layout."""
        for name, arr in zip(self.names(), self.arrays()):
            if flat_index < arr.size:
                idx = np.unravel_index(flat_index, arr.shape)
                if name.startswith("layers["):
                    H = self.W_out.shape[1]
                    gate = GATES[idx[0] // H]
                    row = (idx[0] % H,) + tuple(idx[1:])
                    return f"{name}_{gate}{list(row)}"
                return f"{name}{list(idx)}"
            flat_index -= arr.size
        raise IndexError("flat index out of range")

    def check_against(self, config: ModelConfig) -> None:
        if len(self.layers) != config.num_layer:
            raise ShapeError(f"params have {len(self.layers)} layers, config wants {config.num_layer}")
        H = config.num_hidden
        for k, layer in enumerate(self.layers):
            D = config.input_dim(k)
            if layer.W.shape != (4 * H, D) or layer.U.shape != (4 * H, H) or layer.b.shape != (4 * H,):
                raise ShapeError(f"layer {k} parameter shapes do not match config")
        if self.W_out.shape != (1, H) or self.b_out.shape != (1,):
            raise ShapeError("output projection shapes do not match config")


@dataclass
class CellState:
    c: np.ndarray
    h: np.ndarray

    @classmethod
    def zeros(cls, num_hidden: int, batch: int | None = None, dtype=DTYPE) -> "CellState":
        shape = (num_hidden,) if batch is None else (batch, num_hidden)
        return cls(np.zeros(shape, dtype), np.zeros(shape, dtype))


def lstm_cell_step(params: LstmLayerParams, x_n, state: CellState):
    """Advance one LSTM cell by one sample; returns (new_state, y) with y == h."""
    x_n = np.asarray(x_n, dtype=params.W.dtype)
    if x_n.ndim == 0:
        x_n = x_n[None]
    if x_n.shape[-1] != params.input_dim:
        raise ShapeError(f"cell expects input_dim={params.input_dim}, got {x_n.shape[-1]}")
    if state.h.shape[-1] != params.num_hidden or state.c.shape != state.h.shape:
        raise ShapeError("cell state does not match num_hidden")
    H = params.num_hidden
    z = x_n @ params.W.T + state.h @ params.U.T + params.b
    gates = sigmoid(z[..., :3 * H])
    f, i, o = gates[..., :H], gates[..., H:2 * H], gates[..., 2 * H:]
    g = np.tanh(z[..., 3 * H:])
    c = f * state.c + i * g
    h = o * np.tanh(c)
    return CellState(c, h), h


@dataclass
class LayerCache:
    X: np.ndarray       # [T, D, B] layer input
    acts: np.ndarray    # [T, 4H, B] post-activation f, i, o, g
    C: np.ndarray       # [T, H, B] cell states
    TC: np.ndarray      # [T, H, B] tanh(c)
    Hs: np.ndarray      # [T, H, B] hidden outputs


def _half_scale(layer: LstmLayerParams):
    # sigmoid(z) == 0.5 * tanh(z / 2) + 0.5; halving the f, i, o rows (exact in
    # binary floating point) lets one tanh call cover all four gates.
    H = layer.num_hidden
    scale = np.ones((4 * H, 1), layer.W.dtype)
    scale[:3 * H] = 0.5
    return layer.W * scale, layer.U * scale, layer.b * scale[:, 0]


def layer_forward(layer: LstmLayerParams, X: np.ndarray, keep_cache: bool = False):
    """Unroll one layer over a feature-major batch ``X`` of shape [T, D, B].

    Every window starts from zero state. Returns the hidden sequence
    [T, H, B] and, when asked, the activations needed for BPTT.
    """
    T, _, B = X.shape
    H = layer.num_hidden
    dtype = layer.W.dtype
    Ws, Us, bs = _half_scale(layer)
    Zx = np.matmul(Ws, X)
    Zx += bs[:, None]
    Hs = np.empty((T, H, B), dtype)
    if keep_cache:
        acts = np.empty((T, 4 * H, B), dtype)
        C = np.empty((T, H, B), dtype)
        TC = np.empty((T, H, B), dtype)
    else:
        a = np.empty((4 * H, B), dtype)
        cells = np.empty((2, H, B), dtype)
        tc = np.empty((H, B), dtype)
    for t in range(T):
        if keep_cache:
            a, c, tc = acts[t], C[t], TC[t]
            c_prev = C[t - 1] if t else c
        else:
            c, c_prev = cells[t % 2], cells[(t - 1) % 2]
        if t:
            np.dot(Us, Hs[t - 1], out=a)
            a += Zx[t]
        else:
            a[...] = Zx[t]
        np.tanh(a, out=a)
        gate_update(a, c_prev, c, t == 0)
        np.tanh(c, out=tc)
        np.multiply(a[2 * H:3 * H], tc, out=Hs[t])
    if keep_cache:
        return Hs, LayerCache(X, acts, C, TC, Hs)
    return Hs, None


def _as_inputs(batch) -> np.ndarray:
    return np.asarray(getattr(batch, "inputs", batch))


def _check_batch(config: ModelConfig, X: np.ndarray) -> None:
    if X.ndim != 3 or X.shape[1] != config.num_step or X.shape[2] != config.num_feature:
        raise ShapeError(f"expected batch [B, {config.num_step}, {config.num_feature}], "
                         f"got {list(X.shape)}")


def forward_features(params: LstmParams, Xf: np.ndarray) -> np.ndarray:
    """Predictions for a feature-major batch [T, F, B]."""
    seq = Xf
    for layer in params.layers:
        seq, _ = layer_forward(layer, seq)
    return params.W_out[0] @ seq[-1] + params.b_out[0]


def forward_batch(config: ModelConfig, params: LstmParams, batch) -> np.ndarray:
    """Predict one sample per window of a [B, num_step, num_feature] batch."""
    X = _as_inputs(batch)
    _check_batch(config, X)
    params.check_against(config)
    dtype = params.W_out.dtype
    B = X.shape[0]
    out = np.empty(B, dtype)
    T, F = X.shape[1], X.shape[2]
    chunk = np.empty((T, F, INFER_CHUNK), dtype)
    for start in range(0, B, INFER_CHUNK):
        stop = min(start + INFER_CHUNK, B)
        n = stop - start
        chunk[..., :n] = X[start:stop].transpose(1, 2, 0)
        chunk[..., n:] = 0.0
        out[start:stop] = forward_features(params, chunk)[:n]
    return out


def forward_window(config: ModelConfig, params: LstmParams, window) -> float:
    window = np.asarray(window)
    if window.ndim == 1 and config.num_feature == 1:
        window = window[:, None]
    if window.shape != (config.num_step, config.num_feature):
        raise ShapeError(f"expected window [{config.num_step}, {config.num_feature}], "
                         f"got {list(window.shape)}")
    return float(forward_batch(config, params, window[None])[0])


# -- persistence -----------------------------------------------------------

class ModelFileError(Exception):
    code = 10


class BadMagicError(ModelFileError):
    code = 11


class VersionMismatchError(ModelFileError):
    code = 12


class TruncatedFileError(ModelFileError):
    code = 13


class NonFiniteWeightError(ModelFileError):
    code = 14


def save_model(config: ModelConfig, params: LstmParams, path) -> None:
    params.check_against(config)
    if not params.is_finite():
        raise NonFiniteWeightError("refusing to save non-finite weights")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, config.num_layer, config.num_hidden,
                          config.num_step, config.num_feature, config.sample_rate)
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays())
    Path(path).write_bytes(header + payload)


def load_model(path) -> tuple[ModelConfig, LstmParams]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise BadMagicError(f"{path}: not a model file (bad magic)")
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{path}: header truncated")
    _, version, num_layer, num_hidden, num_step, num_feature, sample_rate = _HEADER.unpack_from(raw)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    try:
        config = ModelConfig(num_step, num_hidden, num_layer, num_feature, sample_rate)
    except ValueError as exc:
        raise ModelFileError(f"{path}: invalid header: {exc}") from exc
    template = LstmParams.zeros(config)
    n = template.count()
    body = raw[_HEADER.size:]
    if len(body) != 8 * n:
        raise TruncatedFileError(f"{path}: expected {8 * n} weight bytes, found {len(body)}")
    flat = np.frombuffer(body, dtype="<f8").astype(DTYPE)
    if not np.isfinite(flat).all():
        raise NonFiniteWeightError(f"{path}: non-finite weight at {template.locate(int(np.argmin(np.isfinite(flat))))}")
    arrays, pos = [], 0
    for a in template.arrays():
        arrays.append(flat[pos:pos + a.size].reshape(a.shape).copy())
        pos += a.size
    return config, template.from_arrays(arrays)
