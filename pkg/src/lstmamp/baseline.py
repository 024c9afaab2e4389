"""Feed-forward baseline on the flattened input window.

Same windows, loss and training loop as the LSTM, so the two can be
compared on equal footing.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, WindowSet
from .model import ModelConfig
from .tensor import DTYPE, Rng
from .training import (EVAL_CHUNK, NumericError, TrainConfig, fit, relative_rmse_percent,
                       window_sets)

DEFAULT_HIDDEN = (64, 64, 64)


@dataclass
class MlpParams:
    weights: list[np.ndarray]  # [out, in] per layer, last one is the output layer
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend([W, b])
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def count(self) -> int:
        return sum(a.size for a in self.arrays())


def init_mlp(input_dim: int, hidden=DEFAULT_HIDDEN, rng: Rng | None = None) -> MlpParams:
    """He-normal hidden layers (ReLU), Xavier-uniform linear output."""
    rng = rng or Rng(0)
    sizes = [input_dim, *hidden, 1]
    weights, biases = [], []
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        if k < len(hidden):
            W = rng.gaussian(0.0, np.sqrt(2.0 / fan_in), (fan_out, fan_in))
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            W = rng.uniform(-limit, limit, (fan_out, fan_in))
        weights.append(np.asarray(W, dtype=DTYPE))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def _flatten(Xf: np.ndarray) -> np.ndarray:
    # [T, F, B] -> [T*F, B], time-major then feature, same order as the window rows
    T, F, B = Xf.shape
    return Xf.reshape(T * F, B)


def mlp_forward(params: MlpParams, Xf: np.ndarray, keep_cache: bool = False):
    a = _flatten(Xf)
    cache = [a]
    last = len(params.weights) - 1
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = W @ a + b[:, None]
        a = z if k == last else np.maximum(z, 0.0)
        if keep_cache:
            cache.append(a)
    preds = a[0]
    return (preds, cache) if keep_cache else preds


def mlp_backprop(params: MlpParams, Xf: np.ndarray, targets):
    preds, cache = mlp_forward(params, Xf, keep_cache=True)
    resid = preds - np.asarray(targets, dtype=DTYPE)
    B = len(resid)
    loss = float(np.mean(resid * resid))
    if not np.isfinite(loss):
        raise NumericError("non-finite loss", "loss")
    grads = [None] * (2 * len(params.weights))
    delta = ((2.0 / B) * resid)[None, :]
    for k in range(len(params.weights) - 1, -1, -1):
        a_in = cache[k]
        grads[2 * k] = delta @ a_in.T
        grads[2 * k + 1] = delta.sum(axis=1)
        if k:
            delta = (params.weights[k].T @ delta) * (cache[k] > 0)
    for k, g in enumerate(grads):
        if not np.isfinite(g).all():
            raise NumericError("non-finite gradient", f"{'weights' if k % 2 == 0 else 'biases'}[{k // 2}]")
    return loss, grads


def mlp_predict(params: MlpParams, windows: WindowSet, chunk: int = EVAL_CHUNK) -> np.ndarray:
    out = np.empty(len(windows))
    for start in range(0, len(windows), chunk):
        rows = np.arange(start, min(start + chunk, len(windows)))
        out[rows] = mlp_forward(params, windows.gather_features(rows))
    return out


def mlp_baseline(config: ModelConfig, dataset: Dataset, tc: TrainConfig | None = None,
                 hidden=DEFAULT_HIDDEN):
    """Train the MLP on the dataset; returns (params, validation relative RMSE %)."""
    tc = tc or TrainConfig()
    train_set, test_set, val_set = window_sets(dataset, config, tc.stride)
    params = init_mlp(config.num_step * config.num_feature, hidden, Rng(tc.seed))

    def loss_and_grads(p, X, y, rng):
        return mlp_backprop(p, X, y)

    params, history = fit(params, loss_and_grads, mlp_predict, train_set, test_set, tc)
    rmse = relative_rmse_percent(mlp_predict(params, val_set), val_set.targets)
    return params, rmse, history
