"""Loss, backpropagation through time, optimizers and the epoch loop."""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dataset import Dataset, WindowSet
from .kernels import bptt_step
from .model import LayerCache, LstmParams, ModelConfig, forward_features, layer_forward
from .tensor import DTYPE, Rng, ShapeError

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "adagrad", "rmsprop", "adam")
INIT_SCHEMES = ("xavier", "he")
FORGET_BIAS = 1.0
CLIP_NORM = 5.0
EVAL_CHUNK = 2048


class NumericError(ArithmeticError):
    """A loss or gradient went non-finite."""

    def __init__(self, message: str, path: str | None = None):
        super().__init__(message if path is None else f"{message} (at {path})")
        self.path = path


class TrainingDiverged(NumericError):
    def __init__(self, message: str, history: "TrainHistory"):
        super().__init__(message)
        self.history = history


@dataclass
class TrainConfig:
    batch_size: int = 512
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    init_scheme: str = "xavier"
    dropout_keep_prob: float = 1.0
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    stride: int = 1
    time_budget_s: float | None = None

    def __post_init__(self):
        self.optimizer = self.optimizer.lower()
        self.init_scheme = self.init_scheme.lower()
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 < self.dropout_keep_prob <= 1:
            raise ValueError("dropout_keep_prob must lie in (0, 1]")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.init_scheme not in INIT_SCHEMES:
            raise ValueError(f"unknown init scheme {self.init_scheme!r}")


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    test_mse: float
    wall_seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None

    def __len__(self) -> int:
        return len(self.records)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "train_mse", "test_mse", "wall_seconds"])
        for r in self.records:
            writer.writerow([r.epoch, repr(r.train_mse), repr(r.test_mse), repr(r.wall_seconds)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainHistory":
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls([EpochRecord(int(r["epoch"]), float(r["train_mse"]), float(r["test_mse"]),
                                float(r["wall_seconds"])) for r in rows])

    def losses(self) -> list[tuple[int, float, float]]:
        """History without timing, for reproducibility comparisons."""
        return [(r.epoch, r.train_mse, r.test_mse) for r in self.records]


# -- metrics ---------------------------------------------------------------

def mse_loss(preds, targets) -> float:
    preds = np.asarray(preds, dtype=DTYPE)
    targets = np.asarray(targets, dtype=DTYPE)
    if preds.shape != targets.shape or preds.size == 0:
        raise ShapeError(f"mse_loss needs equal non-empty shapes, got {preds.shape}, {targets.shape}")
    return float(np.mean((preds - targets) ** 2))


def relative_rmse_percent(pred, target) -> float:
    """Error energy as a percentage of target energy: 100 * |pred - target| / |target|."""
    pred = np.asarray(pred, dtype=DTYPE)
    target = np.asarray(target, dtype=DTYPE)
    if pred.shape != target.shape:
        raise ShapeError(f"length mismatch: {pred.shape} vs {target.shape}")
    ref = np.linalg.norm(target)
    if ref == 0:
        raise ValueError("target has zero energy; relative RMSE undefined")
    return float(100.0 * np.linalg.norm(pred - target) / ref)


# -- initialisation --------------------------------------------------------

def _init_block(rng: Rng, scheme: str, shape, fan_in: int, fan_out: int) -> np.ndarray:
    if scheme == "xavier":
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, shape)
    return rng.gaussian(0.0, np.sqrt(2.0 / fan_in), shape)


def init_params(config: ModelConfig, scheme: str, rng: Rng) -> LstmParams:
    """Xavier-uniform or He-normal weights; zero biases except the forget gate."""
    scheme = scheme.lower()
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"unknown init scheme {scheme!r}")
    params = LstmParams.zeros(config)
    H = config.num_hidden
    for k, layer in enumerate(params.layers):
        D = config.input_dim(k)
        for gate in range(4):
            rows = slice(gate * H, (gate + 1) * H)
            layer.W[rows] = _init_block(rng, scheme, (H, D), D, H)
            layer.U[rows] = _init_block(rng, scheme, (H, H), H, H)
        layer.b_f[:] = FORGET_BIAS
    params.W_out[:] = _init_block(rng, scheme, (1, H), H, 1)
    return params


# -- backpropagation -------------------------------------------------------

def _layer_backward(layer, cache: LayerCache, dHs: np.ndarray, need_dX: bool = True):
    """BPTT through one layer in feature-major layout. Returns (dW, dU, db, dX).

    ``dHs`` [T, H, B] is the loss gradient arriving at each hidden output
    from above; it is consumed in place.
    """
    acts, C, TC, Hs, X = cache.acts, cache.C, cache.TC, cache.Hs, cache.X
    T, H, B = Hs.shape
    dZ = np.empty((T, 4 * H, B))
    dc = np.zeros((H, B))
    dW = np.zeros_like(layer.W)
    dU = np.zeros_like(layer.U)
    UT = np.ascontiguousarray(layer.U.T)
    for t in range(T - 1, -1, -1):
        dz = dZ[t]
        bptt_step(acts[t], C[t - 1] if t else C[t], TC[t], dHs[t], dc, dz, t == 0)
        dW += dz @ X[t].T
        if t:
            dHs[t - 1] += UT @ dz
            dU += dz @ Hs[t - 1].T
    db = dZ.sum(axis=(0, 2))
    dX = np.matmul(layer.W.T, dZ) if need_dX else None
    return dW, dU, db, dX


def _dropout_masks(params: LstmParams, batch_size: int, keep_prob: float, rng: Rng | None):
    """One [H, B] mask per layer boundary, shared by every time step."""
    if keep_prob >= 1.0 or len(params.layers) < 2:
        return [None] * (len(params.layers) - 1)
    if rng is None:
        raise ValueError("dropout needs an rng")
    H = params.W_out.shape[1]
    masks = []
    for _ in range(len(params.layers) - 1):
        keep = rng.generator.random((batch_size, H)) < keep_prob
        masks.append(np.ascontiguousarray(keep.T) / keep_prob)
    return masks


def _forward_train(params: LstmParams, Xf: np.ndarray, masks):
    caches = []
    seq = Xf
    for k, layer in enumerate(params.layers):
        seq, cache = layer_forward(layer, seq, keep_cache=True)
        caches.append(cache)
        if k < len(masks) and masks[k] is not None:
            seq = seq * masks[k]
    h_last = seq[-1]
    preds = params.W_out[0] @ h_last + params.b_out[0]
    return preds, h_last, caches


def _feature_major(config: ModelConfig, batch) -> np.ndarray:
    X = np.asarray(getattr(batch, "inputs", batch), dtype=DTYPE)
    if X.ndim != 3 or X.shape[1:] != (config.num_step, config.num_feature):
        raise ShapeError(f"batch shape {X.shape} does not match config")
    return np.ascontiguousarray(X.transpose(1, 2, 0))


def batch_loss(config: ModelConfig, params: LstmParams, batch, targets, keep_prob: float = 1.0,
               rng: Rng | None = None) -> float:
    """Forward-only MSE under the same dropout draw as ``backprop_batch``."""
    Xf = _feature_major(config, batch)
    masks = _dropout_masks(params, Xf.shape[2], keep_prob, rng)
    preds, _, _ = _forward_train(params, Xf, masks)
    return mse_loss(preds, targets)


def backprop_batch(config: ModelConfig, params: LstmParams, batch, targets,
                   keep_prob: float = 1.0, rng: Rng | None = None):
    """MSE over the batch and its exact gradient with respect to every weight.

    ``batch`` is [B, num_step, num_feature] (or a WindowBatch); a
    feature-major [T, F, B] array may be passed via ``backprop_features``.
    """
    return backprop_features(config, params, _feature_major(config, batch), targets, keep_prob, rng)


def backprop_features(config: ModelConfig, params: LstmParams, Xf: np.ndarray, targets,
                      keep_prob: float = 1.0, rng: Rng | None = None):
    targets = np.asarray(targets, dtype=DTYPE)
    B = Xf.shape[2]
    if len(targets) != B:
        raise ShapeError("batch and targets are not aligned")
    masks = _dropout_masks(params, B, keep_prob, rng)
    preds, h_last, caches = _forward_train(params, Xf, masks)
    resid = preds - targets
    loss = float(np.mean(resid * resid))
    if not np.isfinite(loss):
        raise NumericError("non-finite loss", "loss")

    grads = params.zeros_like()
    dpred = (2.0 / B) * resid
    grads.W_out[0] = h_last @ dpred
    grads.b_out[0] = dpred.sum()
    dHs = np.zeros((config.num_step, config.num_hidden, B))
    dHs[-1] = np.outer(params.W_out[0], dpred)
    for k in range(len(params.layers) - 1, -1, -1):
        if k < len(masks) and masks[k] is not None:
            dHs *= masks[k]
        dW, dU, db, dX = _layer_backward(params.layers[k], caches[k], dHs, need_dX=k > 0)
        g = grads.layers[k]
        g.W[:], g.U[:], g.b[:] = dW, dU, db
        dHs = dX
    _check_finite(grads)
    return loss, grads


def _check_finite(grads) -> None:
    offset = 0
    for arr in grads.arrays():
        bad = ~np.isfinite(arr)
        if bad.any():
            raise NumericError("non-finite gradient", grads.locate(offset + int(np.argmax(bad.ravel()))))
        offset += arr.size


# -- optimizers ------------------------------------------------------------

class Optimizer:
    eps = 1e-8

    def __init__(self):
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        self.t += 1
        for k, (p, g) in enumerate(zip(params, grads)):
            self._update(k, p, g, lr)

    def _update(self, k, p, g, lr):
        raise NotImplementedError


class SGD(Optimizer):
    def _update(self, k, p, g, lr):
        p -= lr * g


class AdaGrad(Optimizer):
    def __init__(self):
        super().__init__()
        self.acc = {}

    def _update(self, k, p, g, lr):
        acc = self.acc.setdefault(k, np.zeros_like(p))
        acc += g * g
        p -= lr * g / (np.sqrt(acc) + self.eps)


class RMSProp(Optimizer):
    decay = 0.9

    def __init__(self):
        super().__init__()
        self.v = {}

    def _update(self, k, p, g, lr):
        v = self.v.setdefault(k, np.zeros_like(p))
        v *= self.decay
        v += (1.0 - self.decay) * g * g
        p -= lr * g / (np.sqrt(v) + self.eps)


class Adam(Optimizer):
    beta1 = 0.9
    beta2 = 0.999

    def __init__(self):
        super().__init__()
        self.m = {}
        self.v = {}

    def _update(self, k, p, g, lr):
        m = self.m.setdefault(k, np.zeros_like(p))
        v = self.v.setdefault(k, np.zeros_like(p))
        m *= self.beta1
        m += (1.0 - self.beta1) * g
        v *= self.beta2
        v += (1.0 - self.beta2) * g * g
        m_hat = m / (1.0 - self.beta1 ** self.t)
        v_hat = v / (1.0 - self.beta2 ** self.t)
        p -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(name: str) -> Optimizer:
    table = {"sgd": SGD, "adagrad": AdaGrad, "rmsprop": RMSProp, "adam": Adam}
    try:
        return table[name.lower()]()
    except KeyError:
        raise ValueError(f"unknown optimizer {name!r}") from None


def optimizer_step(opt: Optimizer, params, grads, lr: float):
    """Update ``params`` in place from ``grads`` and return it."""
    opt.step(params.arrays(), grads.arrays(), lr)
    return params


def clip_global_norm(grads: list[np.ndarray], max_norm: float = CLIP_NORM) -> float:
    norm = float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads)))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


# -- epoch loop ------------------------------------------------------------

def predict_windows(params: LstmParams, windows: WindowSet, chunk: int = EVAL_CHUNK) -> np.ndarray:
    """Fast evaluation over a window set; not bit-matched to ``forward_batch``."""
    out = np.empty(len(windows))
    for start in range(0, len(windows), chunk):
        rows = np.arange(start, min(start + chunk, len(windows)))
        out[rows] = forward_features(params, windows.gather_features(rows))
    return out


def fit(params, loss_and_grads: Callable, predict: Callable, train_set: WindowSet,
        test_set: WindowSet, tc: TrainConfig):
    """Shared mini-batch loop with early stopping on the test windows.

    ``loss_and_grads(params, X, y, rng)`` takes a feature-major [T, F, B]
    batch and returns ``(loss, grad_arrays)``;
    ``predict(params, window_set)`` returns one prediction per window.
    The best-test snapshot is returned together with the history.
    """
    if len(train_set) == 0 or len(test_set) == 0:
        raise ValueError("empty train or test split")
    rng = Rng(tc.seed)
    shuffle_rng = rng.spawn(1)
    dropout_rng = rng.spawn(2)
    opt = make_optimizer(tc.optimizer)
    history = TrainHistory()
    best, best_mse, stale = params.copy(), np.inf, 0
    t0 = time.perf_counter()
    for epoch in range(1, tc.max_epochs + 1):
        order = shuffle_rng.permutation(len(train_set))
        total = 0.0
        for start in range(0, len(order), tc.batch_size):
            rows = order[start:start + tc.batch_size]
            X = train_set.gather_features(rows)
            y = train_set.targets[rows]
            try:
                # overflow is caught below as a non-finite loss; no need to warn too
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, grads = loss_and_grads(params, X, y, dropout_rng)
            except NumericError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}", history) from exc
            clip_global_norm(grads)
            opt.step(params.arrays(), grads, tc.learning_rate)
            total += loss * len(rows)
        test_mse = mse_loss(predict(params, test_set), test_set.targets)
        record = EpochRecord(epoch, total / len(order), test_mse, time.perf_counter() - t0)
        history.records.append(record)
        log.info("epoch %d train_mse=%.3e test_mse=%.3e (%.1fs)", epoch, record.train_mse,
                 test_mse, record.wall_seconds)
        if not (np.isfinite(record.train_mse) and np.isfinite(test_mse)):
            raise TrainingDiverged(f"epoch {epoch}: non-finite loss", history)
        if test_mse < best_mse:
            best, best_mse, stale = params.copy(), test_mse, 0
            history.best_epoch = epoch
        else:
            stale += 1
        if stale >= tc.patience:
            break
        if tc.time_budget_s is not None and record.wall_seconds >= tc.time_budget_s:
            break
    return best, history


def window_sets(ds: Dataset, config: ModelConfig, stride: int = 1):
    """Train (strided), test and validation window sets of a split dataset."""
    train = WindowSet(ds, ds.split_ranges("train"), config.num_step, config.num_feature, stride)
    test = WindowSet(ds, ds.split_ranges("test"), config.num_step, config.num_feature)
    val = WindowSet(ds, ds.split_ranges("validation"), config.num_step, config.num_feature)
    return train, test, val


def train(config: ModelConfig, tc: TrainConfig, dataset: Dataset, params: LstmParams | None = None):
    """Train an LSTM on the dataset's train split; returns (best params, history)."""
    train_set, test_set, _ = window_sets(dataset, config, tc.stride)
    if params is None:
        params = init_params(config, tc.init_scheme, Rng(tc.seed))

    def loss_and_grads(p, X, y, rng):
        loss, grads = backprop_features(config, p, X, y, tc.dropout_keep_prob, rng)
        return loss, grads.arrays()

    return fit(params, loss_and_grads, predict_windows, train_set, test_set, tc)


def evaluate(config: ModelConfig, params: LstmParams, dataset: Dataset, split: str = "validation"):
    """Relative RMSE (%) on a split, overall and per gain pass."""
    ranges = dataset.split_ranges(split)
    windows = WindowSet(dataset, ranges, config.num_step, config.num_feature)
    preds = predict_windows(params, windows)
    overall = relative_rmse_percent(preds, windows.targets)
    per_gain = {}
    for (s, e, gain) in dataset.passes:
        sel = (windows.indices >= s) & (windows.indices < e)
        if sel.any():
            per_gain[gain] = relative_rmse_percent(preds[sel], windows.targets[sel])
    return overall, per_gain
