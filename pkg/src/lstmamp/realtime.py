"""Block-streaming inference.

``windowed`` mode reproduces training exactly: every output sample is
recomputed from its own zero-state window, and the last ``num_step - 1``
input rows are carried from block to block. ``stateful`` mode keeps the
cell state running across samples instead, doing one cell step per sample.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .kernels import recur
from .model import LstmParams, ModelConfig, forward_batch
from .tensor import Rng, ShapeError

MODES = ("windowed", "stateful")


@dataclass
class ThroughputReport:
    samples_processed: int
    wall_seconds: float
    samples_per_second: float
    real_time_factor: float

    CSV_HEADER = "mode,num_hidden,num_step,block_len,samples_per_second,rtf"

    def csv_row(self, mode: str, num_hidden: int, num_step: int, block_len: int) -> str:
        return (f"{mode},{num_hidden},{num_step},{block_len},"
                f"{self.samples_per_second:.6f},{self.real_time_factor:.6f}")


class Stream:
    """Streaming state for one audio stream over shared, read-only params."""

    def __init__(self, config: ModelConfig, params: LstmParams, mode: str = "windowed",
                 gain_knob: float | None = None):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        params.check_against(config)
        self.config = config
        self.params = params
        self.mode = mode
        self.gain_knob = gain_knob
        self.dtype = params.W_out.dtype
        F, H = config.num_feature, config.num_hidden
        self.history = np.zeros((config.num_step - 1, F), self.dtype)
        self.c = [np.zeros(H, self.dtype) for _ in params.layers]
        self.h = [np.zeros(H, self.dtype) for _ in params.layers]

    def reset(self) -> None:
        self.history[...] = 0.0
        for c, h in zip(self.c, self.h):
            c[...] = 0.0
            h[...] = 0.0

    def _rows(self, block) -> np.ndarray:
        block = np.asarray(block, dtype=self.dtype)
        F = self.config.num_feature
        if block.ndim == 1:
            if F == 1:
                block = block[:, None]
            elif self.gain_knob is not None:
                block = np.stack([block, np.full(len(block), self.gain_knob / 10.0, self.dtype)], axis=1)
            else:
                raise ShapeError("model takes [x, g] rows; pass 2-column blocks or set gain_knob")
        if block.ndim != 2 or block.shape[1] != F:
            raise ShapeError(f"block rows must have {F} feature(s), got shape {block.shape}")
        if len(block) < 1:
            raise ValueError("block must hold at least one sample")
        return block

    def process_block(self, block) -> np.ndarray:
        rows = self._rows(block)
        if self.mode == "windowed":
            return self._windowed(rows)
        return self._stateful(rows)

    def _windowed(self, rows: np.ndarray) -> np.ndarray:
        T = self.config.num_step
        joined = np.concatenate([self.history, rows], axis=0)
        # Overlapping read-only view [n, T, F]; sliding_window_view leaks a
        # small object per call, which shows up as heap growth when streaming.
        step, feat = joined.strides
        windows = np.ndarray((len(rows), T, joined.shape[1]), joined.dtype, buffer=joined,
                             strides=(step, step, feat))
        out = forward_batch(self.config, self.params, windows)
        if T > 1:
            self.history[...] = joined[len(joined) - (T - 1):]
        return out

    def _stateful(self, rows: np.ndarray) -> np.ndarray:
        seq = rows
        for k, layer in enumerate(self.params.layers):
            Zx = seq @ layer.W.T + layer.b
            out = np.empty((len(rows), layer.num_hidden), self.dtype)
            recur(np.ascontiguousarray(Zx), layer.U, self.c[k], self.h[k], out)
            seq = out
        return seq @ self.params.W_out[0] + self.params.b_out[0]


def process_signal(config: ModelConfig, params: LstmParams, x, block_len: int,
                   mode: str = "windowed", gain_knob: float | None = None) -> np.ndarray:
    """Run a whole signal through a fresh stream in blocks of ``block_len``."""
    stream = Stream(config, params, mode, gain_knob)
    x = np.asarray(x)
    parts = [stream.process_block(x[s:s + block_len]) for s in range(0, len(x), block_len)]
    return np.concatenate(parts) if parts else np.zeros(0)


def benchmark_throughput(config: ModelConfig, params: LstmParams, mode: str, block_len: int,
                         duration_s: float, seed: int = 0) -> ThroughputReport:
    """Time the stream on synthetic audio; signal generation is not timed."""
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    n = max(int(round(duration_s * config.sample_rate)), 1)
    rng = Rng(seed)
    x = 0.5 * rng.uniform(-1.0, 1.0, (n, config.num_feature))
    if config.num_feature == 2:
        x[:, 1] = 0.5
    stream = Stream(config, params, mode)
    stream.process_block(x[:1])  # compile / warm caches
    stream.reset()
    t0 = time.perf_counter()
    for s in range(0, n, block_len):
        stream.process_block(x[s:s + block_len])
    wall = max(time.perf_counter() - t0, 1e-12)
    sps = n / wall
    return ThroughputReport(n, wall, sps, sps / config.sample_rate)
