"""Excitation synthesis, dataset assembly, splitting and windowing.

A dataset is a set of aligned columns ``x``, ``g`` and ``target``. With
several gain settings the excitation is repeated once per gain ("pass");
each pass is an independent recording, so windows never reach back across
a pass boundary: they are zero padded at the start of every pass instead.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .surrogate import AmpParams, amp_process
from .tensor import DTYPE, Rng
from .wav import AudioSignal, read_wav, write_wav

SPLIT_NAMES = ("train", "test", "validation")
PEAK = 0.9
F0_RANGE = (82.0, 660.0)
N_PARTIALS = 6


def synth_note(f0: float, duration_s: float, sample_rate: int, tau: float = 0.6) -> np.ndarray:
    """Plucked-string tone: six decaying harmonics with 1/k amplitudes.

    Partial ``k`` decays with time constant ``tau / k`` so brighter partials
    die out first. Partials above Nyquist are dropped.
    """
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    out = np.zeros(n)
    for k in range(1, N_PARTIALS + 1):
        if k * f0 >= sample_rate / 2:
            break
        out += np.exp(-t * k / tau) * np.sin(2 * np.pi * k * f0 * t) / k
    return out


def generate_excitation(duration_s: float, sample_rate: int, rng: Rng) -> AudioSignal:
    """Guitar-like test signal: alternating single notes and three-note chords."""
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    n_total = int(round(duration_s * sample_rate))
    out = np.zeros(n_total)
    pos = 0
    lo, hi = F0_RANGE
    while pos < n_total:
        length = min(int(rng.uniform(0.25, 1.0) * sample_rate), n_total - pos)
        length = max(length, 1)
        tau = rng.uniform(0.2, 1.0)
        level = rng.uniform(0.3, 1.0)
        if rng.uniform() < 0.5:
            f0s = [np.exp(rng.uniform(np.log(lo), np.log(hi)))]
        else:
            # Root plus a triad shape; the top note stays inside the guitar range.
            root = np.exp(rng.uniform(np.log(lo), np.log(hi / 2 ** (7 / 12))))
            third = 3 if rng.uniform() < 0.5 else 4
            f0s = [root * 2 ** (s / 12) for s in (0, third, 7)]
        event = sum(synth_note(f0, length / sample_rate, sample_rate, tau) for f0 in f0s)
        out[pos:pos + length] += level * event[:length] / len(f0s)
        pos += length
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= PEAK / peak
    return AudioSignal(out, sample_rate)


@dataclass
class Dataset:
    x: np.ndarray
    g: np.ndarray
    target: np.ndarray
    sample_rate: int
    passes: list[tuple[int, int, float]]  # (start, end, gain_knob) per gain pass
    splits: dict[str, list[tuple[int, int]]] | None = None

    def __len__(self) -> int:
        return len(self.x)

    def features(self, num_feature: int) -> np.ndarray:
        if num_feature == 1:
            return self.x[:, None]
        if num_feature == 2:
            return np.stack([self.x, self.g], axis=1)
        raise ValueError(f"num_feature must be 1 or 2, got {num_feature}")

    def split_ranges(self, name: str) -> list[tuple[int, int]]:
        if self.splits is None:
            raise ValueError("dataset has not been split")
        return self.splits[name]

    def pass_of(self, n: int) -> int:
        for k, (s, e, _) in enumerate(self.passes):
            if s <= n < e:
                return k
        raise IndexError(n)

    def save(self, directory) -> None:
        """Write x.wav, target.wav and the gains.txt segment sidecar."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_wav(directory / "x.wav", AudioSignal(self.x, self.sample_rate))
        write_wav(directory / "target.wav", AudioSignal(self.target, self.sample_rate))
        write_gain_segments(directory / "gains.txt", self.passes)

    @classmethod
    def load(cls, directory) -> "Dataset":
        directory = Path(directory)
        x = read_wav(directory / "x.wav")
        target = read_wav(directory / "target.wav")
        if len(x.samples) != len(target.samples):
            raise ValueError("x.wav and target.wav lengths differ")
        passes = read_gain_segments(directory / "gains.txt")
        g = np.zeros(len(x.samples))
        for s, e, gain in passes:
            g[s:e] = gain / 10.0
        return cls(x.samples, g, target.samples, x.sample_rate, passes)


def write_gain_segments(path, passes) -> None:
    lines = [f"{s},{e},{gain!r}" for s, e, gain in passes]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_gain_segments(path) -> list[tuple[int, int, float]]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected start_sample,end_sample,gain_knob")
        out.append((int(parts[0]), int(parts[1]), float(parts[2])))
    return out


def build_dataset(excitation: AudioSignal, gain_values, amp: AmpParams | None = None) -> Dataset:
    gain_values = list(gain_values)
    if not gain_values:
        raise ValueError("at least one gain value is required")
    amp = amp or AmpParams()
    xs, gs, ts, passes = [], [], [], []
    n = len(excitation.samples)
    for k, gain in enumerate(gain_values):
        xs.append(excitation.samples)
        gs.append(np.full(n, gain / 10.0))
        ts.append(amp_process(excitation.samples, gain, amp))
        passes.append((k * n, (k + 1) * n, float(gain)))
    return Dataset(np.concatenate(xs).astype(DTYPE), np.concatenate(gs), np.concatenate(ts),
                   excitation.sample_rate, passes)


def split_dataset(ds: Dataset, ratios=(0.70, 0.15, 0.15), num_step: int = 1) -> Dataset:
    """Cut every gain pass into contiguous train/test/validation ranges."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    splits = {name: [] for name in SPLIT_NAMES}
    for s, e, _ in ds.passes:
        n = e - s
        n_train = int(round(n * ratios[0]))
        n_test = int(round(n * ratios[1]))
        bounds = [s, s + n_train, s + n_train + n_test, e]
        for name, lo, hi in zip(SPLIT_NAMES, bounds[:-1], bounds[1:]):
            if hi - lo < num_step + 1:
                raise ValueError(f"{name} split has {hi - lo} samples, need at least {num_step + 1}")
            splits[name].append((lo, hi))
    return Dataset(ds.x, ds.g, ds.target, ds.sample_rate, list(ds.passes), splits)


@dataclass
class WindowBatch:
    inputs: np.ndarray   # [batch_size, num_step, num_feature]
    targets: np.ndarray  # [batch_size]
    indices: np.ndarray = field(default=None)  # target sample index per row

    @property
    def batch_size(self) -> int:
        return len(self.targets)


class WindowSet:
    """All training windows over some sample ranges, gathered lazily.

    Row ``r`` is the window ending at target index ``n_r``; its step ``s``
    holds the features of sample ``n_r - (num_step - 1) + s``.
    """

    def __init__(self, ds: Dataset, ranges, num_step: int, num_feature: int, stride: int = 1):
        if stride < 1:
            raise ValueError("stride must be >= 1")
        self.num_step = num_step
        self.num_feature = num_feature
        feats = ds.features(num_feature)
        pad = np.zeros((num_step - 1, num_feature))
        chunks = []
        for s, e, _ in ds.passes:
            chunks.extend([pad, feats[s:e]])
        self._padded = np.concatenate(chunks) if chunks else np.zeros((0, num_feature))
        idx = []
        for lo, hi in ranges:
            if hi - lo < num_step:
                raise ValueError(f"range [{lo}, {hi}) shorter than num_step={num_step}")
            idx.append(np.arange(lo, hi, stride))
        self.indices = np.concatenate(idx) if idx else np.zeros(0, dtype=np.int64)
        pass_no = np.searchsorted([e for _, e, _ in ds.passes], self.indices, side="right")
        self._starts = self.indices + pass_no * (num_step - 1)
        self.targets = ds.target[self.indices]
        self._steps = np.arange(num_step)

    def __len__(self) -> int:
        return len(self.indices)

    def gather(self, rows=None) -> np.ndarray:
        starts = self._starts if rows is None else self._starts[rows]
        return self._padded[starts[:, None] + self._steps]

    def gather_features(self, rows=None) -> np.ndarray:
        """Feature-major copy of the windows: [num_step, num_feature, B]."""
        starts = self._starts if rows is None else self._starts[rows]
        return np.ascontiguousarray(self._padded[starts[None, :] + self._steps[:, None]].transpose(0, 2, 1))

    def batch(self, rows) -> WindowBatch:
        return WindowBatch(self.gather(rows), self.targets[rows], self.indices[rows])

    def batches(self, batch_size: int, order=None) -> Iterator[WindowBatch]:
        order = np.arange(len(self)) if order is None else order
        for start in range(0, len(order), batch_size):
            yield self.batch(order[start:start + batch_size])


def tensorize(ds: Dataset, rng_range, num_step: int, batch_size: int, stride: int = 1,
              num_feature: int = 1) -> Iterator[WindowBatch]:
    """Stream the windows of one sample range as batches; the last batch may be short."""
    lo, hi = rng_range
    if hi - lo < num_step:
        raise ValueError(f"range [{lo}, {hi}) shorter than num_step={num_step}")
    k = ds.pass_of(lo)
    if hi > ds.passes[k][1]:
        raise ValueError("range crosses a gain-pass boundary")
    yield from WindowSet(ds, [(lo, hi)], num_step, num_feature, stride).batches(batch_size)


def window_block(history: np.ndarray, block: np.ndarray, num_step: int) -> np.ndarray:
    """Reshape an input block into stride-1 windows using the stored history.

    ``history`` holds the ``num_step - 1`` rows that preceded ``block``.
    Output has shape [len(block), num_step, num_feature].
    """
    joined = np.concatenate([history, block], axis=0)
    view = np.lib.stride_tricks.sliding_window_view(joined, num_step, axis=0)
    return view.transpose(0, 2, 1)
