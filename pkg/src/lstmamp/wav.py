"""Minimal RIFF/WAVE reader and PCM16 writer."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SUPPORTED_RATES = (8000, 16000, 44100)

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class WavError(Exception):
    pass


class MalformedWavError(WavError):
    pass


class UnsupportedCodecError(WavError):
    pass


@dataclass
class AudioSignal:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def _chunks(raw: bytes):
    pos = 12
    while pos + 8 <= len(raw):
        cid, size = struct.unpack_from("<4sI", raw, pos)
        body = raw[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise MalformedWavError(f"chunk {cid!r} truncated")
        yield cid, body
        pos += 8 + size + (size & 1)


def read_wav(path) -> AudioSignal:
    """Decode PCM16 or float32 WAV; multichannel files yield the first channel."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: not a RIFF/WAVE file")
    fmt = data = None
    for cid, body in _chunks(raw):
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
    if fmt is None or len(fmt) < 16:
        raise MalformedWavError(f"{path}: missing or short fmt chunk")
    if data is None:
        raise MalformedWavError(f"{path}: missing data chunk")
    tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt)
    if tag == WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 26:
            raise MalformedWavError(f"{path}: short extensible fmt chunk")
        tag = struct.unpack_from("<H", fmt, 24)[0]
    if channels < 1 or block_align != channels * bits // 8:
        raise MalformedWavError(f"{path}: inconsistent channel/block layout")
    if tag == WAVE_FORMAT_PCM and bits == 16:
        frames = np.frombuffer(data[:len(data) - len(data) % block_align], dtype="<i2")
        samples = frames.reshape(-1, channels)[:, 0] / 32768.0
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        frames = np.frombuffer(data[:len(data) - len(data) % block_align], dtype="<f4")
        samples = frames.reshape(-1, channels)[:, 0].astype(np.float64)
    else:
        raise UnsupportedCodecError(f"{path}: format tag {tag:#06x} with {bits} bits not supported")
    return AudioSignal(samples, rate)


def encode_pcm16(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValueError("cannot encode non-finite samples")
    return np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")


def write_wav(path, signal: AudioSignal) -> None:
    pcm = encode_pcm16(signal.samples).tobytes()
    rate = int(signal.sample_rate)
    header = struct.pack("<4sI4s4sIHHIIHH4sI",
                         b"RIFF", 36 + len(pcm), b"WAVE",
                         b"fmt ", 16, WAVE_FORMAT_PCM, 1, rate, rate * 2, 2, 16,
                         b"data", len(pcm))
    Path(path).write_bytes(header + pcm)
