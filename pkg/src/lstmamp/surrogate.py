"""Reference "amplifier": pre-emphasis, tanh waveshaper, one-pole smoothing.

Stands in for a real tube amp when generating targets. Every stage is
causal and starts from rest, so the whole cascade is time invariant.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

PRE_COEFF = 0.5
POST_COEFF = 0.6
GAIN_RANGE = (0.0, 10.0)


@dataclass(frozen=True)
class AmpParams:
    pre_coeff: float = PRE_COEFF
    post_coeff: float = POST_COEFF

    def __post_init__(self):
        if not 0.0 <= self.pre_coeff < 1.0:
            raise ValueError(f"pre_coeff must lie in [0, 1), got {self.pre_coeff}")
        if not 0.0 < self.post_coeff <= 1.0:
            raise ValueError(f"post_coeff must lie in (0, 1], got {self.post_coeff}")


def _check_gain(gain_knob: float) -> None:
    lo, hi = GAIN_RANGE
    if not lo <= gain_knob <= hi:
        raise ValueError(f"gain_knob must lie in [{lo}, {hi}], got {gain_knob}")


def amp_static_nl(u, gain_knob: float):
    """Odd, monotone waveshaper normalised so that +/-1 maps to +/-1."""
    _check_gain(gain_knob)
    gamma = 1.0 + gain_knob
    return np.tanh(gamma * np.asarray(u, dtype=np.float64)) / np.tanh(gamma)


def amp_process(x, gain_knob: float, amp: AmpParams | None = None) -> np.ndarray:
    amp = amp or AmpParams()
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValueError("amp_process input contains non-finite samples")
    u = lfilter([1.0, -amp.pre_coeff], [1.0], x)
    v = amp_static_nl(u, gain_knob)
    return lfilter([amp.post_coeff], [1.0, -(1.0 - amp.post_coeff)], v)


def amp_process_reference(x, gain_knob: float, amp: AmpParams | None = None) -> np.ndarray:
    """Sample-by-sample loop over the three stages; slow, used as a cross-check."""
    amp = amp or AmpParams()
    gamma = 1.0 + gain_knob
    out = np.zeros(len(x))
    x_prev = y_prev = 0.0
    for n, xn in enumerate(np.asarray(x, dtype=np.float64)):
        u = xn - amp.pre_coeff * x_prev
        v = np.tanh(gamma * u) / np.tanh(gamma)
        y = amp.post_coeff * v + (1.0 - amp.post_coeff) * y_prev
        out[n] = y
        x_prev, y_prev = xn, y
    return out
