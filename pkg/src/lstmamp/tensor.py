"""Small numeric helpers shared by the rest of the package.

Matrices and vectors are plain numpy arrays. Training runs in float64;
inference may cast parameters down to float32.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when array dimensions do not line up."""


def matvec(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    A = np.asarray(A)
    x = np.asarray(x)
    if A.ndim != 2 or x.ndim != 1:
        raise ShapeError(f"matvec expects a matrix and a vector, got {A.shape} and {x.shape}")
    if A.shape[1] != x.shape[0]:
        raise ShapeError(f"matvec dimension mismatch: {A.shape} @ {x.shape}")
    return A @ x


def sigmoid(x, out=None):
    return expit(x, out=out)


def tanh_act(x):
    return np.tanh(x)


class Rng:
    """Seedable random stream backed by numpy's PCG64 (128-bit state).

    The generator choice is part of the reproducibility contract: changing
    it changes every initialisation and shuffle in the package.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def spawn(self, offset: int) -> "Rng":
        return Rng(self.seed + int(offset))

    def uniform(self, lo=0.0, hi=1.0, size=None):
        if not lo < hi:
            raise ValueError(f"uniform range requires lo < hi, got [{lo}, {hi})")
        return self._gen.uniform(lo, hi, size)

    def gaussian(self, mean=0.0, std=1.0, size=None):
        if std < 0:
            raise ValueError(f"std must be non-negative, got {std}")
        if std == 0:
            if size is None:
                return float(mean)
            return np.full(size, float(mean))
        return self._gen.normal(mean, std, size)

    def integers(self, lo, hi, size=None):
        return self._gen.integers(lo, hi, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def draw_uniform(rng: Rng, lo: float, hi: float, size=None):
    return rng.uniform(lo, hi, size)


def draw_gaussian(rng: Rng, mean: float, std: float, size=None):
    return rng.gaussian(mean, std, size)
