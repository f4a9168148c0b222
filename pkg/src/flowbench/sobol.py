"""Sobol low-discrepancy sampling (Joe-Kuo direction numbers).

Index 0 of the sequence is the origin; callers normally skip it
(default skip=1). Same (d, n, skip) always yields identical points.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.stats import qmc

from .errors import UnsupportedDimension

MAX_DIMENSION = 32


class SobolStream:
    """Stateful Sobol point source for one dimension count.

    Consecutive calls to take() continue the sequence, so a stream
    shared across rounds never repeats points.
    """

    def __init__(self, dimension: int, skip: int = 1):
        if not 1 <= dimension <= MAX_DIMENSION:
            raise UnsupportedDimension(
                f"dimension must be in [1, {MAX_DIMENSION}], got {dimension}"
            )
        if skip < 0:
            raise ValueError("skip must be >= 0")
        self.dimension = dimension
        self.index = skip
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            self._engine = qmc.Sobol(d=dimension, scramble=False)
            if skip:
                self._engine.fast_forward(skip)

    def take(self, n: int) -> np.ndarray:
        """Next n points, shape (n, d), each in [0, 1)."""
        if n < 0:
            raise ValueError("n must be >= 0")
        if n == 0:
            return np.empty((0, self.dimension))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            points = self._engine.random(n)
        self.index += n
        return points


def sobol_points(d: int, n: int, skip: int = 1) -> np.ndarray:
    """Points skip..skip+n-1 of the d-dimensional Sobol sequence."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return SobolStream(d, skip=skip).take(n)
