"""Tests for the Sobol sequence against an independent bit-level oracle."""

import numpy as np
import pytest

from flowbench.errors import UnsupportedDimension
from flowbench.sobol import SobolStream, sobol_points

# Joe-Kuo direction-number table rows for the first two dimensions
# beyond van der Corput: (degree s, coefficient a, initial m values).
_JOE_KUO_ROWS = [(1, 0, [1])]


def reference_sobol(d: int, n: int) -> np.ndarray:
    """Tiny independent Sobol generator (Gray-code order), d <= 2."""
    assert 1 <= d <= 2
    bits = 32
    # Direction vectors per dimension, as integers scaled by 2^32.
    v = np.zeros((d, bits), dtype=np.uint64)
    v[0] = [1 << (bits - k - 1) for k in range(bits)]  # van der Corput
    for dim, (s, a, m_init) in zip(range(1, d), _JOE_KUO_ROWS):
        m = list(m_init)
        for k in range(s, bits):
            new = m[k - s] ^ (m[k - s] << s)
            for j in range(1, s):
                if (a >> (s - 1 - j)) & 1:
                    new ^= m[k - j] << j
            m.append(new)
        v[dim] = [m[k] << (bits - k - 1) for k in range(bits)]

    points = np.zeros((n, d))
    x = np.zeros(d, dtype=np.uint64)
    for i in range(1, n):
        # Gray code: flip the direction of the lowest zero bit of i-1.
        c = 0
        value = i - 1
        while value & 1:
            value >>= 1
            c += 1
        x ^= v[:, c]
        points[i] = x / 2.0**bits
    return points


FIRST_8_2D = np.array(
    [
        [0.5, 0.5],
        [0.75, 0.25],
        [0.25, 0.75],
        [0.375, 0.375],
        [0.875, 0.875],
        [0.625, 0.125],
        [0.125, 0.625],
        [0.1875, 0.3125],
    ]
)


class TestReferenceValues:
    def test_oracle_reproduces_frozen_2d_values(self):
        assert np.array_equal(reference_sobol(2, 9)[1:], FIRST_8_2D)

    def test_1d_prefix(self):
        assert np.array_equal(sobol_points(1, 3, skip=1).ravel(), [0.5, 0.75, 0.25])

    def test_2d_first_8_match_reference_exactly(self):
        assert np.array_equal(sobol_points(2, 8, skip=1), FIRST_8_2D)

    def test_first_point_after_skip(self):
        assert np.array_equal(sobol_points(2, 1, skip=1)[0], [0.5, 0.5])

    def test_origin_convention(self):
        assert np.array_equal(sobol_points(2, 1, skip=0)[0], [0.0, 0.0])

    def test_matches_oracle_over_64_points(self):
        assert np.array_equal(sobol_points(2, 64, skip=0), reference_sobol(2, 64))


class TestContract:
    def test_determinism(self):
        a = sobol_points(16, 100, skip=1)
        b = sobol_points(16, 100, skip=1)
        assert np.array_equal(a, b)

    def test_stream_continuation_matches_skip(self):
        stream = SobolStream(5, skip=1)
        combined = np.vstack([stream.take(10), stream.take(10)])
        assert np.array_equal(combined, sobol_points(5, 20, skip=1))

    def test_range(self):
        pts = sobol_points(32, 512, skip=1)
        assert pts.min() >= 0.0 and pts.max() < 1.0

    def test_unsupported_dimension(self):
        with pytest.raises(UnsupportedDimension):
            sobol_points(33, 4)
        with pytest.raises(UnsupportedDimension):
            sobol_points(0, 4)


def grid_discrepancy(points: np.ndarray, grid: int = 64) -> float:
    """Coarse star-discrepancy estimate over an anchored-box grid."""
    n = points.shape[0]
    hist, _, _ = np.histogram2d(
        points[:, 0], points[:, 1], bins=grid, range=[[0, 1], [0, 1]]
    )
    empirical = hist.cumsum(axis=0).cumsum(axis=1) / n
    edges = (np.arange(grid) + 1) / grid
    volume = np.outer(edges, edges)
    return float(np.abs(empirical - volume).max())


class TestLowDiscrepancy:
    def test_beats_uniform_random(self):
        sob = grid_discrepancy(sobol_points(2, 256, skip=1))
        rng = np.random.default_rng(11)
        randoms = [grid_discrepancy(rng.random((256, 2))) for _ in range(20)]
        assert sob < np.median(randoms)
