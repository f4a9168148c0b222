"""Shape encoding: 16-parameter genomes decoded to closed polar splines.

A genome holds 8 (radius, angular-offset) pairs in [0,1]. Control points
are placed on jittered sector angles, a periodic cubic spline interpolates
radius over angle, and the closed outline is rasterized onto a square
occupancy grid with a scanline even-odd fill.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.interpolate import CubicSpline

from .errors import DegenerateShape

GENOME_SIZE = 16
NUM_CONTROL_POINTS = 8
DEFAULT_RESOLUTION = 64
OUTLINE_SAMPLES = 256

# Radius mapping keeps every genome valid: radii stay in
# [0.1, 0.9] x (resolution/2 - 1) so shapes never touch the border.
RADIUS_LO = 0.1
RADIUS_SPAN = 0.8
# Angular jitter is capped at +/-45% of a sector so knot angles stay
# strictly increasing for any genome.
ANGLE_JITTER = 0.9
# Spline interpolation can undershoot between knots; sampled radii are
# floored at 1 px so the outline cannot cross the center.
MIN_SAMPLED_RADIUS = 1.0


@dataclass(frozen=True)
class ShapeGenome:
    """Search-space point: 16 reals in [0,1], clamped on construction."""

    params: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.params, dtype=float).reshape(-1)
        if arr.size != GENOME_SIZE:
            raise ValueError(f"genome must have {GENOME_SIZE} components, got {arr.size}")
        arr = np.clip(arr, 0.0, 1.0)
        arr.flags.writeable = False
        object.__setattr__(self, "params", arr)

    @property
    def radii(self) -> np.ndarray:
        return self.params[0::2]

    @property
    def offsets(self) -> np.ndarray:
        return self.params[1::2]

    def to_json(self) -> str:
        return json.dumps([float(v) for v in self.params])

    @classmethod
    def from_json(cls, text: str) -> "ShapeGenome":
        return cls(np.asarray(json.loads(text), dtype=float))


@dataclass(frozen=True)
class SplineShape:
    """Closed outline: 8 polar control points plus the sampled curve."""

    control_angles: np.ndarray   # radians, strictly increasing
    control_radii: np.ndarray    # pixels
    outline: np.ndarray          # (n+1, 2) Cartesian, first point == last
    center: tuple[float, float]
    spline: CubicSpline = field(repr=False, compare=False)

    def radius_at(self, theta) -> np.ndarray:
        """Spline radius at arbitrary angles (periodic, floored)."""
        t0 = self.control_angles[0]
        wrapped = np.mod(np.asarray(theta, dtype=float) - t0, 2.0 * np.pi) + t0
        return np.maximum(self.spline(wrapped), MIN_SAMPLED_RADIUS)


@dataclass(frozen=True)
class Bitmap:
    """Square boolean occupancy grid, row-major, True = solid."""

    cells: np.ndarray
    resolution: int = DEFAULT_RESOLUTION

    def __post_init__(self):
        arr = np.asarray(self.cells, dtype=bool)
        if arr.shape != (self.resolution, self.resolution):
            raise ValueError(
                f"cells must be {self.resolution}x{self.resolution}, got {arr.shape}"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "cells", arr)

    def solid_count(self) -> int:
        return int(self.cells.sum())

    def is_connected(self) -> bool:
        """True when the solid region is one 4-connected component."""
        count = self.solid_count()
        if count == 0:
            return False
        _, num = ndimage.label(self.cells)
        return num == 1

    def to_pbm(self) -> str:
        rows = "\n".join(" ".join("1" if v else "0" for v in row) for row in self.cells)
        return f"P1\n{self.resolution} {self.resolution}\n{rows}\n"

    def to_json(self) -> str:
        return json.dumps([[int(v) for v in row] for row in self.cells])

    @classmethod
    def from_json(cls, text: str) -> "Bitmap":
        rows = json.loads(text)
        arr = np.asarray(rows, dtype=bool)
        return cls(arr, resolution=arr.shape[0])


def decode_genome(genome: ShapeGenome, resolution: int = DEFAULT_RESOLUTION) -> SplineShape:
    """Decode a genome into a closed periodic-spline outline.

    Control point i sits at angle 2*pi*i/8 jittered by up to +/-45% of a
    sector, with radius (0.1 + 0.8*r_i) * (resolution/2 - 1). The outline
    is the periodic natural cubic spline through the polar knots, sampled
    at OUTLINE_SAMPLES uniform angles.
    """
    if resolution < 16:
        raise ValueError("resolution must be >= 16")
    n = NUM_CONTROL_POINTS
    sector = 2.0 * np.pi / n
    angles = sector * np.arange(n) + (genome.offsets - 0.5) * sector * ANGLE_JITTER
    if not np.all(np.diff(angles) > 0):
        raise AssertionError("control angles must be strictly increasing")
    half = resolution / 2.0 - 1.0
    radii = (RADIUS_LO + RADIUS_SPAN * genome.radii) * half

    # Periodic closure: repeat the first knot one full turn later.
    theta_knots = np.append(angles, angles[0] + 2.0 * np.pi)
    rho_knots = np.append(radii, radii[0])
    spline = CubicSpline(theta_knots, rho_knots, bc_type="periodic")

    theta = angles[0] + np.linspace(0.0, 2.0 * np.pi, OUTLINE_SAMPLES + 1)
    rho = np.maximum(spline(theta), MIN_SAMPLED_RADIUS)
    rho[-1] = rho[0]  # exact closure
    center = (resolution / 2.0, resolution / 2.0)
    outline = np.column_stack(
        (center[0] + rho * np.cos(theta), center[1] + rho * np.sin(theta))
    )
    return SplineShape(
        control_angles=angles,
        control_radii=radii,
        outline=outline,
        center=center,
        spline=spline,
    )


def rasterize(shape: SplineShape, resolution: int = DEFAULT_RESOLUTION) -> Bitmap:
    """Fill the closed outline onto a grid: a cell is solid iff its center
    is inside by the even-odd rule; centers exactly on the outline count
    as solid.

    Sub-cell lobe tips can rasterize as diagonal-only satellites; those
    are dropped, keeping the 4-connected component around the shape
    center so every genome yields a valid bitmap.
    """
    xs = shape.outline[:, 0]
    ys = shape.outline[:, 1]
    x1, x2 = xs[:-1], xs[1:]
    y1, y2 = ys[:-1], ys[1:]
    dy = y2 - y1
    nondegenerate = dy != 0.0
    # Half-open rule in y avoids double-counting shared vertices.
    lo = np.minimum(y1, y2)
    hi = np.maximum(y1, y2)

    cells = np.zeros((resolution, resolution), dtype=bool)
    col_centers = np.arange(resolution) + 0.5
    row_lo = max(0, int(np.floor(ys.min() - 0.5)))
    row_hi = min(resolution - 1, int(np.ceil(ys.max() - 0.5)))
    for row in range(row_lo, row_hi + 1):
        yc = row + 0.5
        hit = nondegenerate & (lo <= yc) & (yc < hi)
        if not hit.any():
            continue
        t = (yc - y1[hit]) / dy[hit]
        crossings = np.sort(x1[hit] + t * (x2[hit] - x1[hit]))
        # Even-odd: fill between successive crossing pairs, inclusive on
        # both ends (center on the outline counts as solid).
        for a, b in zip(crossings[0::2], crossings[1::2]):
            cells[row, (col_centers >= a) & (col_centers <= b)] = True

    if not cells.any():
        raise DegenerateShape("no cell center falls inside the outline")

    labels, count = ndimage.label(cells)
    if count > 1:
        center_cell = (resolution // 2, resolution // 2)
        keep = labels[center_cell]
        if keep == 0:
            keep = np.argmax(np.bincount(labels[cells])) or 1
        cells = labels == keep
    return Bitmap(cells, resolution=resolution)


def decode_and_rasterize(
    genome: ShapeGenome, resolution: int = DEFAULT_RESOLUTION
) -> Bitmap:
    return rasterize(decode_genome(genome, resolution), resolution)


def area(bitmap: Bitmap) -> float:
    """Solid fraction of the grid, in [0, 1]."""
    return bitmap.solid_count() / float(bitmap.resolution**2)
