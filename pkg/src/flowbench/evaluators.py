"""Genome evaluators feeding the sampling loop.

LbmEvaluator runs real channel-flow simulations (optionally across
worker processes); SyntheticEvaluator is a deterministic analytic
stand-in for fast tests of the loop itself.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .encoding import RADIUS_LO, RADIUS_SPAN, ShapeGenome, area, decode_and_rasterize
from .lbm import LbmConfig, simulate


@dataclass(frozen=True)
class EvalResult:
    ok: bool
    u_max: float = float("nan")
    enstrophy: float = float("nan")
    area: float = float("nan")
    reason: str = ""


def _simulate_genome(args) -> EvalResult:
    params, config, resolution = args
    bitmap = decode_and_rasterize(ShapeGenome(params), resolution)
    metrics = simulate(bitmap, config)
    if metrics.ok:
        return EvalResult(True, metrics.u_max, metrics.enstrophy, metrics.area)
    return EvalResult(False, area=metrics.area, reason=metrics.reason)


@dataclass
class LbmEvaluator:
    """Decode, rasterize, and simulate each genome."""

    config: LbmConfig = field(default_factory=LbmConfig.desk)
    resolution: int = 64
    workers: int = 1

    def evaluate(self, params: np.ndarray) -> EvalResult:
        return _simulate_genome((np.asarray(params, dtype=float), self.config, self.resolution))

    def map(self, genomes: np.ndarray) -> list[EvalResult]:
        jobs = [(np.asarray(g, dtype=float), self.config, self.resolution) for g in genomes]
        if self.workers <= 1 or len(jobs) <= 1:
            return [_simulate_genome(j) for j in jobs]
        with ProcessPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(_simulate_genome, jobs))

    def exact_area(self, genomes: np.ndarray) -> np.ndarray:
        genomes = np.atleast_2d(np.asarray(genomes, dtype=float))
        return np.array(
            [area(decode_and_rasterize(ShapeGenome(g), self.resolution)) for g in genomes]
        )


def _mapped_radii(genomes: np.ndarray) -> np.ndarray:
    return RADIUS_LO + RADIUS_SPAN * genomes[:, 0::2]


@dataclass
class SyntheticEvaluator:
    """Analytic pseudo-flow metrics; deterministic and instantaneous.

    Area tracks the mean squared mapped radius (a disk-like footprint
    fraction), enstrophy tracks radius spread, and the fitness mixes
    both so niches compete the way the real domain does.
    """

    failure_rate: float = 0.0    # deterministic pseudo-failures for tests
    _counter: int = field(default=0, repr=False)

    def _metrics(self, genomes: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        genomes = np.atleast_2d(np.asarray(genomes, dtype=float))
        rho = _mapped_radii(genomes)
        offsets = genomes[:, 1::2]
        a = (rho**2).mean(axis=1) * 0.9
        e = (
            2.5 * rho.std(axis=1)
            + 0.8 * np.abs(offsets - 0.5).mean(axis=1)
            + 0.15 * np.sin(3.0 * np.pi * rho.mean(axis=1))
            + 0.2
        )
        u = 0.05 + 0.55 * a + 0.35 * e + 0.08 * np.sin(2.0 * np.pi * offsets.mean(axis=1))
        return u, e, a

    def evaluate(self, params: np.ndarray) -> EvalResult:
        return self.map(np.atleast_2d(params))[0]

    def map(self, genomes: np.ndarray) -> list[EvalResult]:
        u, e, a = self._metrics(genomes)
        out = []
        for i in range(len(u)):
            self._counter += 1
            if self.failure_rate > 0 and (self._counter * self.failure_rate) % 1.0 >= (
                1.0 - self.failure_rate
            ):
                out.append(EvalResult(False, reason="synthetic failure"))
            else:
                out.append(EvalResult(True, float(u[i]), float(e[i]), float(a[i])))
        return out

    def exact_area(self, genomes: np.ndarray) -> np.ndarray:
        genomes = np.atleast_2d(np.asarray(genomes, dtype=float))
        return (_mapped_radii(genomes) ** 2).mean(axis=1) * 0.9
