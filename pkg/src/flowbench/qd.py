"""Voronoi-archive illumination and the surrogate-assisted sampling loop.

Elites are niched on normalized (area, enstrophy) features over a
centroidal Voronoi tessellation; fitness (peak flow speed) is minimized.
Between expensive evaluations the archive is filled by mutating elites
and judging the children with surrogate predictions.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import BudgetExhausted, EmptyArchive, InsufficientElites
from .sobol import SobolStream, sobol_points
from .surrogate import GPModel, gp_fit

GENOME_DIM = 16
CVT_SAMPLES_PER_CELL = 100
CVT_ITERATIONS = 50
NORMALIZATION_MARGIN = 0.1


@dataclass(frozen=True)
class FeatureDescriptor:
    """Linear normalization range for one phenotype feature."""

    name: str
    lo: float
    hi: float

    def normalize(self, values) -> np.ndarray:
        span = self.hi - self.lo
        if span <= 0:
            span = 1.0
        return np.clip((np.asarray(values, dtype=float) - self.lo) / span, 0.0, 1.0)

    def denormalize(self, values) -> np.ndarray:
        return self.lo + np.asarray(values, dtype=float) * (self.hi - self.lo)

    @classmethod
    def from_observed(cls, name: str, values, margin: float = NORMALIZATION_MARGIN):
        values = np.asarray(values, dtype=float)
        lo, hi = float(values.min()), float(values.max())
        span = max(hi - lo, 1e-12)
        return cls(name, lo - margin * span, hi + margin * span)


UNIT_DESCRIPTORS = (FeatureDescriptor("area", 0.0, 1.0), FeatureDescriptor("enstrophy", 0.0, 1.0))


class AssignOutcome(enum.Enum):
    INSERTED = "inserted"
    REPLACED = "replaced"
    REJECTED = "rejected"


@dataclass
class TraceEvent:
    round_index: int
    update_index: int
    niche: int
    fitness: float
    outcome: str


class VoronoiArchive:
    """Elite container over a fixed centroid tessellation of [0,1]^2."""

    def __init__(
        self,
        centroids: np.ndarray,
        descriptors: tuple[FeatureDescriptor, FeatureDescriptor] = UNIT_DESCRIPTORS,
        genome_dim: int = GENOME_DIM,
    ):
        self.centroids = np.asarray(centroids, dtype=float)
        if self.centroids.ndim != 2 or self.centroids.shape[1] != 2:
            raise ValueError("centroids must be (k, 2)")
        self.descriptors = descriptors
        self.genome_dim = genome_dim
        k = self.capacity
        self._tree = cKDTree(self.centroids)
        self.occupied = np.zeros(k, dtype=bool)
        self.genomes = np.zeros((k, genome_dim))
        self.fitness = np.full(k, np.inf)
        self.features_raw = np.zeros((k, 2))
        self.features_norm = np.zeros((k, 2))
        self.provenance = np.array(["predicted"] * k, dtype="<U9")

    @property
    def capacity(self) -> int:
        return self.centroids.shape[0]

    def occupancy(self) -> int:
        return int(self.occupied.sum())

    def normalize(self, features_raw: np.ndarray) -> np.ndarray:
        features_raw = np.atleast_2d(np.asarray(features_raw, dtype=float))
        return np.column_stack(
            [self.descriptors[j].normalize(features_raw[:, j]) for j in range(2)]
        )

    def nearest_cells(self, features_norm: np.ndarray) -> np.ndarray:
        _, idx = self._tree.query(np.atleast_2d(features_norm))
        return np.atleast_1d(idx)

    def assign(
        self,
        genome: np.ndarray,
        features_raw,
        fitness: float,
        provenance: str = "predicted",
        cell: int | None = None,
    ) -> AssignOutcome:
        """Insert into the nearest niche, or replace a strictly worse
        incumbent (minimization; ties keep the incumbent)."""
        if not np.isfinite(fitness) or not np.all(np.isfinite(features_raw)):
            return AssignOutcome.REJECTED
        norm = self.normalize(features_raw)[0]
        if cell is None:
            cell = int(self.nearest_cells(norm)[0])
        if not self.occupied[cell]:
            outcome = AssignOutcome.INSERTED
        elif fitness < self.fitness[cell]:
            outcome = AssignOutcome.REPLACED
        else:
            return AssignOutcome.REJECTED
        self.occupied[cell] = True
        self.genomes[cell] = genome
        self.fitness[cell] = fitness
        self.features_raw[cell] = np.asarray(features_raw, dtype=float).reshape(2)
        self.features_norm[cell] = norm
        self.provenance[cell] = provenance
        return outcome

    def elite_indices(self) -> np.ndarray:
        return np.nonzero(self.occupied)[0]

    def best_cell(self) -> int:
        if not self.occupied.any():
            raise EmptyArchive("archive holds no elites")
        masked = np.where(self.occupied, self.fitness, np.inf)
        return int(np.argmin(masked))

    def fresh_copy(self) -> "VoronoiArchive":
        """Empty archive sharing centroids and descriptors."""
        return VoronoiArchive(self.centroids, self.descriptors, self.genome_dim)

    def reduce(self, max_cells: int, seed: int = 0) -> "VoronoiArchive":
        """Re-assign elites to a smaller tessellation; per new cell the
        best-fitness elite survives."""
        if max_cells < 1:
            raise ValueError("max_cells must be >= 1")
        if max_cells >= self.capacity:
            return self
        small = VoronoiArchive(
            cvt_centroids(max_cells, seed), self.descriptors, self.genome_dim
        )
        for idx in self.elite_indices():
            small.assign(
                self.genomes[idx],
                self.features_raw[idx],
                float(self.fitness[idx]),
                provenance=str(self.provenance[idx]),
            )
        return small

    def to_rows(self) -> list[dict]:
        rows = []
        for idx in self.elite_indices():
            row = {
                "niche_id": int(idx),
                "centroid_a": float(self.centroids[idx, 0]),
                "centroid_e": float(self.centroids[idx, 1]),
                "area": float(self.features_raw[idx, 0]),
                "enstrophy": float(self.features_raw[idx, 1]),
                "fitness": float(self.fitness[idx]),
                "provenance": str(self.provenance[idx]),
            }
            for j in range(self.genome_dim):
                row[f"g{j}"] = float(self.genomes[idx, j])
            rows.append(row)
        return rows


def cvt_centroids(k: int, seed: int) -> np.ndarray:
    """Centroidal tessellation: seeded k-means over 100*k Sobol points."""
    if k < 1:
        raise ValueError("capacity must be >= 1")
    samples = sobol_points(2, CVT_SAMPLES_PER_CELL * k, skip=1)
    if k == 1:
        return samples.mean(axis=0, keepdims=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        centroids, _ = kmeans2(samples, k, iter=CVT_ITERATIONS, minit="++", seed=seed)
    return centroids


def init_archive(
    capacity: int,
    seed: int = 0,
    descriptors: tuple[FeatureDescriptor, FeatureDescriptor] = UNIT_DESCRIPTORS,
) -> VoronoiArchive:
    return VoronoiArchive(cvt_centroids(capacity, seed), descriptors)


@dataclass
class SphenConfig:
    init_samples: int = 100
    batch_size: int = 10
    total_budget: int = 1000
    archive_updates_per_round: int = 1000
    children_per_update: int = 25
    mutation_sigma: float = 0.1
    archive_capacity: int = 1000
    rng_seed: int = 0
    ucb_kappa: float = 0.0    # 0 = plain predicted-mean acquisition
    record_trace: bool = False

    @classmethod
    def desk(cls) -> "SphenConfig":
        return cls(init_samples=50, total_budget=150, archive_capacity=100)

    def violations(self) -> dict[str, str]:
        problems: dict[str, str] = {}
        if self.init_samples < 1:
            problems["init_samples"] = "must be >= 1"
        if self.batch_size < 1:
            problems["batch_size"] = "must be >= 1"
        if self.total_budget < self.init_samples:
            problems["total_budget"] = "must be >= init_samples"
        elif (self.total_budget - self.init_samples) % self.batch_size != 0:
            problems["total_budget"] = (
                "total_budget - init_samples must be divisible by batch_size"
            )
        if self.mutation_sigma <= 0:
            problems["mutation_sigma"] = "must be positive"
        if self.archive_capacity < 1:
            problems["archive_capacity"] = "must be >= 1"
        if self.archive_updates_per_round < 1:
            problems["archive_updates_per_round"] = "must be >= 1"
        if self.children_per_update < 1:
            problems["children_per_update"] = "must be >= 1"
        return problems

    # Budget arithmetic used by the counters check and progress reports.
    @property
    def rounds(self) -> int:
        return (self.total_budget - self.init_samples) // self.batch_size

    @property
    def children_per_round(self) -> int:
        return self.archive_updates_per_round * self.children_per_update

    @property
    def total_proposals(self) -> int:
        return self.rounds * self.children_per_round


def illuminate(
    archive: VoronoiArchive,
    predict_fitness,
    predict_features,
    config: SphenConfig,
    rng: np.random.Generator,
    trace: list[TraceEvent] | None = None,
    round_index: int = -1,
) -> VoronoiArchive:
    """Fill the archive with surrogate-judged mutations of its elites.

    Each update draws children_per_update parents uniformly from the
    elites, perturbs every component with N(0, sigma^2), clamps to [0,1],
    predicts features and fitness, and assigns the children in order.
    """
    if not archive.occupied.any():
        raise EmptyArchive("cannot illuminate an empty archive")
    n_children = config.children_per_update
    for update in range(config.archive_updates_per_round):
        elite_idx = archive.elite_indices()
        parents = archive.genomes[elite_idx[rng.integers(0, elite_idx.size, n_children)]]
        children = np.clip(
            parents + rng.normal(0.0, config.mutation_sigma, parents.shape), 0.0, 1.0
        )
        feats = predict_features(children)
        fits = predict_fitness(children)
        cells = archive.nearest_cells(archive.normalize(feats))
        for c in range(n_children):
            outcome = archive.assign(
                children[c], feats[c], float(fits[c]), "predicted", cell=int(cells[c])
            )
            if trace is not None and outcome is not AssignOutcome.REJECTED:
                trace.append(
                    TraceEvent(round_index, update, int(cells[c]), float(fits[c]), outcome.value)
                )
    return archive


def select_acquisitions(
    archive: VoronoiArchive, n: int, stream: SobolStream | None = None
) -> np.ndarray:
    """Pick n distinct elites spread over feature space: each Sobol point
    claims the nearest not-yet-picked elite."""
    elite_idx = archive.elite_indices()
    if elite_idx.size < n:
        raise InsufficientElites(f"need {n} elites, archive holds {elite_idx.size}")
    stream = stream or SobolStream(2, skip=1)
    points = stream.take(n)
    feats = archive.features_norm[elite_idx]
    dist = cdist(points, feats)
    picked = []
    taken = np.zeros(elite_idx.size, dtype=bool)
    for p in range(n):
        order = np.argsort(dist[p])
        choice = next(int(j) for j in order if not taken[j])
        taken[choice] = True
        picked.append(elite_idx[choice])
    return archive.genomes[np.array(picked)].copy()


@dataclass
class Sample:
    genome: np.ndarray
    ok: bool
    u_max: float = float("nan")
    enstrophy: float = float("nan")
    area: float = float("nan")
    round_index: int = -1


@dataclass
class RoundStats:
    round_index: int
    evaluations: int
    failures: int
    occupancy: int
    best_fitness: float
    umax_hyper: dict
    enstrophy_hyper: dict


@dataclass
class RunResult:
    config: SphenConfig
    archive: VoronoiArchive
    samples: list[Sample]
    descriptors: tuple[FeatureDescriptor, FeatureDescriptor]
    model_umax: GPModel
    model_enstrophy: GPModel
    stats: list[RoundStats]
    trace: list[TraceEvent] = field(default_factory=list)
    evaluation_count: int = 0
    proposal_count: int = 0
    rebuild_proposals: int = 0

    def best_sample(self) -> Sample:
        ok = [s for s in self.samples if s.ok]
        return min(ok, key=lambda s: s.u_max)


def _fit_models(samples: list[Sample]) -> tuple[GPModel, GPModel]:
    ok = [s for s in samples if s.ok]
    X = np.array([s.genome for s in ok])
    model_u = gp_fit(X, np.array([s.u_max for s in ok]))
    model_e = gp_fit(X, np.array([s.enstrophy for s in ok]))
    return model_u, model_e


def build_expanded_archive(
    result: RunResult,
    capacity: int,
    area_fn,
    seed: int = 0,
    updates: int = 1000,
    children: int = 25,
    sigma: float = 0.1,
) -> VoronoiArchive:
    """Grow a larger elite archive from a finished run's final models,
    without any new simulations (larger solution sets for model training
    or browsing)."""
    archive = VoronoiArchive(
        cvt_centroids(capacity, seed), result.descriptors
    )
    for s in result.samples:
        if s.ok:
            archive.assign(s.genome, (s.area, s.enstrophy), s.u_max, "simulated")

    def predict_fitness(genomes):
        return result.model_umax.predict(genomes)[0]

    def predict_features(genomes):
        e_mean, _ = result.model_enstrophy.predict(genomes)
        return np.column_stack([area_fn(genomes), e_mean])

    config = SphenConfig(
        archive_updates_per_round=updates,
        children_per_update=children,
        mutation_sigma=sigma,
        archive_capacity=capacity,
        rng_seed=seed,
    )
    illuminate(
        archive, predict_fitness, predict_features, config, np.random.default_rng(seed)
    )
    return archive


def sphen_run(
    evaluator,
    config: SphenConfig,
    initial_genomes: np.ndarray | None = None,
    fixed_descriptors: tuple[FeatureDescriptor, FeatureDescriptor] | None = None,
    progress=None,
) -> RunResult:
    """Run the full surrogate-assisted niching loop.

    evaluator must provide map(genomes) -> list with (ok, u_max,
    enstrophy, area) fields and exact_area(genomes) -> array. Feature
    normalization is frozen after the initial round unless fixed
    descriptors are supplied (zoomed child runs).
    """
    problems = config.violations()
    if problems:
        from .errors import ValidationError

        raise ValidationError(problems)

    rng = np.random.default_rng(config.rng_seed)
    genome_stream = SobolStream(GENOME_DIM, skip=1)
    acquisition_stream = SobolStream(2, skip=1)

    if initial_genomes is not None and len(initial_genomes) > 0:
        seeds = np.clip(np.atleast_2d(np.asarray(initial_genomes, dtype=float)), 0.0, 1.0)
        if seeds.shape[0] < config.init_samples:
            fill = genome_stream.take(config.init_samples - seeds.shape[0])
            seeds = np.vstack([seeds, fill])
        else:
            seeds = seeds[: config.init_samples]
    else:
        seeds = genome_stream.take(config.init_samples)

    samples: list[Sample] = []
    trace: list[TraceEvent] = []

    def run_batch(genomes: np.ndarray, round_index: int) -> int:
        results = evaluator.map(genomes)
        failures = 0
        for g, r in zip(genomes, results):
            ok = bool(getattr(r, "ok", False))
            failures += 0 if ok else 1
            samples.append(
                Sample(
                    genome=np.array(g),
                    ok=ok,
                    u_max=float(r.u_max) if ok else float("nan"),
                    enstrophy=float(r.enstrophy) if ok else float("nan"),
                    area=float(r.area) if ok else float("nan"),
                    round_index=round_index,
                )
            )
        return failures

    init_failures = run_batch(seeds, round_index=-1)
    ok_samples = [s for s in samples if s.ok]
    if init_failures > 0.5 * config.init_samples or not ok_samples:
        raise BudgetExhausted(
            f"{init_failures}/{config.init_samples} initial evaluations failed",
            partial=samples,
        )

    if fixed_descriptors is not None:
        descriptors = fixed_descriptors
    else:
        descriptors = (
            FeatureDescriptor.from_observed("area", [s.area for s in ok_samples]),
            FeatureDescriptor.from_observed("enstrophy", [s.enstrophy for s in ok_samples]),
        )

    model_u, model_e = _fit_models(samples)
    centroids = cvt_centroids(config.archive_capacity, config.rng_seed)

    def predict_fitness(genomes: np.ndarray) -> np.ndarray:
        mean, var = model_u.predict(genomes)
        if config.ucb_kappa > 0.0:
            return mean - config.ucb_kappa * np.sqrt(var)
        return mean

    def predict_features(genomes: np.ndarray) -> np.ndarray:
        areas = evaluator.exact_area(genomes)
        e_mean, _ = model_e.predict(genomes)
        return np.column_stack([areas, e_mean])

    def seeded_archive() -> VoronoiArchive:
        archive = VoronoiArchive(centroids, descriptors)
        for s in samples:
            if s.ok:
                archive.assign(s.genome, (s.area, s.enstrophy), s.u_max, "simulated")
        return archive

    stats: list[RoundStats] = []
    proposal_count = 0
    archive = seeded_archive()

    def hyper_dict(model: GPModel) -> dict:
        return {
            "length_scale": model.hyper.length_scale,
            "signal_variance": model.hyper.signal_variance,
            "noise_variance": model.hyper.noise_variance,
        }

    def record_stats(round_index: int, evaluations: int, failures: int):
        stats.append(
            RoundStats(
                round_index=round_index,
                evaluations=evaluations,
                failures=failures,
                occupancy=archive.occupancy(),
                best_fitness=float(archive.fitness[archive.best_cell()]),
                umax_hyper=hyper_dict(model_u),
                enstrophy_hyper=hyper_dict(model_e),
            )
        )

    for round_index in range(config.rounds):
        archive = seeded_archive()
        illuminate(
            archive,
            predict_fitness,
            predict_features,
            config,
            rng,
            trace=trace if config.record_trace else None,
            round_index=round_index,
        )
        proposal_count += config.children_per_round
        batch = select_acquisitions(archive, config.batch_size, acquisition_stream)
        failures = run_batch(batch, round_index=round_index)
        if failures > 0.5 * config.batch_size:
            raise BudgetExhausted(
                f"round {round_index}: {failures}/{config.batch_size} evaluations failed",
                partial=samples,
            )
        model_u, model_e = _fit_models(samples)
        record_stats(round_index, len(samples), failures)
        if progress is not None:
            progress(round_index + 1, config.rounds, len(samples))

    # Final rebuild with the last models (counted separately from the
    # per-round proposal total).
    archive = seeded_archive()
    illuminate(
        archive,
        predict_fitness,
        predict_features,
        config,
        rng,
        trace=trace if config.record_trace else None,
        round_index=config.rounds,
    )
    rebuild_proposals = config.children_per_round
    record_stats(config.rounds, len(samples), 0)

    return RunResult(
        config=config,
        archive=archive,
        samples=samples,
        descriptors=descriptors,
        model_umax=model_u,
        model_enstrophy=model_e,
        stats=stats,
        trace=trace,
        evaluation_count=len(samples),
        proposal_count=proposal_count,
        rebuild_proposals=rebuild_proposals,
    )
