"""Tests for the Voronoi archive and the surrogate-assisted loop."""

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from flowbench.errors import (
    BudgetExhausted,
    EmptyArchive,
    InsufficientElites,
    ValidationError,
)
from flowbench.evaluators import EvalResult, SyntheticEvaluator
from flowbench.qd import (
    AssignOutcome,
    FeatureDescriptor,
    SphenConfig,
    VoronoiArchive,
    cvt_centroids,
    illuminate,
    init_archive,
    select_acquisitions,
    sphen_run,
)
from flowbench.sobol import SobolStream, sobol_points


class TestCvt:
    def test_single_centroid_near_center(self):
        archive = init_archive(1, seed=0)
        assert np.abs(archive.centroids[0] - 0.5).max() < 0.02

    def test_even_tessellation(self):
        centroids = cvt_centroids(100, seed=1)
        d = cdist(centroids, centroids)
        np.fill_diagonal(d, np.inf)
        nearest = d.min(axis=1)
        assert nearest.std() / nearest.mean() < 0.5

    def test_seed_determinism(self):
        assert np.array_equal(cvt_centroids(50, seed=3), cvt_centroids(50, seed=3))


class TestAssign:
    def setup_method(self):
        self.archive = init_archive(20, seed=0)
        self.genome = np.full(16, 0.5)

    def test_insert_into_empty_cell(self):
        out = self.archive.assign(self.genome, (0.5, 0.5), 1.0)
        assert out is AssignOutcome.INSERTED

    def test_replace_strictly_better(self):
        self.archive.assign(self.genome, (0.5, 0.5), 1.0)
        out = self.archive.assign(self.genome, (0.5, 0.5), 0.5)
        assert out is AssignOutcome.REPLACED

    def test_tie_keeps_incumbent(self):
        self.archive.assign(self.genome, (0.5, 0.5), 1.0)
        marker = np.full(16, 0.9)
        out = self.archive.assign(marker, (0.5, 0.5), 1.0)
        assert out is AssignOutcome.REJECTED
        cell = self.archive.nearest_cells([[0.5, 0.5]])[0]
        assert self.archive.genomes[cell][0] == 0.5

    def test_nonfinite_candidates_rejected(self):
        assert self.archive.assign(self.genome, (np.nan, 0.5), 1.0) is AssignOutcome.REJECTED
        assert self.archive.assign(self.genome, (0.5, 0.5), np.inf) is AssignOutcome.REJECTED

    def test_nearest_centroid_consistency(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            self.archive.assign(rng.random(16), rng.random(2), rng.random())
        for idx in self.archive.elite_indices():
            cell = self.archive.nearest_cells([self.archive.features_norm[idx]])[0]
            assert cell == idx

    def test_normalization_clamps(self):
        desc = (FeatureDescriptor("area", 0.0, 2.0), FeatureDescriptor("enstrophy", 0.0, 2.0))
        archive = VoronoiArchive(cvt_centroids(10, 0), desc)
        norm = archive.normalize([(4.0, -1.0)])
        assert norm[0, 0] == 1.0 and norm[0, 1] == 0.0


def constant_predictors(value=1.0):
    def predict_fitness(genomes):
        return np.full(len(genomes), value)

    def predict_features(genomes):
        return np.column_stack([genomes[:, 0], genomes[:, 1]])

    return predict_fitness, predict_features


class TestIlluminate:
    def test_empty_archive_raises(self):
        archive = init_archive(10, seed=0)
        pf, pfeat = constant_predictors()
        with pytest.raises(EmptyArchive):
            illuminate(archive, pf, pfeat, SphenConfig(), np.random.default_rng(0))

    def test_constant_fitness_occupancy_nondecreasing(self):
        archive = init_archive(50, seed=0)
        pf, pfeat = constant_predictors()
        archive.assign(np.full(16, 0.5), (0.5, 0.5), 1.0)
        config = SphenConfig(archive_updates_per_round=50, children_per_update=10)
        occ = [archive.occupancy()]

        rng = np.random.default_rng(1)
        for _ in range(4):
            config_one = SphenConfig(archive_updates_per_round=1, children_per_update=10)
            illuminate(archive, pf, pfeat, config_one, rng)
            occ.append(archive.occupancy())
        assert all(a <= b for a, b in zip(occ, occ[1:]))
        assert occ[-1] >= occ[1]

    def test_per_niche_traces_monotone(self):
        archive = init_archive(30, seed=0)
        rng = np.random.default_rng(2)

        def pf(genomes):
            return genomes.sum(axis=1)

        def pfeat(genomes):
            return np.column_stack([genomes[:, 0], genomes[:, 1]])

        for _ in range(5):
            archive.assign(rng.random(16), rng.random(2), 10.0)
        trace = []
        config = SphenConfig(archive_updates_per_round=200, children_per_update=5)
        illuminate(archive, pf, pfeat, config, rng, trace=trace, round_index=0)
        per_niche = {}
        for ev in trace:
            per_niche.setdefault(ev.niche, []).append(ev.fitness)
        assert per_niche
        for fits in per_niche.values():
            assert all(a >= b for a, b in zip(fits, fits[1:]))


class TestSelectAcquisitions:
    def make_archive(self, n_elites=12):
        archive = init_archive(30, seed=0)
        rng = np.random.default_rng(3)
        while archive.occupancy() < n_elites:
            archive.assign(rng.random(16), rng.random(2), rng.random())
        return archive

    def test_full_selection_returns_each_elite_once(self):
        archive = self.make_archive(12)
        picked = select_acquisitions(archive, archive.occupancy())
        elites = archive.genomes[archive.elite_indices()]
        d = cdist(picked, elites)
        assert (d.min(axis=1) == 0).all()
        assert np.unique(d.argmin(axis=1)).size == archive.occupancy()

    def test_single_selection_is_nearest_to_first_sobol_point(self):
        archive = self.make_archive(12)
        picked = select_acquisitions(archive, 1, SobolStream(2, skip=1))
        first = sobol_points(2, 1, skip=1)[0]
        idx = archive.elite_indices()
        nearest = idx[cdist([first], archive.features_norm[idx]).argmin()]
        assert np.array_equal(picked[0], archive.genomes[nearest])

    def test_insufficient_elites(self):
        archive = self.make_archive(3)
        with pytest.raises(InsufficientElites):
            select_acquisitions(archive, 10)

    def test_spread_beats_random_selection(self):
        archive = self.make_archive(25)
        idx = archive.elite_indices()
        feats = archive.features_norm[idx]
        n = 6

        def min_pairwise(sel):
            d = cdist(sel, sel)
            np.fill_diagonal(d, np.inf)
            return d.min()

        sobol_sel = select_acquisitions(archive, n, SobolStream(2, skip=1))
        sel_feats = feats[cdist(sobol_sel, archive.genomes[idx]).argmin(axis=1)]
        sobol_spread = min_pairwise(sel_feats)

        rng = np.random.default_rng(4)
        random_spreads = []
        for _ in range(20):
            choice = rng.choice(idx.size, n, replace=False)
            random_spreads.append(min_pairwise(feats[choice]))
        assert sobol_spread >= np.median(random_spreads)


class TestSphenConfig:
    def test_full_scale_default_arithmetic(self):
        config = SphenConfig()
        assert config.init_samples + config.rounds * config.batch_size == 1000
        assert config.rounds == 90
        assert config.children_per_round == 25_000
        assert config.total_proposals == 2_250_000

    def test_budget_divisibility_enforced(self):
        assert "total_budget" in SphenConfig(total_budget=105, batch_size=10).violations()
        assert SphenConfig().violations() == {}


class FailingEvaluator:
    """Evaluator whose every call fails, for abort-path tests."""

    def map(self, genomes):
        return [EvalResult(False, reason="boom") for _ in genomes]

    def exact_area(self, genomes):
        return np.zeros(len(genomes))


class TestSphenRun:
    def small_config(self, **overrides):
        base = dict(
            init_samples=20,
            batch_size=5,
            total_budget=40,
            archive_updates_per_round=60,
            children_per_update=10,
            archive_capacity=30,
            rng_seed=7,
            record_trace=True,
        )
        base.update(overrides)
        return SphenConfig(**base)

    def test_sample_count_exact(self):
        result = sphen_run(SyntheticEvaluator(), self.small_config())
        assert result.evaluation_count == 40
        assert len(result.samples) == 40

    def test_budget_equals_init_degenerates(self):
        config = self.small_config(total_budget=20)
        result = sphen_run(SyntheticEvaluator(), config)
        assert config.rounds == 0
        assert result.evaluation_count == 20
        assert result.proposal_count == 0
        assert result.rebuild_proposals == config.children_per_round
        assert result.archive.occupancy() >= 1

    def test_seed_determinism(self):
        a = sphen_run(SyntheticEvaluator(), self.small_config())
        b = sphen_run(SyntheticEvaluator(), self.small_config())
        assert np.array_equal(a.archive.genomes, b.archive.genomes)
        assert np.array_equal(a.archive.fitness, b.archive.fitness)
        assert a.evaluation_count == b.evaluation_count
        for sa, sb in zip(a.samples, b.samples):
            assert np.array_equal(sa.genome, sb.genome)
            assert sa.u_max == sb.u_max or (np.isnan(sa.u_max) and np.isnan(sb.u_max))

    def test_archive_genomes_clamped(self):
        result = sphen_run(SyntheticEvaluator(), self.small_config())
        g = result.archive.genomes[result.archive.elite_indices()]
        assert g.min() >= 0.0 and g.max() <= 1.0

    def test_distinct_centroids_per_elite(self):
        result = sphen_run(SyntheticEvaluator(), self.small_config())
        idx = result.archive.elite_indices()
        cells = result.archive.nearest_cells(result.archive.features_norm[idx])
        assert np.unique(cells).size == idx.size

    def test_trace_monotone_within_rounds(self):
        result = sphen_run(SyntheticEvaluator(), self.small_config())
        per_round_niche = {}
        for ev in result.trace:
            per_round_niche.setdefault((ev.round_index, ev.niche), []).append(ev.fitness)
        assert per_round_niche
        for fits in per_round_niche.values():
            assert all(a >= b for a, b in zip(fits, fits[1:]))

    def test_all_failures_abort(self):
        with pytest.raises(BudgetExhausted) as excinfo:
            sphen_run(FailingEvaluator(), self.small_config())
        assert excinfo.value.partial is not None

    def test_invalid_config_rejected(self):
        with pytest.raises(ValidationError):
            sphen_run(SyntheticEvaluator(), self.small_config(total_budget=43))

    def test_proposal_counters(self):
        config = self.small_config()
        result = sphen_run(SyntheticEvaluator(), config)
        assert result.proposal_count == config.rounds * config.children_per_round
        assert result.rebuild_proposals == config.children_per_round


class TestReduce:
    def test_reduced_view_keeps_best_per_cell(self):
        result = sphen_run(
            SyntheticEvaluator(),
            SphenConfig(
                init_samples=30,
                batch_size=5,
                total_budget=40,
                archive_updates_per_round=100,
                children_per_update=10,
                archive_capacity=60,
                rng_seed=1,
            ),
        )
        small = result.archive.reduce(10, seed=0)
        assert small.capacity == 10
        assert small.occupancy() <= 10

        # Brute-force oracle: group source elites by nearest new centroid.
        src = result.archive
        idx = src.elite_indices()
        cells = cdist(src.features_norm[idx], small.centroids).argmin(axis=1)
        for cell in np.unique(cells):
            members = idx[cells == cell]
            best = members[src.fitness[members].argmin()]
            assert small.occupied[cell]
            assert small.fitness[cell] == src.fitness[best]

    def test_identity_when_not_smaller(self):
        archive = init_archive(10, seed=0)
        archive.assign(np.full(16, 0.5), (0.5, 0.5), 1.0)
        assert archive.reduce(10) is archive

    def test_invalid_size(self):
        archive = init_archive(10, seed=0)
        with pytest.raises(ValueError):
            archive.reduce(0)
