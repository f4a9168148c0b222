"""Tests for the convolutional VAE and latent-space tooling."""

import numpy as np
import pytest

from flowbench.encoding import ShapeGenome, decode_and_rasterize
from flowbench.errors import DegenerateShape
from flowbench.genmodel import (
    VaeConfig,
    build_model,
    decode,
    decode_probabilities,
    encode,
    encode_batch,
    fit_latent_predictors,
    generate_set,
    latent_walk,
    load_model,
    save_model,
    train_vae,
    _threshold_to_bitmap,
)

TINY = VaeConfig(
    latent_dim=3,
    input_resolution=16,
    conv_channels=(4, 8),
    epochs=5,
    batch_size=16,
    rng_seed=0,
)


def shape_set(n, seed=0, resolution=64):
    rng = np.random.default_rng(seed)
    return [
        decode_and_rasterize(ShapeGenome(rng.random(16)), resolution) for _ in range(n)
    ]


def iou(a, b) -> float:
    inter = np.logical_and(a.cells, b.cells).sum()
    union = np.logical_or(a.cells, b.cells).sum()
    return inter / union


@pytest.fixture(scope="module")
def trained_small():
    """Small but real model shared by the behavioral tests."""
    bitmaps = shape_set(160, seed=1)
    config = VaeConfig(epochs=60, learning_rate=2e-3, rng_seed=2)
    model = train_vae(bitmaps, config)
    return model, bitmaps


class TestConfig:
    def test_default_matches_architecture_contract(self):
        config = VaeConfig()
        assert config.latent_dim == 5
        assert config.conv_channels == (8, 16, 32, 64)
        assert config.input_resolution == 64
        assert config.violations() == {}

    def test_resolution_stride_consistency(self):
        assert "input_resolution" in VaeConfig(input_resolution=60).violations()

    def test_bad_values_reported(self):
        bad = VaeConfig(latent_dim=0, learning_rate=-1, epochs=0)
        problems = bad.violations()
        assert {"latent_dim", "learning_rate", "epochs"} <= set(problems)


class TestTraining:
    def test_requires_enough_bitmaps(self):
        with pytest.raises(ValueError):
            train_vae(shape_set(10), VaeConfig())

    def test_loss_decreases(self, trained_small):
        model, _ = trained_small
        assert model.loss_history[-1] < model.loss_history[0]

    def test_identical_dataset_reconstructs(self):
        bm = decode_and_rasterize(ShapeGenome(np.full(16, 0.5)), 64)
        model = train_vae([bm] * 120, VaeConfig(epochs=100, learning_rate=2e-3, rng_seed=1))
        rec = decode(model, encode(model, bm))
        assert iou(rec, bm) > 0.95

    def test_train_determinism(self):
        bitmaps = shape_set(100, seed=3, resolution=16)
        cfg = VaeConfig(
            latent_dim=3,
            input_resolution=16,
            conv_channels=(4, 8),
            epochs=3,
            rng_seed=9,
        )
        m1 = train_vae(bitmaps, cfg)
        m2 = train_vae(bitmaps, cfg)
        z1 = encode_batch(m1, bitmaps[:5])
        z2 = encode_batch(m2, bitmaps[:5])
        assert np.array_equal(z1, z2)

    def test_untrained_decoder_output_in_range(self):
        model = build_model(TINY)
        probs = decode_probabilities(model, np.zeros((1, 3)))
        assert probs.min() >= 0.0 and probs.max() <= 1.0


class TestGradientCheck:
    def test_autograd_matches_central_differences(self):
        import torch

        from flowbench._vae_torch import VaeNet

        torch.manual_seed(0)
        net = VaeNet(16, (4, 8), 3).double()
        x = (torch.rand(4, 1, 16, 16, dtype=torch.double) > 0.6).double()
        eps = torch.randn(4, 3, dtype=torch.double)

        loss = net.loss(x, eps, kl_weight=1.0)
        loss.backward()
        params = [p for p in net.parameters() if p.grad is not None]

        rng = np.random.default_rng(0)
        checked = 0
        h = 1e-6
        while checked < 5:
            p = params[rng.integers(len(params))]
            flat = p.detach().view(-1)
            i = int(rng.integers(flat.numel()))
            analytic = float(p.grad.view(-1)[i])
            if abs(analytic) < 1e-8:
                continue
            with torch.no_grad():
                original = float(flat[i])
                flat[i] = original + h
                up = float(net.loss(x, eps, 1.0))
                flat[i] = original - h
                down = float(net.loss(x, eps, 1.0))
                flat[i] = original
            numeric = (up - down) / (2 * h)
            assert abs(analytic - numeric) / max(abs(numeric), 1e-8) < 1e-4
            checked += 1

    def test_kl_closed_form(self):
        import torch

        # KL(N(m, e^lv) || N(0,1)) per dim, summed.
        def kl(mean, logvar):
            m = torch.tensor(mean, dtype=torch.double)
            lv = torch.tensor(logvar, dtype=torch.double)
            return float(-0.5 * (1.0 + lv - m.pow(2) - lv.exp()).sum())

        assert kl([0.0, 0.0], [0.0, 0.0]) == 0.0
        assert kl([0.5, 0.0], [0.0, 0.0]) > 0.0
        assert kl([0.0], [1.0]) > 0.0
        assert kl([0.0], [-1.0]) > 0.0
        rng = np.random.default_rng(1)
        for _ in range(50):
            assert kl(rng.normal(size=3).tolist(), rng.normal(size=3).tolist()) >= 0.0


class TestEncodeDecode:
    def test_encode_deterministic(self, trained_small):
        model, bitmaps = trained_small
        a = encode(model, bitmaps[0])
        b = encode(model, bitmaps[0])
        assert np.array_equal(a, b)
        assert np.isfinite(a).all()

    def test_decode_deterministic_bit_exact(self, trained_small):
        model, _ = trained_small
        z = np.array([0.3, -0.5, 1.0, 0.0, -1.2])
        p1 = decode_probabilities(model, z[None, :])
        p2 = decode_probabilities(model, z[None, :])
        assert np.array_equal(p1, p2)
        assert np.array_equal(decode(model, z).cells, decode(model, z).cells)

    def test_roundtrip_stays_on_manifold(self, trained_small):
        model, bitmaps = trained_small
        z = encode_batch(model, bitmaps[:20])
        recs = [decode(model, zi) for zi in z]
        z2 = encode_batch(model, recs)
        assert np.linalg.norm(z2 - z, axis=1).mean() < 1.0

    def test_distinct_shapes_distinct_latents(self, trained_small):
        model, _ = trained_small
        small = decode_and_rasterize(ShapeGenome(np.array([0.05, 0.5] * 8)), 64)
        big = decode_and_rasterize(ShapeGenome(np.array([0.95, 0.5] * 8)), 64)
        d = np.linalg.norm(encode(model, small) - encode(model, big))
        assert d > 1e-3

    def test_prior_mean_decodes_to_valid_bitmap(self, trained_small):
        model, _ = trained_small
        bitmap = decode(model, np.zeros(5))
        assert bitmap.is_connected()

    def test_reconstruction_iou(self, trained_small):
        model, bitmaps = trained_small
        z = encode_batch(model, bitmaps)
        vals = [iou(decode(model, zi), b) for zi, b in zip(z, bitmaps)]
        assert np.mean(vals) >= 0.75

    def test_threshold_tie_is_solid(self):
        probs = np.zeros((16, 16))
        probs[5, 5] = 0.5
        bitmap = _threshold_to_bitmap(probs, 16)
        assert bitmap.cells[5, 5]

    def test_degenerate_decode_raises(self):
        probs = np.full((16, 16), 0.49)
        with pytest.raises(DegenerateShape):
            _threshold_to_bitmap(probs, 16)

    def test_largest_component_kept(self):
        probs = np.zeros((16, 16))
        probs[2:6, 2:6] = 0.9       # 16 cells
        probs[10:12, 10:12] = 0.9   # 4 cells
        bitmap = _threshold_to_bitmap(probs, 16)
        assert bitmap.solid_count() == 16
        assert bitmap.is_connected()

    def test_latent_validation(self, trained_small):
        model, _ = trained_small
        with pytest.raises(ValueError):
            decode(model, np.zeros(3))
        with pytest.raises(ValueError):
            decode(model, np.array([np.nan] * 5))


@pytest.fixture(scope="module")
def predictors(trained_small):
    model, bitmaps = trained_small
    rng = np.random.default_rng(5)
    areas = np.array([b.solid_count() / 4096 for b in bitmaps])
    enstrophy = 0.5 * areas + 0.1 * rng.random(len(bitmaps))
    u_max = 0.05 + 0.4 * areas + 0.3 * enstrophy
    metrics = np.column_stack([u_max, areas, enstrophy])
    return fit_latent_predictors(model, bitmaps, metrics), metrics


class TestLatentPredictors:
    def test_interpolates_training_samples(self, trained_small, predictors):
        model, bitmaps = trained_small
        pred_set, metrics = predictors
        z = encode_batch(model, bitmaps[:10])
        pred = pred_set.predict(z)
        scale = metrics[:, 0].max() - metrics[:, 0].min()
        err = np.abs(pred["u_max"] - metrics[:10, 0]).max()
        assert err < 0.25 * scale  # smooth fit, not exact (learned noise)

    def test_area_predictions_close_on_decodes(self, trained_small, predictors):
        model, bitmaps = trained_small
        pred_set, _ = predictors
        z = encode_batch(model, bitmaps[100:140])
        decoded_areas = np.array(
            [decode(model, zi).solid_count() / 4096 for zi in z]
        )
        pred = pred_set.predict(z)
        rmse = np.sqrt(np.mean((pred["area"] - decoded_areas) ** 2))
        assert rmse < 0.05

    def test_requires_enough_samples(self, trained_small):
        model, bitmaps = trained_small
        with pytest.raises(ValueError):
            fit_latent_predictors(model, bitmaps[:5], np.zeros((5, 3)))

    def test_predicted_enstrophy_umax_positively_related(self, predictors):
        # Flow physics couples the two; the latent models must carry it.
        pred_set, _ = predictors
        rng = np.random.default_rng(9)
        latents = rng.standard_normal((1000, 5))
        pred = pred_set.predict(latents)
        corr = np.corrcoef(pred["enstrophy"], pred["u_max"])[0, 1]
        assert corr > 0.0


class TestLatentWalk:
    def test_single_step_is_center(self, trained_small, predictors):
        model, _ = trained_small
        pred_set, _ = predictors
        center = np.zeros(5)
        rows = latent_walk(model, pred_set, center, dim=0, steps=1)
        assert len(rows) == 1
        assert np.array_equal(rows[0].latent, center)

    def test_middle_column_equals_center_decode(self, trained_small, predictors):
        model, _ = trained_small
        pred_set, _ = predictors
        center = np.array([0.2, -0.1, 0.4, 0.0, -0.3])
        rows = latent_walk(model, pred_set, center, dim=2, steps=11)
        assert len(rows) == 11
        middle = rows[5]
        assert np.allclose(middle.latent, center)
        assert np.array_equal(middle.bitmap.cells, decode(model, center).cells)

    def test_area_changes_smoothly(self, trained_small, predictors):
        model, _ = trained_small
        pred_set, _ = predictors
        rows = latent_walk(model, pred_set, np.zeros(5), dim=1, steps=11, span=2.0)
        areas = [r.predicted["area"] for r in rows]
        deltas = np.abs(np.diff(areas))
        assert deltas.max() < 0.2

    def test_parameter_validation(self, trained_small, predictors):
        model, _ = trained_small
        pred_set, _ = predictors
        with pytest.raises(ValueError):
            latent_walk(model, pred_set, np.zeros(5), dim=7)
        with pytest.raises(ValueError):
            latent_walk(model, pred_set, np.zeros(5), dim=0, steps=4)


class TestGenerateSet:
    def test_empty_request(self, trained_small, predictors):
        model, _ = trained_small
        pred_set, _ = predictors
        out = generate_set(model, pred_set, 0, archive_capacity=20)
        assert out.latents.shape[0] == 0
        assert out.archive.occupancy() == 0

    def test_ordering_and_population(self, trained_small, predictors):
        model, _ = trained_small
        pred_set, _ = predictors
        out = generate_set(model, pred_set, 600, archive_capacity=50, seed=4)
        assert out.latents.shape[0] + out.degenerate_count == 600
        assert out.archive.occupancy() > 0
        populated = out.isolines.count > 0
        assert populated.any()
        assert np.all(
            out.isolines.min[populated] <= out.isolines.mean[populated] + 1e-12
        )
        assert np.all(
            out.isolines.mean[populated] <= out.isolines.max[populated] + 1e-12
        )

    def test_determinism(self, trained_small, predictors):
        model, _ = trained_small
        pred_set, _ = predictors
        a = generate_set(model, pred_set, 200, archive_capacity=20, seed=8)
        b = generate_set(model, pred_set, 200, archive_capacity=20, seed=8)
        assert np.array_equal(a.latents, b.latents)
        assert np.array_equal(a.fitness, b.fitness)


class TestPersistence:
    def test_weights_roundtrip(self, trained_small, tmp_path):
        model, bitmaps = trained_small
        wpath = tmp_path / "weights.fdav"
        cpath = tmp_path / "config.json"
        save_model(model, wpath, cpath)
        assert wpath.read_bytes()[:4] == b"FDAV"
        again = load_model(wpath, cpath)
        z = np.array([0.1, 0.2, -0.4, 0.8, 0.0])
        assert np.allclose(
            decode_probabilities(model, z[None, :]),
            decode_probabilities(again, z[None, :]),
            atol=1e-6,
        )
        assert again.config == model.config
        assert again.loss_history == model.loss_history
