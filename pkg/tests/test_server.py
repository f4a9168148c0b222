"""HTTP API tests against a live app with the synthetic evaluator."""

import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from flowbench.server import create_app, rle_encode
from flowbench.encoding import Bitmap

DESK_CONFIG = {
    "sphen": {
        "init_samples": 20,
        "batch_size": 5,
        "total_budget": 30,
        "archive_updates_per_round": 50,
        "children_per_update": 10,
        "archive_capacity": 30,
        "rng_seed": 11,
    },
    "lbm": {
        "reynolds": 300.0,
        "domain_nx": 96,
        "domain_ny": 64,
        "obstacle_x": 16,
        "warmup_steps": 60,
        "measure_steps": 120,
        "snapshot_interval": 30,
    },
    "evaluator": "synthetic",
}


def wait_finished(client, run_id, timeout=120.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        status = client.get(f"/api/v1/runs/{run_id}").json()
        if status["status"] in ("finished", "failed"):
            return status
        time.sleep(0.2)
    raise TimeoutError(f"run {run_id} did not finish")


@pytest.fixture(scope="module")
def client(tmp_path_factory):
    app = create_app(tmp_path_factory.mktemp("data"))
    with TestClient(app) as c:
        yield c


@pytest.fixture(scope="module")
def finished_run(client):
    resp = client.post("/api/v1/runs", json={"config": DESK_CONFIG})
    assert resp.status_code == 202
    run_id = resp.json()["run_id"]
    status = wait_finished(client, run_id)
    assert status["status"] == "finished"
    return run_id


class TestRleEncoding:
    def test_roundtrip_by_hand(self):
        cells = np.zeros((4, 4), dtype=bool)
        cells[1, 1:3] = True
        rle = rle_encode(Bitmap(cells, resolution=4))
        res, runs = rle.split("|")
        assert res == "4"
        lengths = [int(v) for v in runs.split(",")]
        assert sum(lengths) == 16
        # decode: alternate empty/solid starting with empty
        flat = []
        solid = False
        for n in lengths:
            flat.extend([solid] * n)
            solid = not solid
        assert np.array_equal(np.array(flat).reshape(4, 4), cells)

    def test_starts_with_solid(self):
        cells = np.ones((4, 4), dtype=bool)
        rle = rle_encode(Bitmap(cells, resolution=4))
        assert rle == "4|0,16"


class TestRunLifecycle:
    def test_create_and_finish(self, client, finished_run):
        status = client.get(f"/api/v1/runs/{finished_run}").json()
        assert status["evaluations"] == 30
        assert status["occupancy"] >= 1
        assert status["best_fitness"] is not None
        assert status["has_vae"] is False

    def test_invalid_config_rejected_with_fields(self, client):
        bad = {"config": {"sphen": {"mutation_sigma": -1}}}
        resp = client.post("/api/v1/runs", json=bad)
        assert resp.status_code == 400
        body = resp.json()
        assert body["code"] == "validation_error"
        assert any(f["field"] == "sphen.mutation_sigma" for f in body["fields"])

    def test_unknown_run_404(self, client):
        resp = client.get("/api/v1/runs/none")
        assert resp.status_code == 404
        assert resp.json()["code"] == "not_found"

    def test_repeat_create_gives_new_run(self, client):
        a = client.post("/api/v1/runs", json={"config": DESK_CONFIG}).json()["run_id"]
        b = client.post("/api/v1/runs", json={"config": DESK_CONFIG}).json()["run_id"]
        assert a != b
        wait_finished(client, a)
        wait_finished(client, b)

    def test_idempotency_key_returns_same_run(self, client):
        headers = {"Idempotency-Key": "same-run-please"}
        a = client.post("/api/v1/runs", json={"config": DESK_CONFIG}, headers=headers)
        b = client.post("/api/v1/runs", json={"config": DESK_CONFIG}, headers=headers)
        assert a.json()["run_id"] == b.json()["run_id"]
        wait_finished(client, a.json()["run_id"])

    def test_run_list(self, client, finished_run):
        runs = client.get("/api/v1/runs").json()["runs"]
        assert any(r["run_id"] == finished_run for r in runs)


class TestArchiveView:
    def test_full_view(self, client, finished_run):
        body = client.get(f"/api/v1/runs/{finished_run}/archive").json()
        assert body["occupancy"] == len(body["cells"])
        cell = body["cells"][0]
        assert len(cell["genome"]) == 16
        assert cell["thumbnail_rle"].startswith("64|")

    def test_reduced_view(self, client, finished_run):
        body = client.get(
            f"/api/v1/runs/{finished_run}/archive", params={"max_cells": 5}
        ).json()
        assert body["capacity"] == 5
        assert len(body["cells"]) <= 5

    def test_invalid_max_cells(self, client, finished_run):
        resp = client.get(
            f"/api/v1/runs/{finished_run}/archive", params={"max_cells": 0}
        )
        assert resp.status_code == 400


class TestZoom:
    def test_full_region_zoom_continues_parent(self, client, finished_run):
        resp = client.post(
            f"/api/v1/runs/{finished_run}/zoom",
            json={"a_lo": 0.0, "a_hi": 1.0, "e_lo": 0.0, "e_hi": 1.0},
        )
        assert resp.status_code == 202
        child = resp.json()["run_id"]
        status = wait_finished(client, child)
        assert status["status"] == "finished"
        assert status["lineage"]["parent_run_id"] == finished_run

        # The child's initial samples start with every parent elite.
        manager = client.app.state.manager
        parent = manager.store.load_result(finished_run)
        child_result = manager.store.load_result(child)
        elites = parent.archive.genomes[parent.archive.elite_indices()]
        child_init = np.array(
            [s.genome for s in child_result.samples if s.round_index == -1]
        )
        for genome in elites:
            assert np.any(np.all(np.isclose(child_init, genome, atol=1e-12), axis=1))

    def test_zero_width_region_rejected(self, client, finished_run):
        resp = client.post(
            f"/api/v1/runs/{finished_run}/zoom",
            json={"a_lo": 0.4, "a_hi": 0.4, "e_lo": 0.0, "e_hi": 1.0},
        )
        assert resp.status_code == 400

    def test_empty_region_without_fill(self, client, finished_run):
        resp = client.post(
            f"/api/v1/runs/{finished_run}/zoom",
            json={
                "a_lo": 0.0,
                "a_hi": 1e-6,
                "e_lo": 0.0,
                "e_hi": 1e-6,
                "fill": False,
            },
        )
        assert resp.status_code == 409
        assert resp.json()["code"] == "empty_region"

    def test_empty_region_with_fill_starts_from_sobol(self, client, finished_run):
        resp = client.post(
            f"/api/v1/runs/{finished_run}/zoom",
            json={
                "a_lo": 0.0,
                "a_hi": 1e-6,
                "e_lo": 0.0,
                "e_hi": 1e-6,
                "budget": 25,
            },
        )
        assert resp.status_code == 202
        wait_finished(client, resp.json()["run_id"])


class TestWalkRequiresVae:
    def test_walk_without_model_404(self, client, finished_run):
        resp = client.post(
            f"/api/v1/runs/{finished_run}/walk", json={"center": [0] * 5}
        )
        assert resp.status_code == 404


class TestWalkWithModel:
    @pytest.fixture(scope="class")
    def run_with_vae(self, client, finished_run):
        """Attach a small trained model to the finished run."""
        import json

        from flowbench.encoding import ShapeGenome, decode_and_rasterize
        from flowbench.genmodel import (
            VaeConfig,
            fit_latent_predictors,
            save_model,
            train_vae,
        )

        manager = client.app.state.manager
        result = manager.store.load_result(finished_run)
        rng = np.random.default_rng(0)
        bitmaps = [
            decode_and_rasterize(ShapeGenome(rng.random(16)), 32) for _ in range(110)
        ]
        config = VaeConfig(
            latent_dim=3,
            input_resolution=32,
            conv_channels=(4, 8, 16),
            epochs=8,
            rng_seed=0,
        )
        model = train_vae(bitmaps, config)
        metrics = np.array(
            [[0.1 + 0.3 * b.solid_count() / 1024, b.solid_count() / 1024, 0.2]
             for b in bitmaps[:30]]
        )
        predictors = fit_latent_predictors(model, bitmaps[:30], metrics)
        vae_dir = manager.store.run_dir(finished_run) / "vae"
        save_model(model, vae_dir / "weights.fdav", vae_dir / "config.json")
        (vae_dir / "predictors.json").write_text(
            json.dumps(
                {
                    "u_max": json.loads(predictors.u_max.to_json()),
                    "area": json.loads(predictors.area.to_json()),
                    "enstrophy": json.loads(predictors.enstrophy.to_json()),
                }
            )
        )
        assert result is not None
        return finished_run

    def test_default_walk_has_row_per_latent(self, client, run_with_vae):
        resp = client.post(f"/api/v1/runs/{run_with_vae}/walk", json={"steps": 3})
        assert resp.status_code == 200
        body = resp.json()
        assert len(body["rows"]) == 3  # one row per latent dimension
        for row in body["rows"]:
            assert len(row["steps"]) == 3
            step = row["steps"][1]
            assert "u_max" in step["predicted"]
            assert step["degenerate"] or step["thumbnail_rle"].startswith("32|")

    def test_status_reports_vae(self, client, run_with_vae):
        status = client.get(f"/api/v1/runs/{run_with_vae}").json()
        assert status["has_vae"] is True

    def test_single_step_returns_center_only(self, client, run_with_vae):
        resp = client.post(
            f"/api/v1/runs/{run_with_vae}/walk",
            json={"center": [0.1, 0.2, 0.3], "dim": 1, "steps": 1},
        )
        body = resp.json()
        assert len(body["rows"]) == 1
        assert len(body["rows"][0]["steps"]) == 1
        assert body["rows"][0]["steps"][0]["latent"] == [0.1, 0.2, 0.3]

    def test_bad_dim_rejected(self, client, run_with_vae):
        resp = client.post(
            f"/api/v1/runs/{run_with_vae}/walk", json={"dim": 7, "steps": 3}
        )
        assert resp.status_code == 400

    def test_validate_accepts_latent_input(self, client, run_with_vae):
        sub = client.post(
            f"/api/v1/runs/{run_with_vae}/validate", json={"latent": [0.0, 0.0, 0.0]}
        )
        assert sub.status_code == 202
        vid = sub.json()["validation_id"]
        deadline = time.time() + 300
        body = None
        while time.time() < deadline:
            body = client.get(f"/api/v1/runs/{run_with_vae}/validations/{vid}").json()
            if body["status"] in ("done", "failed"):
                break
            time.sleep(0.3)
        assert body is not None and body["status"] in ("done", "failed")
        if body["status"] == "done":
            assert body["measured"]["u_max"] > 0
            assert "u_max" in body["delta"]
        else:
            assert body["failure"]["reason"]


class TestRestartSafety:
    def test_finished_run_survives_new_manager(self, client, finished_run, tmp_path):
        from flowbench.server import RunManager

        old_manager = client.app.state.manager
        fresh = RunManager(old_manager.store.root)
        status = fresh.run_status(finished_run)
        assert status["status"] == "finished"
        assert status["occupancy"] >= 1
        view = fresh.archive_view(finished_run, None, thumbnails=False)
        assert view["occupancy"] == len(view["cells"])


class TestValidate:
    def test_genome_validation_matches_direct_simulation(self, client):
        config = dict(DESK_CONFIG)
        config["evaluator"] = "lbm"
        config["sphen"] = dict(DESK_CONFIG["sphen"], init_samples=4, total_budget=4,
                               batch_size=1, archive_updates_per_round=20)
        resp = client.post("/api/v1/runs", json={"config": config})
        run_id = resp.json()["run_id"]
        status = wait_finished(client, run_id, timeout=300)
        assert status["status"] == "finished"

        genome = [0.5] * 16
        sub = client.post(
            f"/api/v1/runs/{run_id}/validate", json={"genome": genome}
        )
        assert sub.status_code == 202
        vid = sub.json()["validation_id"]
        deadline = time.time() + 300
        while time.time() < deadline:
            body = client.get(f"/api/v1/runs/{run_id}/validations/{vid}").json()
            if body["status"] in ("done", "failed"):
                break
            time.sleep(0.3)
        assert body["status"] == "done"
        measured = body["measured"]

        from flowbench.encoding import ShapeGenome, decode_and_rasterize
        from flowbench.lbm import simulate
        from flowbench.store import parse_config
        import json as json_mod

        app_manager = client.app.state.manager
        record = app_manager.store.load_record(run_id)
        _, lbm_cfg, _ = parse_config(json_mod.dumps(record.config))
        direct = simulate(decode_and_rasterize(ShapeGenome(np.array(genome)), 64), lbm_cfg)
        assert measured["u_max"] == direct.u_max  # bit-identical
        assert measured["enstrophy"] == direct.enstrophy
        assert body["delta"]["u_max"] == pytest.approx(
            measured["u_max"] - body["predicted"]["u_max"]
        )

        # snapshot frames are retrievable
        assert body["snapshots"]
        frame = client.get(
            f"/api/v1/runs/{run_id}/flow/{vid}/0"
        ).json()
        assert frame["nx"] > 0 and len(frame["vorticity"]) == frame["nx"]

    def test_validate_requires_genome_or_latent(self, client, finished_run):
        resp = client.post(f"/api/v1/runs/{finished_run}/validate", json={})
        assert resp.status_code == 400
