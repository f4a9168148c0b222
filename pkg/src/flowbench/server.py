"""HTTP JSON API for launching, inspecting, and steering runs.

All state lives in the run store; the app only caches loaded models and
tracks in-flight work, so a restart never corrupts a finished run.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from . import genmodel
from .encoding import Bitmap, ShapeGenome, decode_and_rasterize
from .errors import (
    EmptyRegion,
    FlowbenchError,
    NotFound,
    ValidationError,
)
from .evaluators import LbmEvaluator, SyntheticEvaluator
from .lbm import simulate, write_snapshots_binary, read_snapshots_binary
from .qd import FeatureDescriptor, sphen_run
from .store import RunStore, parse_config
from .surrogate import GPModel

API_PREFIX = "/api/v1"
VALIDATION_WORKERS = 2


def rle_encode(bitmap: Bitmap) -> str:
    """Row-major run lengths alternating empty/solid, starting empty."""
    flat = bitmap.cells.ravel()
    changes = np.nonzero(np.diff(flat))[0] + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return f"{bitmap.resolution}|" + ",".join(str(r) for r in runs)


def _error_response(code: str, message: str, fields=None, status=400) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"code": code, "message": message, "fields": fields or []},
    )


class RunManager:
    """Owns the store, background run threads, and model caches."""

    def __init__(self, data_dir: str | Path):
        self.store = RunStore(data_dir)
        self.progress: dict[str, dict] = {}
        self.threads: dict[str, threading.Thread] = {}
        self.vae_cache: dict[str, tuple] = {}
        self.validations: dict[str, dict] = {}
        self._validation_queue: list[str] = []
        self._validation_lock = threading.Lock()
        self._validation_slots = threading.Semaphore(VALIDATION_WORKERS)
        self._idempotency_path = Path(data_dir) / "idempotency.json"
        try:
            self.idempotency = json.loads(self._idempotency_path.read_text())
        except (OSError, json.JSONDecodeError):
            self.idempotency = {}

    # -- idempotency -----------------------------------------------------

    def idempotent(self, key: str | None) -> dict | None:
        if key is None:
            return None
        return self.idempotency.get(key)

    def remember(self, key: str | None, response: dict) -> None:
        if key is None:
            return
        self.idempotency[key] = response
        try:
            self._idempotency_path.write_text(json.dumps(self.idempotency))
        except OSError:
            pass

    # -- run lifecycle ---------------------------------------------------

    def start_run(
        self,
        config_dict: dict,
        lineage: dict | None = None,
        initial_genomes=None,
        fixed_descriptors=None,
    ) -> str:
        sphen, lbm_cfg, _ = parse_config(json.dumps(config_dict))
        record = self.store.create_run(config_dict, lineage=lineage)
        run_id = record.run_id
        self.progress[run_id] = {
            "evaluations": 0,
            "budget": sphen.total_budget,
            "occupancy": 0,
            "best_fitness": None,
        }

        evaluator_kind = config_dict.get("evaluator", "lbm")
        workers = int(config_dict.get("workers", 1))
        if evaluator_kind == "synthetic":
            evaluator = SyntheticEvaluator()
        else:
            evaluator = LbmEvaluator(config=lbm_cfg, workers=workers)

        def progress_cb(round_done, rounds, evaluations):
            self.progress[run_id]["evaluations"] = evaluations

        def work():
            record.advance("running")
            self.store.save_record(record)
            try:
                result = sphen_run(
                    evaluator,
                    sphen,
                    initial_genomes=initial_genomes,
                    fixed_descriptors=fixed_descriptors,
                    progress=progress_cb,
                )
                self.store.finalize(record, result)
                self.progress[run_id].update(
                    {
                        "evaluations": result.evaluation_count,
                        "occupancy": result.archive.occupancy(),
                        "best_fitness": float(
                            result.archive.fitness[result.archive.best_cell()]
                        ),
                    }
                )
            except FlowbenchError as exc:
                record.error = str(exc)
                record.advance("failed")
                self.store.save_record(record)

        thread = threading.Thread(target=work, name=f"run-{run_id}", daemon=True)
        self.threads[run_id] = thread
        thread.start()
        return run_id

    def run_status(self, run_id: str) -> dict:
        record = self.store.load_record(run_id)
        progress = dict(self.progress.get(run_id, {}))
        sphen, _, _ = parse_config(json.dumps(record.config))
        progress.setdefault("budget", sphen.total_budget)
        if record.status == "finished" and (
            progress.get("occupancy") in (None, 0) or progress.get("evaluations") == 0
        ):
            result = self.store.load_result(run_id)
            progress["evaluations"] = result.evaluation_count
            progress["occupancy"] = result.archive.occupancy()
            progress["best_fitness"] = float(
                result.archive.fitness[result.archive.best_cell()]
            )
        vae_dir = self.store.run_dir(run_id) / "vae"
        return {
            "run_id": run_id,
            "status": record.status,
            "error": record.error,
            "created_at": record.created_at,
            "updated_at": record.updated_at,
            "lineage": record.lineage,
            "has_vae": (vae_dir / "weights.fdav").exists(),
            **progress,
        }

    # -- artifacts -------------------------------------------------------

    def archive_view(self, run_id: str, max_cells: int | None, thumbnails: bool) -> dict:
        result = self.store.load_result(run_id)
        archive = result.archive
        if max_cells is not None:
            if max_cells < 1:
                raise ValidationError({"max_cells": "must be >= 1"})
            archive = archive.reduce(max_cells, seed=0)
        cells = []
        for idx in archive.elite_indices():
            entry = {
                "niche_id": int(idx),
                "centroid": archive.centroids[idx].tolist(),
                "features": {
                    "area": float(archive.features_raw[idx, 0]),
                    "enstrophy": float(archive.features_raw[idx, 1]),
                },
                "features_norm": archive.features_norm[idx].tolist(),
                "fitness": float(archive.fitness[idx]),
                "provenance": str(archive.provenance[idx]),
                "genome": archive.genomes[idx].tolist(),
            }
            if thumbnails and archive.genome_dim == 16:
                bitmap = decode_and_rasterize(ShapeGenome(archive.genomes[idx]), 64)
                entry["thumbnail_rle"] = rle_encode(bitmap)
            cells.append(entry)
        return {
            "run_id": run_id,
            "capacity": archive.capacity,
            "occupancy": archive.occupancy(),
            "descriptors": {
                "area": {"lo": archive.descriptors[0].lo, "hi": archive.descriptors[0].hi},
                "enstrophy": {
                    "lo": archive.descriptors[1].lo,
                    "hi": archive.descriptors[1].hi,
                },
            },
            "cells": cells,
        }

    def zoom(self, run_id: str, body: dict) -> str:
        record = self.store.load_record(run_id)
        if record.status != "finished":
            raise ValidationError({"run": "parent run is not finished"})
        fields = {}
        try:
            a_lo, a_hi = float(body["a_lo"]), float(body["a_hi"])
            e_lo, e_hi = float(body["e_lo"]), float(body["e_hi"])
        except (KeyError, TypeError, ValueError):
            raise ValidationError(
                {"region": "a_lo, a_hi, e_lo, e_hi are required numbers"}
            )
        if not 0.0 <= a_lo < a_hi <= 1.0:
            fields["a_lo"] = "need 0 <= a_lo < a_hi <= 1"
        if not 0.0 <= e_lo < e_hi <= 1.0:
            fields["e_lo"] = "need 0 <= e_lo < e_hi <= 1"
        if fields:
            raise ValidationError(fields)

        result = self.store.load_result(run_id)
        parent_desc = result.descriptors
        # Child normalization maps the selected region onto [0,1]^2.
        child_desc = (
            FeatureDescriptor(
                "area",
                float(parent_desc[0].denormalize(a_lo)),
                float(parent_desc[0].denormalize(a_hi)),
            ),
            FeatureDescriptor(
                "enstrophy",
                float(parent_desc[1].denormalize(e_lo)),
                float(parent_desc[1].denormalize(e_hi)),
            ),
        )
        archive = result.archive
        idx = archive.elite_indices()
        norm = archive.features_norm[idx]
        inside = (
            (norm[:, 0] >= a_lo)
            & (norm[:, 0] <= a_hi)
            & (norm[:, 1] >= e_lo)
            & (norm[:, 1] <= e_hi)
        )
        seeds = archive.genomes[idx[inside]]
        fill = bool(body.get("fill", True))
        if seeds.shape[0] == 0 and not fill:
            raise EmptyRegion("no parent elites inside the region and fill disabled")

        config_dict = json.loads(json.dumps(record.config))
        sphen_section = config_dict.setdefault("sphen", {})
        if body.get("budget") is not None:
            sphen_section["total_budget"] = int(body["budget"])
        if body.get("capacity") is not None:
            sphen_section["archive_capacity"] = int(body["capacity"])
        # The child evaluates every parent elite in the region: grow the
        # init set (and budget, keeping the round count) when needed.
        child_sphen, _, _ = parse_config(json.dumps(config_dict))
        if seeds.shape[0] > child_sphen.init_samples:
            extra = seeds.shape[0] - child_sphen.init_samples
            sphen_section["init_samples"] = child_sphen.init_samples + extra
            sphen_section["total_budget"] = child_sphen.total_budget + extra
        lineage = {
            "parent_run_id": run_id,
            "region": {"a_lo": a_lo, "a_hi": a_hi, "e_lo": e_lo, "e_hi": e_hi},
        }
        return self.start_run(
            config_dict,
            lineage=lineage,
            initial_genomes=seeds if seeds.shape[0] else None,
            fixed_descriptors=child_desc,
        )

    # -- generative model ------------------------------------------------

    def load_vae(self, run_id: str):
        if run_id in self.vae_cache:
            return self.vae_cache[run_id]
        vae_dir = self.store.run_dir(run_id) / "vae"
        weights = vae_dir / "weights.fdav"
        if not weights.exists():
            raise NotFound(f"run {run_id} has no trained generative model")
        model = genmodel.load_model(weights, vae_dir / "config.json")
        predictors_raw = json.loads((vae_dir / "predictors.json").read_text())
        predictors = genmodel.LatentPredictorSet(
            u_max=GPModel.from_json(json.dumps(predictors_raw["u_max"])),
            area=GPModel.from_json(json.dumps(predictors_raw["area"])),
            enstrophy=GPModel.from_json(json.dumps(predictors_raw["enstrophy"])),
        )
        self.vae_cache[run_id] = (model, predictors)
        return model, predictors

    def walk(self, run_id: str, body: dict) -> dict:
        model, predictors = self.load_vae(run_id)
        latent_dim = model.config.latent_dim
        center = np.asarray(body.get("center", np.zeros(latent_dim)), dtype=float)
        if center.size != latent_dim:
            raise ValidationError({"center": f"must have {latent_dim} components"})
        steps = int(body.get("steps", 11))
        span = float(body.get("span", 2.0))
        dim = body.get("dim")
        dims = range(latent_dim) if dim is None else [int(dim)]
        for d in dims:
            if not 0 <= d < latent_dim:
                raise ValidationError({"dim": f"must be in [0, {latent_dim})"})
        rows = []
        for d in dims:
            walk = genmodel.latent_walk(model, predictors, center, d, steps, span)
            rows.append(
                {
                    "dim": d,
                    "steps": [
                        {
                            "latent": step.latent.tolist(),
                            "degenerate": step.degenerate,
                            "predicted": step.predicted,
                            "thumbnail_rle": None
                            if step.bitmap is None
                            else rle_encode(step.bitmap),
                        }
                        for step in walk
                    ],
                }
            )
        return {"run_id": run_id, "center": center.tolist(), "span": span, "rows": rows}

    # -- validation ------------------------------------------------------

    def submit_validation(self, run_id: str, body: dict) -> dict:
        record = self.store.load_record(run_id)
        if record.status != "finished":
            raise ValidationError({"run": "run is not finished"})
        result = self.store.load_result(run_id)
        _, lbm_cfg, _ = parse_config(json.dumps(record.config))

        if body.get("genome") is not None:
            genome = np.asarray(body["genome"], dtype=float)
            if genome.size != 16:
                raise ValidationError({"genome": "must have 16 components"})
            bitmap = decode_and_rasterize(ShapeGenome(genome), 64)
            mean_u, _ = result.model_umax.predict(genome[None, :])
            mean_e, _ = result.model_enstrophy.predict(genome[None, :])
            from .encoding import area as bitmap_area

            predicted = {
                "u_max": float(mean_u[0]),
                "enstrophy": float(mean_e[0]),
                "area": bitmap_area(bitmap),
            }
        elif body.get("latent") is not None:
            model, predictors = self.load_vae(run_id)
            latent = np.asarray(body["latent"], dtype=float)
            bitmap = genmodel.decode(model, latent)
            pred = predictors.predict(latent[None, :])
            predicted = {k: float(v[0]) for k, v in pred.items()}
        else:
            raise ValidationError({"body": "either genome or latent is required"})

        vid = f"v{len(self.validations):04d}-{run_id[:4]}"
        entry = {
            "validation_id": vid,
            "run_id": run_id,
            "status": "queued",
            "predicted": predicted,
            "measured": None,
            "delta": None,
            "failure": None,
            "snapshots": [],
        }
        self.validations[vid] = entry
        with self._validation_lock:
            self._validation_queue.append(vid)

        def work():
            with self._validation_slots:
                entry["status"] = "running"
                metrics = simulate(bitmap, lbm_cfg, record_snapshots=True)
                with self._validation_lock:
                    self._validation_queue.remove(vid)
                if not metrics.ok:
                    entry["status"] = "failed"
                    entry["failure"] = {
                        "reason": metrics.reason,
                        "time_step": metrics.time_step,
                    }
                    return
                measured = {
                    "u_max": metrics.u_max,
                    "enstrophy": metrics.enstrophy,
                    "area": metrics.area,
                }
                entry["measured"] = measured
                entry["delta"] = {
                    k: measured[k] - predicted[k] for k in measured if k in predicted
                }
                flow_path = self.store.run_dir(run_id) / "flow" / f"{vid}.bin"
                write_snapshots_binary(flow_path, metrics.snapshots)
                entry["snapshots"] = [
                    {
                        "frame": i,
                        "time_step": snap.time_step,
                        "url": f"{API_PREFIX}/runs/{run_id}/flow/{vid}/{i}",
                    }
                    for i, snap in enumerate(metrics.snapshots)
                ]
                entry["status"] = "done"

        threading.Thread(target=work, daemon=True).start()
        return {
            "validation_id": vid,
            "status_url": f"{API_PREFIX}/runs/{run_id}/validations/{vid}",
        }

    def validation_status(self, run_id: str, vid: str) -> dict:
        entry = self.validations.get(vid)
        if entry is None or entry["run_id"] != run_id:
            raise NotFound(f"validation {vid} not found")
        with self._validation_lock:
            position = (
                self._validation_queue.index(vid) + 1
                if vid in self._validation_queue
                else 0
            )
        return {**entry, "queue_position": position}

    def flow_frame(self, run_id: str, vid: str, frame: int) -> dict:
        path = self.store.run_dir(run_id) / "flow" / f"{vid}.bin"
        if not path.exists():
            raise NotFound(f"no flow data for validation {vid}")
        frames = read_snapshots_binary(path)
        if not 0 <= frame < len(frames):
            raise NotFound(f"frame {frame} out of range (0..{len(frames) - 1})")
        data = frames[frame]
        return {
            "frame": frame,
            "nx": data["vorticity"].shape[0],
            "ny": data["vorticity"].shape[1],
            "vorticity": data["vorticity"].tolist(),
        }


def create_app(data_dir: str | Path, ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="flowbench", version="0.1.0")
    manager = RunManager(data_dir)
    app.state.manager = manager

    @app.exception_handler(ValidationError)
    async def _validation_handler(request: Request, exc: ValidationError):
        fields = [{"field": k, "message": v} for k, v in sorted(exc.fields.items())]
        return _error_response("validation_error", "invalid request", fields, status=400)

    @app.exception_handler(NotFound)
    async def _notfound_handler(request: Request, exc: NotFound):
        return _error_response("not_found", str(exc), status=404)

    @app.exception_handler(EmptyRegion)
    async def _empty_region_handler(request: Request, exc: EmptyRegion):
        return _error_response("empty_region", str(exc), status=409)

    @app.exception_handler(FlowbenchError)
    async def _generic_handler(request: Request, exc: FlowbenchError):
        return _error_response("error", str(exc), status=500)

    def idempotency_key(request: Request, body: dict) -> str | None:
        return request.headers.get("Idempotency-Key") or body.get("idempotency_key")

    @app.post(f"{API_PREFIX}/runs", status_code=202)
    async def create_run(request: Request):
        body = await request.json() if await request.body() else {}
        key = idempotency_key(request, body)
        cached = manager.idempotent(key)
        if cached is not None:
            return cached
        config = body.get("config", {})
        # Surface invalid configs before accepting the run.
        parse_config(json.dumps(config))
        run_id = manager.start_run(config)
        response = {"run_id": run_id}
        manager.remember(key, response)
        return response

    @app.get(f"{API_PREFIX}/runs")
    async def list_runs():
        return {
            "runs": [manager.run_status(record.run_id) for record in manager.store.list_runs()]
        }

    @app.get(f"{API_PREFIX}/runs/{{run_id}}")
    async def run_status(run_id: str):
        return manager.run_status(run_id)

    @app.get(f"{API_PREFIX}/runs/{{run_id}}/archive")
    async def get_archive(run_id: str, max_cells: int | None = None, thumbnails: bool = True):
        return manager.archive_view(run_id, max_cells, thumbnails)

    @app.post(f"{API_PREFIX}/runs/{{run_id}}/zoom", status_code=202)
    async def zoom(run_id: str, request: Request):
        body = await request.json()
        key = idempotency_key(request, body)
        cached = manager.idempotent(key)
        if cached is not None:
            return cached
        child = manager.zoom(run_id, body)
        response = {"run_id": child, "parent_run_id": run_id}
        manager.remember(key, response)
        return response

    @app.post(f"{API_PREFIX}/runs/{{run_id}}/walk")
    async def walk(run_id: str, request: Request):
        return manager.walk(run_id, await request.json())

    @app.post(f"{API_PREFIX}/runs/{{run_id}}/validate", status_code=202)
    async def validate(run_id: str, request: Request):
        body = await request.json()
        key = idempotency_key(request, body)
        cached = manager.idempotent(key)
        if cached is not None:
            return cached
        response = manager.submit_validation(run_id, body)
        manager.remember(key, response)
        return response

    @app.get(f"{API_PREFIX}/runs/{{run_id}}/validations/{{vid}}")
    async def validation_status(run_id: str, vid: str):
        return manager.validation_status(run_id, vid)

    @app.get(f"{API_PREFIX}/runs/{{run_id}}/flow/{{vid}}/{{frame}}")
    async def flow_frame(run_id: str, vid: str, frame: int):
        return manager.flow_frame(run_id, vid, frame)

    if ui_dir is not None and Path(ui_dir).exists():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
