"""Command line interface: run the sampling loop, export archives with
figures, train and query the generative model, and host the HTTP API."""

from __future__ import annotations

import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np

DEFAULT_DATA_DIR = os.environ.get("FLOWBENCH_DATA_DIR", "./flowbench-data")


def _load_store(data_dir: str):
    from .store import RunStore

    return RunStore(data_dir)


@click.group()
def main():
    """Shape-in-flow design workbench."""


@main.command("init-config")
@click.option("--desk", is_flag=True, help="Small presets for desk-scale runs.")
@click.option("-o", "--output", type=click.Path(), default="config.json", show_default=True)
def init_config(desk, output):
    """Write a complete default configuration file."""
    from .genmodel import VaeConfig
    from .lbm import LbmConfig
    from .qd import SphenConfig
    from .store import config_to_dict

    if desk:
        config = config_to_dict(SphenConfig.desk(), LbmConfig.desk(), VaeConfig.desk())
    else:
        config = config_to_dict(SphenConfig(), LbmConfig(), VaeConfig())
    config["evaluator"] = "lbm"
    config["workers"] = 4 if desk else 8
    Path(output).write_text(json.dumps(config, indent=2) + "\n")
    click.echo(f"wrote {output}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--desk", is_flag=True, help="Use desk presets when no config is given.")
@click.option("--synthetic", is_flag=True, help="Analytic evaluator instead of the flow solver.")
@click.option("--data-dir", default=DEFAULT_DATA_DIR, show_default=True)
@click.option("--workers", type=int, default=None, help="Parallel simulation processes.")
@click.option("--seed", type=int, default=None, help="Override the run seed.")
def run(config_path, desk, synthetic, data_dir, workers, seed):
    """Run the full sampling loop and persist the result."""
    from .evaluators import LbmEvaluator, SyntheticEvaluator
    from .genmodel import VaeConfig
    from .lbm import LbmConfig
    from .qd import SphenConfig, sphen_run
    from .store import config_to_dict, parse_config

    if config_path:
        sphen, lbm_cfg, vae_cfg = parse_config(Path(config_path).read_text())
    elif desk:
        sphen, lbm_cfg, vae_cfg = SphenConfig.desk(), LbmConfig.desk(), VaeConfig.desk()
    else:
        sphen, lbm_cfg, vae_cfg = SphenConfig(), LbmConfig(), VaeConfig()
    if seed is not None:
        sphen.rng_seed = seed

    config_dict = config_to_dict(sphen, lbm_cfg, vae_cfg)
    config_dict["evaluator"] = "synthetic" if synthetic else "lbm"
    if workers is not None:
        config_dict["workers"] = workers

    store = _load_store(data_dir)
    record = store.create_run(config_dict)
    click.echo(f"run {record.run_id}: {sphen.total_budget} evaluations budgeted")
    record.advance("running")
    store.save_record(record)

    if synthetic:
        evaluator = SyntheticEvaluator()
    else:
        evaluator = LbmEvaluator(config=lbm_cfg, workers=workers or 1)

    t0 = time.time()

    def progress(round_done, rounds, evaluations):
        click.echo(
            f"  round {round_done}/{rounds}: {evaluations} evaluations"
            f" ({time.time() - t0:.0f}s)"
        )

    try:
        result = sphen_run(evaluator, sphen, progress=progress)
    except Exception as exc:
        record.error = str(exc)
        record.advance("failed")
        store.save_record(record)
        raise click.ClickException(f"run failed: {exc}")

    store.finalize(record, result)
    best = result.best_sample()
    click.echo(
        f"finished: {result.archive.occupancy()}/{result.archive.capacity} niches,"
        f" best measured u_max {best.u_max:.4f} ({time.time() - t0:.0f}s)"
    )
    click.echo(f"run id: {record.run_id}")


@main.command()
@click.argument("run_id")
@click.option("--data-dir", default=DEFAULT_DATA_DIR, show_default=True)
def status(run_id, data_dir):
    """Show progress and summary for a run."""
    store = _load_store(data_dir)
    record = store.load_record(run_id)
    click.echo(f"run {run_id}: {record.status}")
    if record.error:
        click.echo(f"error: {record.error}")
    if record.lineage:
        click.echo(f"lineage: {json.dumps(record.lineage)}")
    if record.status == "finished":
        result = store.load_result(run_id)
        click.echo(
            f"evaluations: {result.evaluation_count}"
            f" | occupancy: {result.archive.occupancy()}/{result.archive.capacity}"
            f" | proposals: {result.proposal_count}"
        )
        best = result.best_sample()
        click.echo(f"best measured u_max: {best.u_max:.5f} (area {best.area:.3f})")


@main.command()
@click.argument("run_id")
@click.option("--out", type=click.Path(), required=True)
@click.option("--data-dir", default=DEFAULT_DATA_DIR, show_default=True)
@click.option("--figures/--no-figures", default=True, show_default=True)
@click.option("--max-cells", type=int, default=None, help="Reduced archive view size.")
@click.option("--format", "formats", default="csv", show_default=True,
              help="Comma-separated delimited formats to copy (csv).")
def export(run_id, out, data_dir, figures, max_cells, formats):
    """Copy the run's delimited artifacts and render figures next to them."""
    from .store import archive_csv

    store = _load_store(data_dir)
    result = store.load_result(run_id)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)

    src = store.run_dir(run_id)
    for name in ("samples.csv", "archive.csv", "stats.csv", "config.json"):
        (out_dir / name).write_bytes((src / name).read_bytes())
    archive = result.archive
    if max_cells is not None:
        archive = archive.reduce(max_cells, seed=0)
        (out_dir / f"archive_top{max_cells}.csv").write_bytes(archive_csv(archive))

    if figures:
        from . import report

        report.archive_heatmap(archive, out_dir / "archive_fitness.png", "fitness")
        report.archive_heatmap(archive, out_dir / "archive_area.png", "area")
        report.archive_heatmap(archive, out_dir / "archive_enstrophy.png", "enstrophy")
        report.stats_curves(result.stats, out_dir / "progress.png")
        report.samples_scatter(result.samples, out_dir / "samples_scatter.png")
    click.echo(f"exported run {run_id} to {out_dir}")


@main.group()
def vae():
    """Generative-model commands."""


@vae.command("train")
@click.argument("run_id")
@click.option("--data-dir", default=DEFAULT_DATA_DIR, show_default=True)
@click.option("--archive-size", type=int, default=500, show_default=True,
              help="Expanded archive size used as the training set.")
@click.option("--epochs", type=int, default=None)
@click.option("--latent-dim", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
def vae_train(run_id, data_dir, archive_size, epochs, latent_dim, seed):
    """Train the shape model on an expanded archive from a finished run."""
    from . import genmodel
    from .encoding import ShapeGenome, decode_and_rasterize
    from .evaluators import LbmEvaluator
    from .store import parse_config

    store = _load_store(data_dir)
    record = store.load_record(run_id)
    result = store.load_result(run_id)
    _, _, vae_cfg = parse_config(json.dumps(record.config))
    if epochs is not None:
        vae_cfg.epochs = epochs
    if latent_dim is not None:
        vae_cfg.latent_dim = latent_dim
    vae_cfg.rng_seed = seed

    ok_count = sum(1 for s in result.samples if s.ok)
    if ok_count < 20:
        raise click.ClickException(
            f"run has {ok_count} successful evaluations; latent predictors"
            " need at least 20 - use a larger run"
        )

    click.echo(f"building a {archive_size}-shape training set ...")
    area_fn = LbmEvaluator().exact_area
    if record.config.get("evaluator") == "synthetic":
        from .evaluators import SyntheticEvaluator

        area_fn = SyntheticEvaluator().exact_area
    bitmaps = genmodel.archive_training_bitmaps(
        result, archive_size, area_fn, resolution=vae_cfg.input_resolution, seed=seed
    )

    click.echo(f"training: latent {vae_cfg.latent_dim}, {vae_cfg.epochs} epochs ...")
    t0 = time.time()
    model = genmodel.train_vae(bitmaps, vae_cfg)
    click.echo(
        f"trained in {time.time() - t0:.0f}s;"
        f" loss {model.loss_history[0]:.1f} -> {model.loss_history[-1]:.1f}"
    )

    ok = [s for s in result.samples if s.ok]
    sample_bitmaps = [
        decode_and_rasterize(ShapeGenome(s.genome), vae_cfg.input_resolution) for s in ok
    ]
    metrics = np.array([[s.u_max, s.area, s.enstrophy] for s in ok])
    predictors = genmodel.fit_latent_predictors(model, sample_bitmaps, metrics)

    vae_dir = store.run_dir(run_id) / "vae"
    vae_dir.mkdir(exist_ok=True)
    genmodel.save_model(model, vae_dir / "weights.fdav", vae_dir / "config.json")
    (vae_dir / "predictors.json").write_text(
        json.dumps(
            {
                "u_max": json.loads(predictors.u_max.to_json()),
                "area": json.loads(predictors.area.to_json()),
                "enstrophy": json.loads(predictors.enstrophy.to_json()),
            }
        )
    )
    (vae_dir / "train_meta.json").write_text(
        json.dumps({"archive_size": archive_size, "seed": seed, "config": asdict(vae_cfg)})
    )
    store.write_manifest(run_id)
    click.echo(f"model saved under {vae_dir}")


@main.command()
@click.argument("run_id")
@click.option("--data-dir", default=DEFAULT_DATA_DIR, show_default=True)
@click.option("--dim", type=int, default=None, help="Single latent dimension (default all).")
@click.option("--steps", type=int, default=11, show_default=True)
@click.option("--span", type=float, default=2.0, show_default=True)
@click.option("--center", default=None, help="Comma-separated latent center (default origin).")
@click.option("--out", type=click.Path(), default=None, help="Figure output path.")
@click.option("--csv", "csv_path", type=click.Path(), default=None, help="CSV output path.")
def walk(run_id, data_dir, dim, steps, span, center, out, csv_path):
    """Decode latent walks and print predicted flow values per step."""
    from . import genmodel, report
    from .server import RunManager

    manager = RunManager(data_dir)
    model, predictors = manager.load_vae(run_id)
    latent_dim = model.config.latent_dim
    c = (
        np.array([float(v) for v in center.split(",")])
        if center
        else np.zeros(latent_dim)
    )
    dims = [dim] if dim is not None else list(range(latent_dim))
    walks = []
    for d in dims:
        rows = genmodel.latent_walk(model, predictors, c, d, steps, span)
        walks.append(rows)
        for s in rows:
            flag = " (degenerate)" if s.degenerate else ""
            click.echo(
                f"z{d}={s.latent[d]:+.2f}: u_max {s.predicted['u_max']:.4f},"
                f" A {s.predicted['area']:.4f}, E {s.predicted['enstrophy']:.4f}{flag}"
            )
    if csv_path:
        import csv as csv_mod

        with open(csv_path, "w", newline="") as fh:
            writer = csv_mod.writer(fh, lineterminator="\n")
            writer.writerow(
                ["dim"]
                + [f"z{i}" for i in range(latent_dim)]
                + ["degenerate", "u_max", "area", "enstrophy"]
            )
            for d, rows in zip(dims, walks):
                for s in rows:
                    writer.writerow(
                        [d]
                        + [format(v, ".9g") for v in s.latent]
                        + [
                            s.degenerate,
                            format(s.predicted["u_max"], ".9g"),
                            format(s.predicted["area"], ".9g"),
                            format(s.predicted["enstrophy"], ".9g"),
                        ]
                    )
        click.echo(f"csv written to {csv_path}")
    if out:
        report.walk_grid(walks, out)
        click.echo(f"figure written to {out}")


@main.command()
@click.argument("run_id")
@click.option("--data-dir", default=DEFAULT_DATA_DIR, show_default=True)
@click.option("-n", "--count", type=int, default=10000, show_default=True)
@click.option("--capacity", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def generate(run_id, data_dir, count, capacity, seed, out):
    """Sample the latent prior at scale; write the table, the archive,
    and the fitness isoline figure."""
    import csv as csv_mod

    from . import genmodel, report
    from .server import RunManager
    from .store import archive_csv

    manager = RunManager(data_dir)
    model, predictors = manager.load_vae(run_id)
    t0 = time.time()
    generated = genmodel.generate_set(
        model, predictors, count, archive_capacity=capacity, seed=seed
    )
    click.echo(
        f"generated {generated.latents.shape[0]} shapes"
        f" ({generated.degenerate_count} degenerate skipped) in {time.time() - t0:.0f}s"
    )
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "generated.csv", "w", newline="") as fh:
        writer = csv_mod.writer(fh, lineterminator="\n")
        dim = model.config.latent_dim
        writer.writerow(
            [f"z{i}" for i in range(dim)] + ["area", "enstrophy", "u_max"]
        )
        for i in range(generated.latents.shape[0]):
            writer.writerow(
                [format(v, ".9g") for v in generated.latents[i]]
                + [
                    format(generated.features[i, 0], ".9g"),
                    format(generated.features[i, 1], ".9g"),
                    format(generated.fitness[i], ".9g"),
                ]
            )
    (out_dir / "generated_archive.csv").write_bytes(archive_csv(generated.archive))
    report.isoline_figure(generated.isolines, out_dir / "fitness_isolines.png")
    report.archive_heatmap(generated.archive, out_dir / "generated_archive.png")
    click.echo(f"wrote {out_dir}/generated.csv and figures")


@main.command()
@click.option("--data-dir", default=DEFAULT_DATA_DIR, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8008, show_default=True)
@click.option("--ui-dir", type=click.Path(), default=None,
              help="Static UI assets (default: bundled frontend build if present).")
def serve(data_dir, host, port, ui_dir):
    """Host the HTTP API and the browser UI."""
    import uvicorn

    from .server import create_app

    if ui_dir is None:
        bundled = Path(__file__).resolve().parent.parent.parent / "frontend" / "dist"
        ui_dir = str(bundled) if bundled.exists() else None
    app = create_app(data_dir, ui_dir=ui_dir)
    click.echo(f"serving on http://{host}:{port} (data: {data_dir}, ui: {ui_dir})")
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    sys.exit(main())
