"""Figure rendering for run exports: archive heatmaps, progress curves,
latent-walk grids, fitness isolines, and flow snapshot panels.

All figures are written to files (Agg backend); nothing opens a window.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt
from scipy.spatial import cKDTree

from .genmodel import IsolineTable, WalkStep
from .lbm import FlowSnapshot
from .qd import RoundStats, VoronoiArchive

HEATMAP_RASTER = 512
FIG_DPI = 140


def _feature_axes(ax, archive: VoronoiArchive) -> None:
    ax.set_xlabel(f"area (normalized, {archive.descriptors[0].lo:.3g}..{archive.descriptors[0].hi:.3g})")
    ax.set_ylabel(
        f"enstrophy (normalized, {archive.descriptors[1].lo:.3g}..{archive.descriptors[1].hi:.3g})"
    )


def archive_heatmap(
    archive: VoronoiArchive, path: str | Path, color_field: str = "fitness"
) -> None:
    """Nearest-centroid raster of the archive colored by the chosen field;
    unoccupied cells are blanked."""
    fields = {
        "fitness": archive.fitness,
        "area": archive.features_raw[:, 0],
        "enstrophy": archive.features_raw[:, 1],
    }
    if color_field not in fields:
        raise ValueError(f"color_field must be one of {sorted(fields)}")
    values = fields[color_field]

    grid = np.linspace(0.0, 1.0, HEATMAP_RASTER)
    gx, gy = np.meshgrid(grid, grid)
    tree = cKDTree(archive.centroids)
    _, cell = tree.query(np.column_stack([gx.ravel(), gy.ravel()]))
    raster = np.where(archive.occupied[cell], values[cell], np.nan).reshape(gx.shape)

    fig, ax = plt.subplots(figsize=(6.4, 5.2))
    im = ax.imshow(
        raster,
        origin="lower",
        extent=(0, 1, 0, 1),
        cmap="viridis",
        interpolation="nearest",
    )
    fig.colorbar(im, ax=ax, label=color_field)
    _feature_axes(ax, archive)
    ax.set_title(f"archive ({archive.occupancy()}/{archive.capacity} niches)")
    fig.savefig(path, dpi=FIG_DPI, bbox_inches="tight")
    plt.close(fig)


def stats_curves(stats: list[RoundStats], path: str | Path) -> None:
    """Occupancy and best fitness per acquisition round."""
    rounds = [s.round_index for s in stats]
    fig, ax1 = plt.subplots(figsize=(6.4, 4.0))
    ax1.plot(rounds, [s.occupancy for s in stats], "o-", color="tab:blue")
    ax1.set_xlabel("round")
    ax1.set_ylabel("occupancy", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(rounds, [s.best_fitness for s in stats], "s-", color="tab:red")
    ax2.set_ylabel("best fitness", color="tab:red")
    fig.savefig(path, dpi=FIG_DPI, bbox_inches="tight")
    plt.close(fig)


def walk_grid(walks: list[list[WalkStep]], path: str | Path) -> None:
    """One row per varied latent dimension, center column highlighted;
    each tile annotated with predicted peak speed."""
    n_rows = len(walks)
    n_cols = max(len(row) for row in walks)
    fig, axes = plt.subplots(
        n_rows, n_cols, figsize=(1.1 * n_cols, 1.2 * n_rows), squeeze=False
    )
    for r, row in enumerate(walks):
        for c in range(n_cols):
            ax = axes[r][c]
            ax.set_xticks([])
            ax.set_yticks([])
            if c >= len(row):
                ax.axis("off")
                continue
            stepr = row[c]
            if stepr.degenerate or stepr.bitmap is None:
                ax.text(0.5, 0.5, "–", ha="center", va="center", fontsize=14)
            else:
                ax.imshow(stepr.bitmap.cells, cmap="gray_r", origin="lower")
            ax.set_title(f"{stepr.predicted['u_max']:.3f}", fontsize=6, pad=2)
            if c == len(row) // 2:
                for spine in ax.spines.values():
                    spine.set_edgecolor("tab:red")
                    spine.set_linewidth(2)
        axes[r][0].set_ylabel(f"z{r}", fontsize=8)
    fig.suptitle("latent walks (tile label: predicted u_max)", fontsize=9)
    fig.savefig(path, dpi=FIG_DPI, bbox_inches="tight")
    plt.close(fig)


def isoline_figure(table: IsolineTable, path: str | Path) -> None:
    """Min / mean / max fitness contours over the feature grid."""
    centers = (np.arange(table.bins) + 0.5) / table.bins
    fig, axes = plt.subplots(1, 3, figsize=(12.0, 3.6), sharey=True)
    for ax, (name, grid) in zip(
        axes, (("min", table.min), ("mean", table.mean), ("max", table.max))
    ):
        masked = np.ma.masked_invalid(grid.T)
        im = ax.pcolormesh(centers, centers, masked, cmap="viridis", shading="nearest")
        if np.isfinite(grid).sum() >= 4:
            ax.contour(centers, centers, masked, 6, colors="white", linewidths=0.6)
        ax.set_title(f"{name} fitness")
        ax.set_xlabel("area (normalized)")
        fig.colorbar(im, ax=ax)
    axes[0].set_ylabel("enstrophy (normalized)")
    fig.savefig(path, dpi=FIG_DPI, bbox_inches="tight")
    plt.close(fig)


def flow_panel(snapshots: list[FlowSnapshot] | tuple, path: str | Path) -> None:
    """Vorticity time sequence around the obstacle."""
    n = len(snapshots)
    if n == 0:
        raise ValueError("no snapshots to draw")
    cols = min(n, 3)
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(4.2 * cols, 2.4 * rows), squeeze=False)
    vmax = max(np.abs(s.vorticity).max() for s in snapshots) or 1.0
    for i, snap in enumerate(snapshots):
        ax = axes[i // cols][i % cols]
        ax.imshow(
            snap.vorticity.T,
            origin="lower",
            cmap="RdBu_r",
            vmin=-vmax,
            vmax=vmax,
        )
        ax.set_title(f"step {snap.time_step}", fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
    for j in range(n, rows * cols):
        axes[j // cols][j % cols].axis("off")
    fig.savefig(path, dpi=FIG_DPI, bbox_inches="tight")
    plt.close(fig)


def samples_scatter(samples, path: str | Path) -> None:
    """Measured enstrophy vs peak speed for all simulated samples."""
    ok = [s for s in samples if s.ok]
    fig, ax = plt.subplots(figsize=(5.2, 4.2))
    if ok:
        e = [s.enstrophy for s in ok]
        u = [s.u_max for s in ok]
        a = [s.area for s in ok]
        sc = ax.scatter(e, u, c=a, cmap="viridis", s=18)
        fig.colorbar(sc, ax=ax, label="area")
        if len(ok) >= 3:
            r = np.corrcoef(e, u)[0, 1]
            ax.set_title(f"measured samples (Pearson r = {r:.2f})")
    ax.set_xlabel("enstrophy")
    ax.set_ylabel("u_max")
    fig.savefig(path, dpi=FIG_DPI, bbox_inches="tight")
    plt.close(fig)
