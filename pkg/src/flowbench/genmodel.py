"""Convolutional VAE over archive bitmaps: latent walks, latent-space
flow predictors, and very large generated solution sets.

Torch is imported lazily so run management stays fast without it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .encoding import Bitmap
from .errors import DegenerateShape
from .qd import FeatureDescriptor, VoronoiArchive, init_archive
from .surrogate import GPModel, gp_fit

MIN_TRAINING_BITMAPS = 100
MIN_PREDICTOR_SAMPLES = 20
DECODE_THRESHOLD = 0.5


@dataclass
class VaeConfig:
    latent_dim: int = 5
    input_resolution: int = 64
    conv_channels: tuple[int, ...] = (8, 16, 32, 64)
    kl_weight: float = 1.0
    learning_rate: float = 1e-3
    epochs: int = 120
    batch_size: int = 32
    rng_seed: int = 0

    def __post_init__(self):
        self.conv_channels = tuple(self.conv_channels)

    @classmethod
    def desk(cls) -> "VaeConfig":
        return cls(epochs=80, learning_rate=2e-3)

    def violations(self) -> dict[str, str]:
        problems: dict[str, str] = {}
        if self.latent_dim < 1:
            problems["latent_dim"] = "must be >= 1"
        if not self.conv_channels:
            problems["conv_channels"] = "need at least one layer"
        shrink = 2 ** len(self.conv_channels)
        if self.input_resolution % shrink != 0 or self.input_resolution < shrink:
            problems["input_resolution"] = (
                f"must be a multiple of 2^{len(self.conv_channels)}"
            )
        if self.kl_weight < 0:
            problems["kl_weight"] = "must be >= 0"
        if self.learning_rate <= 0:
            problems["learning_rate"] = "must be positive"
        if self.epochs < 1:
            problems["epochs"] = "must be >= 1"
        if self.batch_size < 1:
            problems["batch_size"] = "must be >= 1"
        return problems


@dataclass
class VaeModel:
    config: VaeConfig
    net: object = field(repr=False)
    loss_history: list[float] = field(default_factory=list)


def _bitmap_stack(bitmaps, resolution: int) -> np.ndarray:
    grids = []
    for b in bitmaps:
        cells = b.cells if isinstance(b, Bitmap) else np.asarray(b, dtype=bool)
        if cells.shape != (resolution, resolution):
            raise ValueError(f"bitmap shape {cells.shape} != {(resolution, resolution)}")
        grids.append(cells.astype(float))
    return np.stack(grids)


def build_model(config: VaeConfig) -> VaeModel:
    """Untrained model with seeded initial weights."""
    from . import _vae_torch as vt
    import torch

    torch.manual_seed(config.rng_seed)
    net = vt.VaeNet(config.input_resolution, config.conv_channels, config.latent_dim)
    return VaeModel(config=config, net=net)


def train_vae(bitmaps, config: VaeConfig) -> VaeModel:
    """Train on a uniform-resolution bitmap set; records per-epoch loss."""
    problems = config.violations()
    if problems:
        from .errors import ValidationError

        raise ValidationError(problems)
    if len(bitmaps) < MIN_TRAINING_BITMAPS:
        raise ValueError(f"need >= {MIN_TRAINING_BITMAPS} bitmaps, got {len(bitmaps)}")
    data = _bitmap_stack(bitmaps, config.input_resolution)

    from . import _vae_torch as vt

    model = build_model(config)
    model.loss_history = vt.train(model.net, data, config)
    return model


def archive_training_bitmaps(
    result,
    count: int,
    area_fn,
    resolution: int = 64,
    seed: int = 0,
    updates: int = 1000,
) -> list[Bitmap]:
    """Build a VAE training set of exactly `count` bitmaps: decode the
    elites of an expanded archive and, when its occupancy falls short,
    top up with jittered copies of random elites."""
    from .encoding import ShapeGenome, decode_and_rasterize
    from .qd import build_expanded_archive

    big = build_expanded_archive(result, count, area_fn, seed=seed, updates=updates)
    genomes = list(big.genomes[big.elite_indices()])
    rng = np.random.default_rng(seed)
    while len(genomes) < count:
        base = genomes[int(rng.integers(len(genomes)))]
        genomes.append(np.clip(base + rng.normal(0.0, 0.05, base.shape), 0.0, 1.0))
    return [decode_and_rasterize(ShapeGenome(g), resolution) for g in genomes[:count]]


def encode(model: VaeModel, bitmap: Bitmap) -> np.ndarray:
    """Posterior mean for one bitmap; deterministic."""
    return encode_batch(model, [bitmap])[0]


def encode_batch(model: VaeModel, bitmaps) -> np.ndarray:
    from . import _vae_torch as vt

    data = _bitmap_stack(bitmaps, model.config.input_resolution)
    return vt.encode_means(model.net, data)


def decode_probabilities(model: VaeModel, latents: np.ndarray) -> np.ndarray:
    """Sigmoid decoder output, each pixel in [0, 1]."""
    from . import _vae_torch as vt

    return vt.decode_probabilities(model.net, latents)


def _threshold_to_bitmap(probs: np.ndarray, resolution: int) -> Bitmap:
    cells = probs >= DECODE_THRESHOLD
    if not cells.any():
        raise DegenerateShape("decoder output empty after thresholding")
    labels, count = ndimage.label(cells)
    if count > 1:
        sizes = np.bincount(labels.ravel())
        sizes[0] = 0
        cells = labels == sizes.argmax()
    return Bitmap(cells, resolution=resolution)


def decode(model: VaeModel, latent: np.ndarray) -> Bitmap:
    """Threshold at 0.5 (ties solid) and keep the largest 4-connected
    component; raises DegenerateShape when nothing survives."""
    latent = np.asarray(latent, dtype=float).reshape(-1)
    if latent.size != model.config.latent_dim:
        raise ValueError(
            f"latent must have {model.config.latent_dim} components, got {latent.size}"
        )
    if not np.isfinite(latent).all():
        raise ValueError("latent components must be finite")
    probs = decode_probabilities(model, latent[None, :])[0]
    return _threshold_to_bitmap(probs, model.config.input_resolution)


@dataclass(frozen=True)
class LatentPredictorSet:
    """GPs mapping latent coordinates to flow values."""

    u_max: GPModel
    area: GPModel
    enstrophy: GPModel

    def predict(self, latents: np.ndarray) -> dict[str, np.ndarray]:
        latents = np.atleast_2d(latents)
        return {
            "u_max": self.u_max.predict(latents)[0],
            "area": self.area.predict(latents)[0],
            "enstrophy": self.enstrophy.predict(latents)[0],
        }


def fit_latent_predictors(model: VaeModel, bitmaps, metrics) -> LatentPredictorSet:
    """Encode evaluated bitmaps and fit u_max/area/enstrophy GPs on the
    latent coordinates. metrics rows: (u_max, area, enstrophy)."""
    metrics = np.atleast_2d(np.asarray(metrics, dtype=float))
    if len(bitmaps) < MIN_PREDICTOR_SAMPLES:
        raise ValueError(f"need >= {MIN_PREDICTOR_SAMPLES} evaluated samples")
    if metrics.shape != (len(bitmaps), 3):
        raise ValueError("metrics must be (n, 3): u_max, area, enstrophy")
    latents = encode_batch(model, bitmaps)
    return LatentPredictorSet(
        u_max=gp_fit(latents, metrics[:, 0]),
        area=gp_fit(latents, metrics[:, 1]),
        enstrophy=gp_fit(latents, metrics[:, 2]),
    )


@dataclass(frozen=True)
class WalkStep:
    latent: np.ndarray
    bitmap: Bitmap | None
    degenerate: bool
    predicted: dict[str, float]


def latent_walk(
    model: VaeModel,
    predictors: LatentPredictorSet,
    center: np.ndarray,
    dim: int,
    steps: int = 11,
    span: float = 2.0,
) -> list[WalkStep]:
    """Vary one latent dimension over center +/- span; degenerate decodes
    are flagged in place, never dropped."""
    center = np.asarray(center, dtype=float).reshape(-1)
    if not 0 <= dim < model.config.latent_dim:
        raise ValueError(f"dim must be in [0, {model.config.latent_dim})")
    if steps < 1 or steps % 2 == 0:
        raise ValueError("steps must be a positive odd number")
    offsets = np.linspace(-span, span, steps) if steps > 1 else np.array([0.0])
    rows = []
    for off in offsets:
        z = center.copy()
        z[dim] += off
        pred = predictors.predict(z[None, :])
        predicted = {k: float(v[0]) for k, v in pred.items()}
        try:
            bitmap = decode(model, z)
            rows.append(WalkStep(z, bitmap, False, predicted))
        except DegenerateShape:
            rows.append(WalkStep(z, None, True, predicted))
    return rows


@dataclass(frozen=True)
class IsolineTable:
    """Per-feature-bin fitness order statistics (normalized bins)."""

    bins: int
    count: np.ndarray   # (bins, bins)
    min: np.ndarray
    mean: np.ndarray
    max: np.ndarray


@dataclass(frozen=True)
class GeneratedSet:
    archive: VoronoiArchive
    latents: np.ndarray
    features: np.ndarray       # raw (area, enstrophy) predictions
    fitness: np.ndarray
    degenerate_count: int
    isolines: IsolineTable


def generate_set(
    model: VaeModel,
    predictors: LatentPredictorSet,
    n: int,
    archive_capacity: int = 1000,
    seed: int = 0,
    descriptors: tuple[FeatureDescriptor, FeatureDescriptor] | None = None,
    isoline_bins: int = 24,
    batch_size: int = 512,
) -> GeneratedSet:
    """Sample latents from the standard-normal prior, decode, predict,
    and assemble an elite archive plus the raw table and isoline bins."""
    rng = np.random.default_rng(seed)
    kept_latents = []
    degenerate = 0
    for start in range(0, n, batch_size):
        lat = rng.standard_normal((min(batch_size, n - start), model.config.latent_dim))
        probs = decode_probabilities(model, lat)
        solid_any = (probs >= DECODE_THRESHOLD).any(axis=(1, 2))
        degenerate += int((~solid_any).sum())
        kept_latents.append(lat[solid_any])
    latents = (
        np.vstack(kept_latents) if kept_latents else np.empty((0, model.config.latent_dim))
    )

    if latents.shape[0] == 0:
        empty = IsolineTable(
            isoline_bins,
            np.zeros((isoline_bins, isoline_bins), dtype=int),
            np.full((isoline_bins, isoline_bins), np.nan),
            np.full((isoline_bins, isoline_bins), np.nan),
            np.full((isoline_bins, isoline_bins), np.nan),
        )
        archive = init_archive(archive_capacity, seed=seed)
        return GeneratedSet(archive, latents, np.empty((0, 2)), np.empty(0), degenerate, empty)

    pred = predictors.predict(latents)
    features = np.column_stack([pred["area"], pred["enstrophy"]])
    fitness = pred["u_max"]

    if descriptors is None:
        descriptors = (
            FeatureDescriptor.from_observed("area", features[:, 0]),
            FeatureDescriptor.from_observed("enstrophy", features[:, 1]),
        )
    archive = VoronoiArchive(
        init_archive(archive_capacity, seed=seed).centroids,
        descriptors,
        genome_dim=model.config.latent_dim,
    )
    norm = archive.normalize(features)
    cells = archive.nearest_cells(norm)
    for i in range(latents.shape[0]):
        archive.assign(
            latents[i], features[i], float(fitness[i]), "predicted", cell=int(cells[i])
        )

    isolines = _isoline_table(norm, fitness, isoline_bins)
    return GeneratedSet(archive, latents, features, fitness, degenerate, isolines)


def _isoline_table(norm_features: np.ndarray, fitness: np.ndarray, bins: int) -> IsolineTable:
    ia = np.minimum((norm_features[:, 0] * bins).astype(int), bins - 1)
    ie = np.minimum((norm_features[:, 1] * bins).astype(int), bins - 1)
    count = np.zeros((bins, bins), dtype=int)
    fmin = np.full((bins, bins), np.inf)
    fmax = np.full((bins, bins), -np.inf)
    fsum = np.zeros((bins, bins))
    for a, e, f in zip(ia, ie, fitness):
        count[a, e] += 1
        fsum[a, e] += f
        if f < fmin[a, e]:
            fmin[a, e] = f
        if f > fmax[a, e]:
            fmax[a, e] = f
    with np.errstate(invalid="ignore"):
        fmean = np.where(count > 0, fsum / np.maximum(count, 1), np.nan)
    fmin = np.where(count > 0, fmin, np.nan)
    fmax = np.where(count > 0, fmax, np.nan)
    return IsolineTable(bins, count, fmin, fmean, fmax)


def save_model(model: VaeModel, weights_path, config_path) -> None:
    """FDAV weights file plus JSON config sidecar."""
    from . import _vae_torch as vt

    vt.save_weights(weights_path, model.net)
    sidecar = {
        "latent_dim": model.config.latent_dim,
        "input_resolution": model.config.input_resolution,
        "conv_channels": list(model.config.conv_channels),
        "kl_weight": model.config.kl_weight,
        "learning_rate": model.config.learning_rate,
        "epochs": model.config.epochs,
        "batch_size": model.config.batch_size,
        "rng_seed": model.config.rng_seed,
        "loss_history": model.loss_history,
    }
    Path(config_path).write_text(json.dumps(sidecar, indent=2))


def load_model(weights_path, config_path) -> VaeModel:
    from . import _vae_torch as vt

    sidecar = json.loads(Path(config_path).read_text())
    loss_history = sidecar.pop("loss_history", [])
    config = VaeConfig(**sidecar)
    model = build_model(config)
    vt.load_weights(weights_path, model.net)
    model.loss_history = list(loss_history)
    return model
