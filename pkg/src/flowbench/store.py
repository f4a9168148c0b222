"""Run persistence: directory-per-run layout with checksummed artifacts.

Layout: runs/<run_id>/{run.json, config.json, samples.csv, archive.csv,
stats.csv, models/, vae/, flow/} plus manifest.json holding sha256 of
every artifact. Writes are atomic (write-temp-then-rename); one writer
per run, any number of readers.
"""

from __future__ import annotations

import csv
import errno
import hashlib
import io
import json
import os
import time
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConflictingRunId,
    CorruptArtifact,
    NotFound,
    StorageFull,
    ValidationError,
)
from .lbm import LbmConfig
from .qd import (
    FeatureDescriptor,
    RoundStats,
    RunResult,
    Sample,
    SphenConfig,
    VoronoiArchive,
)
from .surrogate import GPModel

STATUS_ORDER = ("created", "running", "finished", "failed")

SAMPLE_COLUMNS = ["index", "round", "ok", "u_max", "enstrophy", "area"] + [
    f"g{i}" for i in range(16)
]
ARCHIVE_BASE_COLUMNS = [
    "niche_id",
    "centroid_a",
    "centroid_e",
    "area",
    "enstrophy",
    "fitness",
    "provenance",
]
ARCHIVE_COLUMNS = ARCHIVE_BASE_COLUMNS + [f"g{i}" for i in range(16)]
STATS_COLUMNS = [
    "round",
    "evaluations",
    "failures",
    "occupancy",
    "best_fitness",
    "umax_length_scale",
    "umax_signal_variance",
    "umax_noise_variance",
    "enstrophy_length_scale",
    "enstrophy_signal_variance",
    "enstrophy_noise_variance",
]


@dataclass
class RunRecord:
    run_id: str
    status: str = "created"
    config: dict = field(default_factory=dict)
    created_at: str = ""
    updated_at: str = ""
    artifacts: dict = field(default_factory=dict)
    lineage: dict | None = None
    error: str | None = None

    def advance(self, status: str) -> None:
        if STATUS_ORDER.index(status) < STATUS_ORDER.index(self.status):
            raise ValueError(f"status cannot move backward: {self.status} -> {status}")
        self.status = status
        self.updated_at = _now()


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def new_run_id() -> str:
    return uuid.uuid4().hex[:12]


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        if exc.errno == errno.ENOSPC:
            raise StorageFull(str(path)) from exc
        raise


def parse_config(text: str):
    """JSON config -> (SphenConfig, LbmConfig, VaeConfig) with defaults
    applied for absent fields; every violated invariant is reported."""
    from .genmodel import VaeConfig

    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ValidationError({"json": str(exc)}) from exc
    if not isinstance(data, dict):
        raise ValidationError({"json": "top level must be an object"})

    problems: dict[str, str] = {}

    def build(cls, section: str):
        known = {f for f in cls.__dataclass_fields__}
        payload = data.get(section, {})
        if not isinstance(payload, dict):
            problems[section] = "must be an object"
            return cls()
        unknown = set(payload) - known
        for k in unknown:
            problems[f"{section}.{k}"] = "unknown field"
        kwargs = {k: v for k, v in payload.items() if k in known}
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            problems[section] = str(exc)
            return cls()

    sphen = build(SphenConfig, "sphen")
    lbm = build(LbmConfig, "lbm")
    vae = build(VaeConfig, "vae")
    for section, config in (("sphen", sphen), ("lbm", lbm), ("vae", vae)):
        for fieldname, message in config.violations().items():
            problems[f"{section}.{fieldname}"] = message
    if problems:
        raise ValidationError(problems)
    return sphen, lbm, vae


def config_to_dict(sphen: SphenConfig, lbm: LbmConfig, vae) -> dict:
    return {"sphen": asdict(sphen), "lbm": asdict(lbm), "vae": asdict(vae)}


def _csv_bytes(columns: list[str], rows: list[list]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return buf.getvalue().encode()


def _format(value) -> str:
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


class RunStore:
    """Directory-backed store rooted at <root>/runs."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.runs_dir = self.root / "runs"
        self.runs_dir.mkdir(parents=True, exist_ok=True)

    def run_dir(self, run_id: str) -> Path:
        return self.runs_dir / run_id

    def list_runs(self) -> list[RunRecord]:
        records = []
        for entry in sorted(self.runs_dir.iterdir()):
            if (entry / "run.json").exists():
                records.append(self.load_record(entry.name))
        return records

    def create_run(self, config: dict, lineage: dict | None = None, run_id: str | None = None) -> RunRecord:
        run_id = run_id or new_run_id()
        path = self.run_dir(run_id)
        if path.exists():
            raise ConflictingRunId(run_id)
        if lineage is not None:
            self._check_lineage(lineage)
        record = RunRecord(
            run_id=run_id,
            status="created",
            config=config,
            created_at=_now(),
            updated_at=_now(),
            lineage=lineage,
        )
        path.mkdir(parents=True)
        for sub in ("models", "vae", "flow"):
            (path / sub).mkdir()
        self.save_record(record)
        return record

    def _check_lineage(self, lineage: dict) -> None:
        parent = lineage.get("parent_run_id")
        if not parent or not (self.run_dir(parent) / "run.json").exists():
            raise NotFound(f"parent run {parent!r} does not exist")
        region = lineage.get("region")
        if region is not None:
            a_lo, a_hi, e_lo, e_hi = (
                region["a_lo"],
                region["a_hi"],
                region["e_lo"],
                region["e_hi"],
            )
            problems = {}
            if not (0.0 <= a_lo < a_hi <= 1.0):
                problems["region.a"] = "must satisfy 0 <= a_lo < a_hi <= 1"
            if not (0.0 <= e_lo < e_hi <= 1.0):
                problems["region.e"] = "must satisfy 0 <= e_lo < e_hi <= 1"
            if problems:
                raise ValidationError(problems)

    def save_record(self, record: RunRecord) -> None:
        record.updated_at = _now()
        payload = json.dumps(asdict(record), indent=2).encode()
        _atomic_write(self.run_dir(record.run_id) / "run.json", payload)

    def load_record(self, run_id: str) -> RunRecord:
        path = self.run_dir(run_id) / "run.json"
        if not path.exists():
            raise NotFound(f"run {run_id!r} not found")
        data = json.loads(path.read_text())
        return RunRecord(**data)

    # -- artifact writing ------------------------------------------------

    def write_artifact(self, run_id: str, name: str, data: bytes) -> None:
        path = self.run_dir(run_id) / name
        path.parent.mkdir(parents=True, exist_ok=True)
        _atomic_write(path, data)

    def finalize(self, record: RunRecord, result: RunResult) -> None:
        """Write all result artifacts, the manifest, and mark finished."""
        run_id = record.run_id
        self.write_artifact(run_id, "config.json", json.dumps(record.config, indent=2).encode())
        self.write_artifact(run_id, "samples.csv", samples_csv(result.samples))
        self.write_artifact(run_id, "archive.csv", archive_csv(result.archive))
        self.write_artifact(run_id, "stats.csv", stats_csv(result.stats))
        self.write_artifact(run_id, "models/umax.json", result.model_umax.to_json().encode())
        self.write_artifact(
            run_id, "models/enstrophy.json", result.model_enstrophy.to_json().encode()
        )
        self.write_artifact(
            run_id,
            "descriptors.json",
            json.dumps(
                {
                    "area": {"lo": result.descriptors[0].lo, "hi": result.descriptors[0].hi},
                    "enstrophy": {
                        "lo": result.descriptors[1].lo,
                        "hi": result.descriptors[1].hi,
                    },
                    "centroids": result.archive.centroids.tolist(),
                    "counters": {
                        "evaluations": result.evaluation_count,
                        "proposals": result.proposal_count,
                        "rebuild_proposals": result.rebuild_proposals,
                    },
                },
                indent=2,
            ).encode(),
        )
        record.artifacts = {
            "config": "config.json",
            "samples": "samples.csv",
            "archive": "archive.csv",
            "stats": "stats.csv",
            "model_umax": "models/umax.json",
            "model_enstrophy": "models/enstrophy.json",
            "descriptors": "descriptors.json",
        }
        record.advance("finished")
        self.save_record(record)
        self.write_manifest(run_id)

    def write_manifest(self, run_id: str) -> None:
        root = self.run_dir(run_id)
        checksums = {}
        for path in sorted(root.rglob("*")):
            if path.is_file() and path.name != "manifest.json":
                checksums[str(path.relative_to(root))] = _sha256(path)
        _atomic_write(root / "manifest.json", json.dumps(checksums, indent=2).encode())

    def verify(self, run_id: str) -> None:
        root = self.run_dir(run_id)
        manifest_path = root / "manifest.json"
        if not manifest_path.exists():
            raise CorruptArtifact(f"run {run_id}: manifest.json missing")
        checksums = json.loads(manifest_path.read_text())
        for rel, expected in checksums.items():
            path = root / rel
            if not path.exists():
                raise CorruptArtifact(f"run {run_id}: {rel} missing")
            if _sha256(path) != expected:
                raise CorruptArtifact(f"run {run_id}: {rel} checksum mismatch")

    def load_result(self, run_id: str) -> RunResult:
        """Rebuild a RunResult from the stored artifacts (verified)."""
        record = self.load_record(run_id)
        if record.status != "finished":
            raise NotFound(f"run {run_id} has no finished result")
        self.verify(run_id)
        root = self.run_dir(run_id)

        meta = json.loads((root / "descriptors.json").read_text())
        descriptors = (
            FeatureDescriptor("area", meta["area"]["lo"], meta["area"]["hi"]),
            FeatureDescriptor("enstrophy", meta["enstrophy"]["lo"], meta["enstrophy"]["hi"]),
        )
        archive = VoronoiArchive(np.asarray(meta["centroids"]), descriptors)
        for row in _read_csv(root / "archive.csv"):
            genome = np.array([float(row[f"g{i}"]) for i in range(16)])
            archive.assign(
                genome,
                (float(row["area"]), float(row["enstrophy"])),
                float(row["fitness"]),
                provenance=row["provenance"],
                cell=int(row["niche_id"]),
            )

        samples = []
        for row in _read_csv(root / "samples.csv"):
            samples.append(
                Sample(
                    genome=np.array([float(row[f"g{i}"]) for i in range(16)]),
                    ok=row["ok"] == "True",
                    u_max=float(row["u_max"]),
                    enstrophy=float(row["enstrophy"]),
                    area=float(row["area"]),
                    round_index=int(row["round"]),
                )
            )

        stats = []
        for row in _read_csv(root / "stats.csv"):
            stats.append(
                RoundStats(
                    round_index=int(row["round"]),
                    evaluations=int(row["evaluations"]),
                    failures=int(row["failures"]),
                    occupancy=int(row["occupancy"]),
                    best_fitness=float(row["best_fitness"]),
                    umax_hyper={
                        "length_scale": float(row["umax_length_scale"]),
                        "signal_variance": float(row["umax_signal_variance"]),
                        "noise_variance": float(row["umax_noise_variance"]),
                    },
                    enstrophy_hyper={
                        "length_scale": float(row["enstrophy_length_scale"]),
                        "signal_variance": float(row["enstrophy_signal_variance"]),
                        "noise_variance": float(row["enstrophy_noise_variance"]),
                    },
                )
            )

        sphen, _, _ = parse_config(json.dumps(record.config))
        counters = meta.get("counters", {})
        return RunResult(
            config=sphen,
            archive=archive,
            samples=samples,
            descriptors=descriptors,
            model_umax=GPModel.from_json((root / "models/umax.json").read_text()),
            model_enstrophy=GPModel.from_json((root / "models/enstrophy.json").read_text()),
            stats=stats,
            evaluation_count=counters.get("evaluations", len(samples)),
            proposal_count=counters.get("proposals", 0),
            rebuild_proposals=counters.get("rebuild_proposals", 0),
        )


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def samples_csv(samples: list[Sample]) -> bytes:
    rows = []
    for i, s in enumerate(samples):
        rows.append(
            [i, s.round_index, s.ok, _format(s.u_max), _format(s.enstrophy), _format(s.area)]
            + [_format(float(v)) for v in s.genome]
        )
    return _csv_bytes(SAMPLE_COLUMNS, rows)


def archive_csv(archive: VoronoiArchive) -> bytes:
    columns = ARCHIVE_BASE_COLUMNS + [f"g{i}" for i in range(archive.genome_dim)]
    rows = []
    for r in archive.to_rows():
        rows.append([_format(r[c]) if isinstance(r[c], float) else r[c] for c in columns])
    return _csv_bytes(columns, rows)


def stats_csv(stats: list[RoundStats]) -> bytes:
    rows = []
    for s in stats:
        rows.append(
            [
                s.round_index,
                s.evaluations,
                s.failures,
                s.occupancy,
                _format(s.best_fitness),
                _format(s.umax_hyper["length_scale"]),
                _format(s.umax_hyper["signal_variance"]),
                _format(s.umax_hyper["noise_variance"]),
                _format(s.enstrophy_hyper["length_scale"]),
                _format(s.enstrophy_hyper["signal_variance"]),
                _format(s.enstrophy_hyper["noise_variance"]),
            ]
        )
    return _csv_bytes(STATS_COLUMNS, rows)
