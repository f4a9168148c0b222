"""D2Q9 BGK lattice-Boltzmann channel flow around bitmap obstacles.

Stability-first solver: equilibrium inflow, copy outflow, periodic
lateral walls, halfway bounce-back obstacles. Divergence is detected and
reported as a failed evaluation instead of crashing the caller.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .encoding import Bitmap
from .errors import DivergedSimulation, PlacementError, UnstableConfig

# Lattice velocities, weights, and opposite directions.
C = np.array(
    [[0, 0], [1, 0], [0, 1], [-1, 0], [0, -1], [1, 1], [-1, 1], [-1, -1], [1, -1]],
    dtype=int,
)
W = np.array([4 / 9, 1 / 9, 1 / 9, 1 / 9, 1 / 9, 1 / 36, 1 / 36, 1 / 36, 1 / 36])
OPP = np.array([0, 3, 4, 1, 2, 7, 8, 5, 6])

CS2 = 1.0 / 3.0                  # lattice speed of sound squared
CHARACTERISTIC_LENGTH = 64       # bitmap side, the only fixed geometric scale
SPEED_LIMIT = 0.57               # just above c_s; anything there is non-physical
NEGATIVE_POPULATION_TOL = -1e-9


@dataclass
class LbmConfig:
    mach: float = 0.075
    reynolds: float = 3900.0
    domain_nx: int = 256
    domain_ny: int = 128
    obstacle_x: int = 64
    obstacle_y: int | None = None    # None = centered in y
    warmup_steps: int = 4000
    measure_steps: int = 8000
    snapshot_interval: int = 200
    periodic: bool = False           # True = no inflow/outflow (test flows)

    @classmethod
    def desk(cls) -> "LbmConfig":
        """Small, fast preset; gentler Reynolds keeps plain BGK stable."""
        return cls(
            reynolds=300.0,
            domain_nx=128,
            domain_ny=64,
            obstacle_x=32,
            warmup_steps=500,
            measure_steps=1500,
            snapshot_interval=100,
        )

    def violations(self) -> dict[str, str]:
        problems: dict[str, str] = {}
        if not 0.0 < self.mach < 0.3:
            problems["mach"] = f"must be in (0, 0.3), got {self.mach}"
        if self.reynolds <= 0:
            problems["reynolds"] = "must be positive"
        if self.domain_nx < 3 or self.domain_ny < 3:
            problems["domain"] = "domain must be at least 3x3"
        if self.warmup_steps < 0 or self.measure_steps < 1:
            problems["steps"] = "warmup >= 0 and measure >= 1 required"
        if self.snapshot_interval < 1:
            problems["snapshot_interval"] = "must be >= 1"
        if "mach" not in problems and "reynolds" not in problems:
            u_in = self.mach / np.sqrt(3.0)
            nu = u_in * CHARACTERISTIC_LENGTH / self.reynolds
            tau = 3.0 * nu + 0.5
            if not 0.5 < tau <= 2.0:
                problems["tau"] = f"relaxation time {tau:.4f} outside (0.5, 2.0]"
        return problems


def derive_physics(config: LbmConfig) -> tuple[float, float, float]:
    """(inflow speed, kinematic viscosity, relaxation time) in lattice units."""
    u_in = config.mach / np.sqrt(3.0)
    nu = u_in * CHARACTERISTIC_LENGTH / config.reynolds
    tau = 3.0 * nu + 0.5
    if not 0.5 < tau <= 2.0:
        raise UnstableConfig(f"relaxation time {tau:.6f} outside (0.5, 2.0]")
    return u_in, nu, tau


def equilibrium(rho: np.ndarray, ux: np.ndarray, uy: np.ndarray) -> np.ndarray:
    """Second-order equilibrium populations, shape (9, nx, ny)."""
    cu = C[:, 0, None, None] * ux[None] + C[:, 1, None, None] * uy[None]
    usq = ux * ux + uy * uy
    return W[:, None, None] * rho[None] * (1.0 + 3.0 * cu + 4.5 * cu * cu - 1.5 * usq[None])


@dataclass
class LatticeState:
    f: np.ndarray                 # (9, nx, ny) populations
    solid: np.ndarray             # (nx, ny) bool
    time_step: int = 0
    tau: float = 0.6
    u_in: float = 0.0
    last_force: tuple[float, float] = (0.0, 0.0)
    # Per-direction fluid cells with a solid neighbor ahead (bounce links).
    _links: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list, repr=False)
    # True at cells whose upstream source in direction i is solid.
    _bounce_masks: list[np.ndarray] = field(default_factory=list, repr=False)
    _inflow_eq: np.ndarray | None = field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.f.shape[1], self.f.shape[2]

    def macroscopic(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        f = self.f
        rho = f.sum(axis=0)
        inv = 1.0 / rho
        ux = (f[1] + f[5] + f[8] - f[3] - f[6] - f[7]) * inv
        uy = (f[2] + f[5] + f[6] - f[4] - f[7] - f[8]) * inv
        ux[self.solid] = 0.0
        uy[self.solid] = 0.0
        return rho, ux, uy

    def total_mass(self) -> float:
        return float(self.f.sum())


def _build_links(solid: np.ndarray) -> tuple[list, list]:
    links, bounce_masks = [], []
    fluid = ~solid
    for i in range(1, 9):
        ahead_solid = np.roll(solid, shift=(-C[i, 0], -C[i, 1]), axis=(0, 1))
        links.append(np.nonzero(fluid & ahead_solid))
        bounce_masks.append(np.roll(solid, shift=(C[i, 0], C[i, 1]), axis=(0, 1)))
    return links, bounce_masks


def build_domain(bitmap: Bitmap, config: LbmConfig) -> LatticeState:
    """Place the bitmap obstacle and initialize populations at equilibrium
    with the inflow velocity everywhere in the fluid."""
    nx, ny = config.domain_nx, config.domain_ny
    res = bitmap.resolution
    x0 = config.obstacle_x
    y0 = config.obstacle_y if config.obstacle_y is not None else (ny - res) // 2

    cols = np.nonzero(bitmap.cells.any(axis=0))[0]
    rows = np.nonzero(bitmap.cells.any(axis=1))[0]
    if x0 + cols.min() < 1 or x0 + cols.max() > nx - 2:
        raise PlacementError("obstacle overlaps inflow/outflow columns")
    if y0 + rows.min() < 0 or y0 + rows.max() > ny - 1:
        raise PlacementError("obstacle exceeds lateral domain bounds")

    solid = np.zeros((nx, ny), dtype=bool)
    # Bitmap rows are y, columns are x. Solid cells are validated above;
    # empty bitmap margins may clip at the domain edge.
    bx_lo, bx_hi = max(0, -x0), min(res, nx - x0)
    by_lo, by_hi = max(0, -y0), min(res, ny - y0)
    solid[x0 + bx_lo : x0 + bx_hi, y0 + by_lo : y0 + by_hi] = bitmap.cells.T[
        bx_lo:bx_hi, by_lo:by_hi
    ]
    u_in, _, tau = derive_physics(config)

    rho = np.ones((nx, ny))
    ux = np.full((nx, ny), 0.0 if config.periodic else u_in)
    uy = np.zeros((nx, ny))
    ux[solid] = 0.0
    f = equilibrium(rho, ux, uy)
    links, bounce_masks = _build_links(solid)
    return LatticeState(
        f=f, solid=solid, tau=tau, u_in=u_in, _links=links, _bounce_masks=bounce_masks
    )


def empty_state(config: LbmConfig) -> LatticeState:
    """Obstacle-free domain at rest, for verification flows."""
    nx, ny = config.domain_nx, config.domain_ny
    solid = np.zeros((nx, ny), dtype=bool)
    u_in, _, tau = derive_physics(config)
    f = equilibrium(np.ones((nx, ny)), np.zeros((nx, ny)), np.zeros((nx, ny)))
    return LatticeState(f=f, solid=solid, tau=tau, u_in=0.0 if config.periodic else u_in)


def _check_stable(state: LatticeState, ux: np.ndarray, uy: np.ndarray) -> None:
    f = state.f
    if not np.isfinite(f).all():
        raise DivergedSimulation("non-finite population", state.time_step)
    if f.min() < NEGATIVE_POPULATION_TOL:
        raise DivergedSimulation("negative population", state.time_step)
    speed_sq = ux * ux + uy * uy
    if speed_sq.max() > SPEED_LIMIT * SPEED_LIMIT:
        raise DivergedSimulation("supersonic velocity", state.time_step)


def _collide(f: np.ndarray, rho, ux, uy, omega: float) -> np.ndarray:
    """BGK relaxation toward equilibrium, unrolled per direction."""
    keep = 1.0 - omega
    usq = 1.5 * (ux * ux + uy * uy)
    ux3 = 3.0 * ux
    uy3 = 3.0 * uy
    w0 = (4.0 / 9.0) * omega * rho
    ws = (1.0 / 9.0) * omega * rho
    wd = (1.0 / 36.0) * omega * rho
    uxx = 4.5 * ux * ux
    uyy = 4.5 * uy * uy
    upp = 4.5 * (ux + uy) ** 2
    upm = 4.5 * (ux - uy) ** 2

    fpost = np.empty_like(f)
    fpost[0] = keep * f[0] + w0 * (1.0 - usq)
    fpost[1] = keep * f[1] + ws * (1.0 + ux3 + uxx - usq)
    fpost[2] = keep * f[2] + ws * (1.0 + uy3 + uyy - usq)
    fpost[3] = keep * f[3] + ws * (1.0 - ux3 + uxx - usq)
    fpost[4] = keep * f[4] + ws * (1.0 - uy3 + uyy - usq)
    fpost[5] = keep * f[5] + wd * (1.0 + ux3 + uy3 + upp - usq)
    fpost[6] = keep * f[6] + wd * (1.0 - ux3 + uy3 + upm - usq)
    fpost[7] = keep * f[7] + wd * (1.0 - ux3 - uy3 + upp - usq)
    fpost[8] = keep * f[8] + wd * (1.0 + ux3 - uy3 + upm - usq)
    return fpost


def step(state: LatticeState, config: LbmConfig) -> LatticeState:
    """One collide-stream cycle with boundary handling; mutates state."""
    f = state.f
    rho, ux, uy = state.macroscopic()
    _check_stable(state, ux, uy)

    fpost = _collide(f, rho, ux, uy, 1.0 / state.tau)

    if state._links:
        fx = fy = 0.0
        for i in range(1, 9):
            transfer = 2.0 * fpost[i][state._links[i - 1]].sum()
            fx += transfer * C[i, 0]
            fy += transfer * C[i, 1]
        state.last_force = (fx, fy)

    fnew = np.empty_like(f)
    fnew[0] = fpost[0]
    for i in range(1, 9):
        fnew[i] = np.roll(fpost[i], shift=(C[i, 0], C[i, 1]), axis=(0, 1))
        if state._bounce_masks:
            mask = state._bounce_masks[i - 1]
            fnew[i][mask] = fpost[OPP[i]][mask]

    if not config.periodic:
        if state._inflow_eq is None:
            ones = np.ones((1, f.shape[2]))
            state._inflow_eq = equilibrium(
                ones, np.full_like(ones, state.u_in), np.zeros_like(ones)
            )
        fnew[:, 0:1, :] = state._inflow_eq
        fnew[:, -1, :] = fnew[:, -2, :]

    state.f = fnew
    state.time_step += 1
    return state


def vorticity(
    ux: np.ndarray,
    uy: np.ndarray,
    solid: np.ndarray | None = None,
    periodic_x: bool = False,
) -> np.ndarray:
    """omega = d(uy)/dx - d(ux)/dy, central differences, one-sided next to
    solid cells and at non-periodic domain edges; zero on solid cells."""
    dvdx = _derivative(uy, axis=0, solid=solid, periodic=periodic_x)
    dudy = _derivative(ux, axis=1, solid=solid, periodic=True)
    omega = dvdx - dudy
    if solid is not None:
        omega[solid] = 0.0
    return omega


def _derivative(
    field: np.ndarray, axis: int, solid: np.ndarray | None, periodic: bool
) -> np.ndarray:
    fp = np.roll(field, -1, axis=axis)
    fm = np.roll(field, 1, axis=axis)
    d = 0.5 * (fp - fm)
    if solid is not None:
        sp = np.roll(solid, -1, axis=axis)
        sm = np.roll(solid, 1, axis=axis)
        d = np.where(sp & ~sm, field - fm, d)    # solid ahead: backward
        d = np.where(sm & ~sp, fp - field, d)    # solid behind: forward
        d = np.where(sp & sm, 0.0, d)
    if not periodic:
        first = [slice(None)] * field.ndim
        last = [slice(None)] * field.ndim
        first[axis], last[axis] = 0, -1
        second = list(first)
        second[axis] = 1
        penult = list(last)
        penult[axis] = -2
        d[tuple(first)] = field[tuple(second)] - field[tuple(first)]
        d[tuple(last)] = field[tuple(last)] - field[tuple(penult)]
    return d


@dataclass(frozen=True)
class FlowSnapshot:
    time_step: int
    ux: np.ndarray
    uy: np.ndarray
    vorticity: np.ndarray


@dataclass(frozen=True)
class FlowMetrics:
    u_max: float
    enstrophy: float
    area: float
    snapshots: tuple[FlowSnapshot, ...] = ()
    warmup_force: tuple[float, float] = (0.0, 0.0)
    u_in: float = 0.0

    @property
    def ok(self) -> bool:
        return True


@dataclass(frozen=True)
class FlowFailure:
    """Marker returned when a simulation diverged; never fabricated metrics."""

    reason: str
    time_step: int
    area: float = float("nan")

    @property
    def ok(self) -> bool:
        return False


def simulate(
    bitmap: Bitmap, config: LbmConfig, record_snapshots: bool = False
) -> FlowMetrics | FlowFailure:
    """Run warmup + measurement and report flow metrics.

    u_max is the maximum fluid speed over every measured step; enstrophy
    is the time average over snapshot times of 0.5 * sum(omega^2) on
    fluid cells. Diverged runs yield a FlowFailure marker.
    """
    from .encoding import area as bitmap_area

    shape_area = bitmap_area(bitmap)
    try:
        state = build_domain(bitmap, config)
        force_x = force_y = 0.0
        for _ in range(config.warmup_steps):
            step(state, config)
            force_x += state.last_force[0]
            force_y += state.last_force[1]
        n_warm = max(config.warmup_steps, 1)
        warmup_force = (force_x / n_warm, force_y / n_warm)

        u_max = 0.0
        enstrophy_samples = []
        snapshots: list[FlowSnapshot] = []
        fluid = ~state.solid
        for k in range(config.measure_steps):
            step(state, config)
            _, ux, uy = state.macroscopic()
            u_max = max(u_max, float(np.sqrt((ux * ux + uy * uy)[fluid].max())))
            if (k + 1) % config.snapshot_interval == 0:
                omega = vorticity(ux, uy, state.solid, periodic_x=config.periodic)
                enstrophy_samples.append(0.5 * float((omega[fluid] ** 2).sum()))
                if record_snapshots:
                    snapshots.append(
                        FlowSnapshot(state.time_step, ux.copy(), uy.copy(), omega)
                    )
        enstrophy = float(np.mean(enstrophy_samples)) if enstrophy_samples else 0.0
        return FlowMetrics(
            u_max=u_max,
            enstrophy=enstrophy,
            area=shape_area,
            snapshots=tuple(snapshots),
            warmup_force=warmup_force,
            u_in=state.u_in,
        )
    except DivergedSimulation as exc:
        return FlowFailure(reason=exc.reason, time_step=exc.time_step, area=shape_area)


def taylor_green_fields(
    nx: int, ny: int, u0: float, nu: float, t: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Analytic Taylor-Green vortex (rho, ux, uy) at time t on an nx x ny
    periodic grid; velocity amplitude decays as exp(-2 nu k^2 t)."""
    kx = 2.0 * np.pi / nx
    ky = 2.0 * np.pi / ny
    x = (np.arange(nx) + 0.5)[:, None]
    y = (np.arange(ny) + 0.5)[None, :]
    decay = np.exp(-nu * (kx**2 + ky**2) * t)
    ux = u0 * np.cos(kx * x) * np.sin(ky * y) * decay
    uy = -u0 * (kx / ky) * np.sin(kx * x) * np.cos(ky * y) * decay
    rho = 1.0 - (3.0 * u0**2 / 4.0) * (
        np.cos(2.0 * kx * x) + (kx / ky) ** 2 * np.cos(2.0 * ky * y)
    ) * decay**2
    return rho, ux * np.ones_like(rho), uy * np.ones_like(rho)


def taylor_green_state(config: LbmConfig, u0: float) -> LatticeState:
    """Periodic lattice initialized at the analytic Taylor-Green field."""
    if not config.periodic:
        raise ValueError("Taylor-Green requires a fully periodic configuration")
    _, nu, tau = derive_physics(config)
    rho, ux, uy = taylor_green_fields(config.domain_nx, config.domain_ny, u0, nu, 0.0)
    state = empty_state(config)
    state.f = equilibrium(rho, ux, uy)
    state.tau = tau
    return state


def write_snapshots_binary(path, snapshots: tuple[FlowSnapshot, ...]) -> None:
    """Binary field dump: 16-byte header (magic 'FDAF', nx, ny, count as
    little-endian u32) followed per snapshot by ux, uy, vorticity grids
    as little-endian f32 in C order."""
    if not snapshots:
        nx = ny = 0
    else:
        nx, ny = snapshots[0].ux.shape
    with open(path, "wb") as fh:
        fh.write(b"FDAF")
        fh.write(struct.pack("<III", nx, ny, len(snapshots)))
        for snap in snapshots:
            for grid in (snap.ux, snap.uy, snap.vorticity):
                fh.write(grid.astype("<f4").tobytes(order="C"))


def read_snapshots_binary(path) -> list[dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != b"FDAF":
            raise ValueError(f"bad magic {magic!r}")
        nx, ny, count = struct.unpack("<III", fh.read(12))
        out = []
        for _ in range(count):
            fields = {}
            for name in ("ux", "uy", "vorticity"):
                raw = np.frombuffer(fh.read(4 * nx * ny), dtype="<f4")
                fields[name] = raw.reshape(nx, ny).astype(float)
            out.append(fields)
    return out


def write_snapshot_csv(path, snapshot: FlowSnapshot) -> None:
    """Per-snapshot CSV with columns x, y, ux, uy, vorticity."""
    nx, ny = snapshot.ux.shape
    xs, ys = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    table = np.column_stack(
        [
            xs.ravel(),
            ys.ravel(),
            snapshot.ux.ravel(),
            snapshot.uy.ravel(),
            snapshot.vorticity.ravel(),
        ]
    )
    header = "x,y,ux,uy,vorticity"
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt="%.9g")
