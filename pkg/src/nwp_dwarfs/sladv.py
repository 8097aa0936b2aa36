"""Semi-Lagrangian advection of passive tracers on the sphere.

Units are nondimensional: unit sphere radius, winds in radians per time unit,
the vertical coordinate eta in [0, 1]. Departure points come from the
mid-point or SETTLS fixed-point iteration; on the sphere the displacement is
taken either in plain (lon, lat) arithmetic or with the rotation-matrix
method (wind transported to the arrival point, then a great-circle move).
Winds are interpolated tri-linearly as local (u, v) components.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import math
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from nwp_dwarfs import interp
from nwp_dwarfs.grids import HILL_RADIUS, ContractError, Field3d, GaussianGrid, field_norms, hill_profile, make_gaussian_grid, write_field_dump

TWO_PI = 2.0 * math.pi


class DpMeth(enum.IntEnum):
    RITCHIE_RECT = 1
    ROTATION = 2


class DpExtrap(enum.IntEnum):
    SECOND_ORDER = 1
    SETTLS = 2


class Init(enum.IntEnum):
    SOLID_BODY = 1
    ROSSBY_HAURWITZ = 2


# wavenumber-4 Rossby-Haurwitz streamfunction coefficients (unit sphere)
RH_WAVENUMBER = 4
RH_OMEGA = 0.5
RH_K = 0.5


@dataclasses.dataclass(frozen=True)
class SlConfig:
    init: int = 1
    nlev: int = 4
    halo: int = 2  # accepted, no effect on a global single-process field
    iout: int = 0
    dp_meth: int = 2
    dp_extrap: int = 2
    interp_meth: int = 4
    lqm: bool = True
    ndp_iter: int = 3
    nsteps: int = 43
    ntrac: int = 1
    truncation: int = 63
    t_end: float = 1.0
    u0: float = TWO_PI  # one revolution per time unit
    alpha: float = math.pi / 4
    hill_lon: float = 1.5 * math.pi
    hill_lat: float = 0.0
    hill_radius: float = HILL_RADIUS
    hill_height: float = 1.0

    def __post_init__(self):
        try:
            Init(self.init), DpMeth(self.dp_meth), DpExtrap(self.dp_extrap)
        except ValueError as e:
            raise ContractError(str(e)) from None
        if self.interp_meth not in interp.SCHEMES:
            raise ContractError(f"interp_meth must be one of {sorted(interp.SCHEMES)}")
        if self.nlev < 4:
            raise ContractError("nlev must be >= 4")
        if self.ndp_iter < 1 or self.nsteps < 0 or self.ntrac < 1 or self.iout < 0:
            raise ContractError("ndp_iter >= 1, nsteps >= 0, ntrac >= 1 and iout >= 0 required")

    @property
    def dt(self) -> float:
        return self.t_end / self.nsteps if self.nsteps else 0.0

    @property
    def kqm(self) -> int:
        return int(interp.Kqm.QM) if self.lqm and self.interp_meth in (3, 4) else 0


def eta_levels(nlev: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, nlev)


# -- winds --------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True, eq=False)
class WindField:
    """Wind components at t (``now``) and t - dt (``prev``), each (u, v, w) Field3d."""

    now: tuple
    prev: tuple

    @classmethod
    def steady(cls, u: Field3d, v: Field3d, w: Field3d) -> "WindField":
        return cls((u, v, w), (u, v, w))

    def rotate(self, new: tuple) -> "WindField":
        return WindField(tuple(new), self.now)

    def reversed(self) -> "WindField":
        neg = lambda t: tuple(f.with_values(-f.values) for f in t)
        return WindField(neg(self.now), neg(self.prev))


def extrapolate_wind(wind: WindField, mode: int) -> tuple[np.ndarray, ...]:
    """1.5 V^t - 0.5 V^{t-dt} (second order) or 2 V^t - V^{t-dt} (SETTLS).

    Written as V^t plus a multiple of the tendency so steady winds come back
    bit-exactly.
    """
    mode = DpExtrap(mode)
    out = []
    for a, b in zip(wind.now, wind.prev):
        if mode is DpExtrap.SECOND_ORDER:
            out.append(a.values + 0.5 * (a.values - b.values))
        else:
            out.append(a.values + (a.values - b.values))
    return tuple(out)


def solid_body_wind(lon, lat, u0: float, alpha: float):
    u = u0 * (np.cos(lat) * math.cos(alpha) + np.sin(lat) * np.cos(lon) * math.sin(alpha))
    v = -u0 * np.sin(lon) * math.sin(alpha)
    return u, v


def rossby_haurwitz_wind(lon, lat, omega: float = RH_OMEGA, K: float = RH_K, R: int = RH_WAVENUMBER):
    """Winds of psi = -omega sin(lat) + K cos^R(lat) sin(lat) cos(R lon) on the unit sphere."""
    c, s = np.cos(lat), np.sin(lat)
    u = omega * c + K * c ** (R - 1) * (R * s * s - c * c) * np.cos(R * lon)
    v = -K * R * c ** (R - 1) * s * np.sin(R * lon)
    return u, v


def init_case(grid: GaussianGrid, nlev: int, which: int, cfg: SlConfig | None = None) -> tuple[WindField, Field3d]:
    cfg = cfg or SlConfig(init=which, nlev=nlev)
    try:
        which = Init(which)
    except ValueError:
        raise ContractError(f"unknown initial case {which}") from None
    lon, lat = grid.coordinates()
    if which is Init.SOLID_BODY:
        u, v = solid_body_wind(lon, lat, cfg.u0, cfg.alpha)
    else:
        u, v = rossby_haurwitz_wind(lon, lat)
    tile = lambda a, name: Field3d(grid, np.tile(a, (nlev, 1)), name)
    wind = WindField.steady(tile(u, "u"), tile(v, "v"), tile(np.zeros_like(u), "w"))
    hill = hill_profile(lon, lat, (cfg.hill_lon, cfg.hill_lat), cfg.hill_height, cfg.hill_radius)
    return wind, tile(hill, "tracer")


def rotation_axis(alpha: float) -> np.ndarray:
    """Unit axis of the solid-body flow: V = omega * axis x r."""
    return np.array([-math.sin(alpha), 0.0, math.cos(alpha)])


def _rodrigues(v: np.ndarray, k: np.ndarray, ang) -> np.ndarray:
    """Rotate rows of v about unit axes k (one shared or one per row) by ang."""
    k = np.broadcast_to(k, v.shape)
    c, s = np.cos(ang)[:, None], np.sin(ang)[:, None]
    kd = np.sum(k * v, axis=-1, keepdims=True)
    return v * c + np.cross(k, v) * s + k * kd * (1.0 - c)


def solid_body_exact(grid: GaussianGrid, cfg: SlConfig, t: float) -> np.ndarray:
    """Tracer at time t for solid-body flow: the initial hill carried round the axis."""
    lon, lat = grid.coordinates()
    if t == 0:
        return hill_profile(lon, lat, (cfg.hill_lon, cfg.hill_lat), cfg.hill_height, cfg.hill_radius)
    r = to_cartesian(lon, lat)
    back = _rodrigues(r, rotation_axis(cfg.alpha), np.full(len(lon), -cfg.u0 * t))
    blon, blat = to_spherical(back)
    return hill_profile(blon, blat, (cfg.hill_lon, cfg.hill_lat), cfg.hill_height, cfg.hill_radius)


# -- geometry -----------------------------------------------------------------------


def to_cartesian(lon, lat) -> np.ndarray:
    c = np.cos(lat)
    return np.stack([c * np.cos(lon), c * np.sin(lon), np.sin(lat)], axis=-1)


def to_spherical(r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lon = np.mod(np.arctan2(r[..., 1], r[..., 0]), TWO_PI)
    lat = np.arctan2(r[..., 2], np.hypot(r[..., 0], r[..., 1]))
    return lon, lat


def local_basis(lon, lat) -> tuple[np.ndarray, np.ndarray]:
    east = np.stack([-np.sin(lon), np.cos(lon), np.zeros_like(lon)], axis=-1)
    north = np.stack([-np.sin(lat) * np.cos(lon), -np.sin(lat) * np.sin(lon), np.cos(lat)], axis=-1)
    return east, north


def transport_to(p: np.ndarray, r: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Carry tangent vectors at p to r along the joining great circle."""
    axis = np.cross(p, r)
    sn = np.linalg.norm(axis, axis=-1)
    cs = np.sum(p * r, axis=-1)
    ang = np.arctan2(sn, cs)
    same = sn == 0
    k = np.where(same[:, None], 0.0, axis / np.where(same, 1.0, sn)[:, None])
    out = _rodrigues(vec, k, ang)
    return np.where(same[:, None], vec, out)


def great_circle_step(r: np.ndarray, vel: np.ndarray, dt: float) -> np.ndarray:
    """Point reached from r moving backwards along the tangent vel for time dt."""
    speed = np.linalg.norm(vel, axis=-1)
    s = dt * speed
    e = np.where(speed[:, None] > 0, vel / np.where(speed > 0, speed, 1.0)[:, None], 0.0)
    return np.cos(s)[:, None] * r - np.sin(s)[:, None] * e


# -- departure points ----------------------------------------------------------------


@dataclasses.dataclass(frozen=True, eq=False)
class DeparturePointSet:
    lon: np.ndarray
    lat: np.ndarray
    eta: np.ndarray
    iterations: int
    increments: list
    clamp_events: int
    stencil: interp.Stencil32 | None = None
    weights: interp.InterpWeights | None = None


def _arrival(grid: GaussianGrid, levels: np.ndarray):
    lon, lat = grid.coordinates()
    nl = levels.size
    return np.tile(lon, nl), np.tile(lat, nl), np.repeat(levels, grid.npoints)


def _interp_wind(fields, grid, levels, lon, lat, eta):
    st, w = interp.locate(grid, levels, lon, lat, eta)
    u = interp.trilinear(fields[0], st, w, vector=True)
    v = interp.trilinear(fields[1], st, w, vector=True)
    ww = interp.trilinear(fields[2], st, w)
    return u, v, ww


def _fold(lon, lat):
    """Bring (lon, lat) that wandered past a pole back onto the sphere."""
    over = lat > 0.5 * math.pi
    under = lat < -0.5 * math.pi
    lat = np.where(over, math.pi - lat, np.where(under, -math.pi - lat, lat))
    lon = np.where(over | under, lon + math.pi, lon)
    return np.mod(lon, TWO_PI), lat


def departure_points(wind: WindField, grid: GaussianGrid, cfg: SlConfig, dt: float | None = None, levels: np.ndarray | None = None) -> DeparturePointSet:
    dt = cfg.dt if dt is None else dt
    levels = eta_levels(cfg.nlev) if levels is None else levels
    lon, lat, eta = _arrival(grid, levels)
    flat = lambda f: f.values.ravel()
    u0, v0, w0 = (flat(f) for f in wind.now)
    ext = extrapolate_wind(wind, cfg.dp_extrap)
    extf = [Field3d(grid, e) for e in ext]
    settls = DpExtrap(cfg.dp_extrap) is DpExtrap.SETTLS
    rot = DpMeth(cfg.dp_meth) is DpMeth.ROTATION
    east, north = local_basis(lon, lat)
    r = to_cartesian(lon, lat)

    def cart(u, v, lo, la):
        e, n = local_basis(lo, la)
        return u[:, None] * e + v[:, None] * n

    def vertical(w):
        return eta - dt * w

    if rot:
        V0 = u0[:, None] * east + v0[:, None] * north
        rd = great_circle_step(r, V0, dt)
        dlon, dlat = to_spherical(rd)
    else:
        coslat = np.maximum(np.cos(lat), 1e-12)
        dlon_u = lon - dt * u0 / coslat  # unwrapped
        dlat = lat - dt * v0
        dlon = dlon_u
    deta = vertical(w0)
    increments = []
    for _ in range(2, cfg.ndp_iter + 1):
        if rot:
            if settls:
                qlon, qlat = dlon, dlat
                qeta = deta
            else:
                rm = r + to_cartesian(dlon, dlat)
                rm /= np.linalg.norm(rm, axis=-1, keepdims=True)
                qlon, qlat = to_spherical(rm)
                qeta = 0.5 * (eta + deta)
            qeta = np.clip(qeta, levels[0], levels[-1])
            uq, vq, wq = _interp_wind(extf, grid, levels, qlon, qlat, qeta)
            Vq = transport_to(to_cartesian(qlon, qlat), r, cart(uq, vq, qlon, qlat))
            if settls:
                V = 0.5 * (u0[:, None] * east + v0[:, None] * north + Vq)
                wbar = 0.5 * (w0 + wq)
            else:
                V, wbar = Vq, wq
            new = great_circle_step(r, V, dt)
            increments.append(float(np.max(np.linalg.norm(new - to_cartesian(dlon, dlat), axis=-1))))
            dlon, dlat = to_spherical(new)
        else:
            if settls:
                qlon, qlat = _fold(dlon, dlat)
                qeta = deta
            else:
                qlon, qlat = _fold(0.5 * (lon + dlon), 0.5 * (lat + dlat))
                qeta = 0.5 * (eta + deta)
            qeta = np.clip(qeta, levels[0], levels[-1])
            uq, vq, wq = _interp_wind(extf, grid, levels, qlon, qlat, qeta)
            cq = np.maximum(np.cos(qlat), 1e-12)
            if settls:
                nlon = lon - 0.5 * dt * (u0 / np.maximum(np.cos(lat), 1e-12) + uq / cq)
                nlat = lat - 0.5 * dt * (v0 + vq)
                wbar = 0.5 * (w0 + wq)
            else:
                nlon = lon - dt * uq / cq
                nlat = lat - dt * vq
                wbar = wq
            increments.append(float(np.max(np.hypot(nlon - dlon, nlat - dlat))))
            dlon, dlat = nlon, nlat
        deta = vertical(wbar)
    if not rot:
        dlon, dlat = _fold(dlon, dlat)
    # points that did not move keep their arrival coordinates exactly
    still = (u0 == 0) & (v0 == 0)
    for a in ext[:2]:
        still &= a.ravel() == 0
    dlon = np.where(still, lon, dlon)
    dlat = np.where(still, lat, dlat)
    clamp = int(np.count_nonzero((deta < levels[0]) | (deta > levels[-1])))
    deta = np.clip(deta, levels[0], levels[-1])
    return DeparturePointSet(np.mod(dlon, TWO_PI), np.clip(dlat, -0.5 * math.pi, 0.5 * math.pi), deta, cfg.ndp_iter, increments, clamp)


def advect_step(tracers: list[Field3d], wind: WindField, grid: GaussianGrid, cfg: SlConfig, dt: float | None = None, threads: int = 1) -> tuple[list[Field3d], DeparturePointSet]:
    """One step: departure points and weights once, then every tracer.

    With threads > 1 the weight build and interpolation run on contiguous
    chunks of points; results do not depend on the chunking.
    """
    levels = eta_levels(cfg.nlev)
    dp = departure_points(wind, grid, cfg, dt, levels)
    n = dp.lon.size
    bounds = np.linspace(0, n, max(1, threads) + 1).astype(int)

    def chunk(i):
        sl = slice(bounds[i], bounds[i + 1])
        st, w = interp.locate(grid, levels, dp.lon[sl], dp.lat[sl], dp.eta[sl], cfg.kqm)
        return [interp.interpolate(f, st, w, cfg.interp_meth) for f in tracers], st, w

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(chunk, range(threads)))
        vals = [np.concatenate([p[0][t] for p in parts]) for t in range(len(tracers))]
        dp = dataclasses.replace(dp, stencil=None, weights=None)
    else:
        vals, st, w = chunk(0)
        dp = dataclasses.replace(dp, stencil=st, weights=w)
    out = [f.with_values(v.reshape(f.values.shape)) for f, v in zip(tracers, vals)]
    return out, dp


# -- driver -------------------------------------------------------------------------


@dataclasses.dataclass
class StepRecord:
    step: int
    l2_err: float
    linf_err: float
    min: float
    max: float
    seconds: float


@dataclasses.dataclass
class AdvectionReport:
    records: list[StepRecord]
    tracers: list[Field3d]
    initial: Field3d
    extrema: np.ndarray  # (nsteps + 1, 2) global min and max of tracer 0 after each step
    clamp_events: int
    seconds: float

    @property
    def final(self) -> StepRecord:
        return self.records[-1]

    def max_overshoot(self) -> float:
        return max(0.0, float(self.extrema[:, 1].max() - self.initial.values.max()))

    def max_undershoot(self) -> float:
        return max(0.0, float(self.initial.values.min() - self.extrema[:, 0].min()))


def run_advection(cfg: SlConfig, grid: GaussianGrid | None = None, out_dir: str | Path | None = None, threads: int = 1) -> AdvectionReport:
    grid = grid or make_gaussian_grid(cfg.truncation)
    wind, tracer = init_case(grid, cfg.nlev, cfg.init, cfg)
    tracers = [tracer.with_values(tracer.values, f"tracer{i}") for i in range(cfg.ntrac)]
    exact = Init(cfg.init) is Init.SOLID_BODY

    def record(step, elapsed):
        f = tracers[0]
        if exact:
            ref = np.tile(solid_body_exact(grid, cfg, step * cfg.dt), (cfg.nlev, 1))
            n = field_norms(f.values, ref)
            l2, linf = n.l2, n.linf
        else:
            l2 = linf = float("nan")
        return StepRecord(step, l2, linf, float(f.values.min()), float(f.values.max()), elapsed)

    records = [record(0, 0.0)]
    extrema = [(tracer.values.min(), tracer.values.max())]
    clamps = 0
    total = 0.0
    for step in range(1, cfg.nsteps + 1):
        t0 = time.perf_counter()
        tracers, dp = advect_step(tracers, wind, grid, cfg, threads=threads)
        elapsed = time.perf_counter() - t0
        total += elapsed
        clamps += dp.clamp_events
        wind = wind.rotate(wind.now)  # prescribed steady winds
        extrema.append((tracers[0].values.min(), tracers[0].values.max()))
        due = bool(cfg.iout) and step % cfg.iout == 0
        if due or step == cfg.nsteps:
            records.append(record(step, elapsed))
        if due and out_dir is not None:
            write_field_dump(Path(out_dir) / f"tracer_{step:05d}.nwpf", tracers[0])
    return AdvectionReport(records, tracers, tracer, np.array(extrema), clamps, total)


def write_report_csv(path: str | Path, report: AdvectionReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f.name for f in dataclasses.fields(StepRecord)])
        for r in report.records:
            w.writerow([r.step, repr(r.l2_err), repr(r.linf_err), repr(r.min), repr(r.max), f"{r.seconds:.6f}"])
