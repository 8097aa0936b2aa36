"""Generalised Conjugate Residual solver and its elliptic test problems.

Two problems are provided: a Laplacian on a full Gaussian grid (the
null-space offset benchmark) and the potential flow over a hill in
terrain-following coordinates on a periodic box.
"""

from __future__ import annotations

import dataclasses
import math
import time
from typing import Callable

import numpy as np

from nwp_dwarfs.grids import ContractError, Field3d, GaussianGrid, gaussian_hill, pairwise_sum


@dataclasses.dataclass(frozen=True)
class LinearOperator:
    apply: Callable[[np.ndarray], np.ndarray]
    shape: tuple[int, ...]
    name: str = ""

    def __call__(self, x):
        if isinstance(x, Field3d):
            return x.with_values(self.apply(x.values.reshape(self.shape)).reshape(x.values.shape))
        return self.apply(x)


@dataclasses.dataclass(frozen=True)
class Preconditioner:
    apply_inverse: Callable[[np.ndarray], np.ndarray]
    name: str = "identity"


IDENTITY = Preconditioner(lambda r: r.copy(), "identity")


def matrix_operator(A: np.ndarray) -> LinearOperator:
    A = np.array(A, dtype=np.float64)
    return LinearOperator(lambda x: A @ x, (A.shape[1],), "matrix")


def jacobi_preconditioner(diag: np.ndarray) -> Preconditioner:
    if np.any(diag == 0):
        raise ContractError("Jacobi preconditioner needs a nonzero diagonal")
    inv = 1.0 / diag
    return Preconditioner(lambda r: inv * r, "jacobi")


def probe_diagonal(L: LinearOperator, periodic: tuple[bool, ...] | None = None, reach: int = 1) -> np.ndarray:
    """Exact diagonal of a stencil operator of the given reach by coloured probing."""
    shape = L.shape
    periodic = periodic or (False,) * len(shape)
    strides = []
    for n, per in zip(shape, periodic):
        s = 2 * reach + 1
        if per:
            while n % s and s < n:
                s += 1
        strides.append(min(s, n))
    idx = np.indices(shape)
    diag = np.zeros(shape)
    for offs in np.ndindex(*strides):
        mask = np.ones(shape, dtype=bool)
        for d, (o, s) in enumerate(zip(offs, strides)):
            mask &= idx[d] % s == o
        diag[mask] = L.apply(mask.astype(np.float64))[mask]
    return diag


def dot(a: np.ndarray, b: np.ndarray) -> float:
    """Unweighted inner product sum_i a_i b_i in a fixed reduction order."""
    return float(pairwise_sum((a * b).ravel()))


def norm(a: np.ndarray) -> float:
    return math.sqrt(dot(a, a))


@dataclasses.dataclass(frozen=True)
class GcrConfig:
    k: int = 3
    eps: float = 1e-8
    max_restarts: int = 1000

    def __post_init__(self):
        if self.k < 1:
            raise ContractError(f"restart depth k must be >= 1, got {self.k}")
        if not self.eps > 0:
            raise ContractError(f"eps must be > 0, got {self.eps}")
        if self.max_restarts < 1:
            raise ContractError("max_restarts must be >= 1")


@dataclasses.dataclass
class GcrReport:
    iterations: int = 0
    restarts: int = 0
    residual_history: list[float] = dataclasses.field(default_factory=list)
    converged: bool = False
    cycle_starts: list[int] = dataclasses.field(default_factory=list)
    seconds: float = 0.0


class GcrBreakdown(RuntimeError):
    def __init__(self, msg: str, report: GcrReport):
        super().__init__(msg)
        self.report = report


def gcr_solve(L: LinearOperator, P: Preconditioner, Q, psi0, cfg: GcrConfig = GcrConfig()):
    """Solve L(psi) = Q by restarted GCR(k) with left preconditioner P.

    Returns (psi, report); psi has the type of ``psi0`` (array or Field3d).
    """
    wrap = psi0 if isinstance(psi0, Field3d) else None
    q = (Q.values if isinstance(Q, Field3d) else np.asarray(Q, np.float64)).reshape(L.shape)
    psi = (psi0.values if wrap is not None else np.asarray(psi0, np.float64)).reshape(L.shape).copy()
    if isinstance(Q, Field3d) and wrap is not None and Q.grid is not wrap.grid:
        raise ContractError("Q and psi0 live on different grids")

    rep = GcrReport()
    t0 = time.perf_counter()
    r = L.apply(psi) - q
    rn = norm(r)
    rep.residual_history.append(rn)

    def done(psi):
        rep.seconds = time.perf_counter() - t0
        out = psi.reshape(wrap.values.shape) if wrap is not None else psi
        return (wrap.with_values(out) if wrap is not None else out), rep

    if rn <= cfg.eps:
        rep.converged = True
        return done(psi)
    p = P.apply_inverse(r)
    Lp = L.apply(p)
    for cycle in range(cfg.max_restarts):
        rep.cycle_starts.append(len(rep.residual_history) - 1)
        ps, Lps, LpLp = [], [], []
        for nu in range(cfg.k):
            ll = dot(Lp, Lp)
            if ll == 0.0:
                raise GcrBreakdown("GCR breakdown: <L(p), L(p)> = 0", rep)
            ps.append(p)
            Lps.append(Lp)
            LpLp.append(ll)
            beta = -dot(r, Lp) / ll
            psi = psi + beta * p
            r = r + beta * Lp
            rep.iterations += 1
            rn = norm(r)
            rep.residual_history.append(rn)
            if rn <= cfg.eps:
                rep.converged = True
                return done(psi)
            e = P.apply_inverse(r)
            Le = L.apply(e)
            alphas = [-dot(Le, Lps[l]) / LpLp[l] for l in range(nu + 1)]
            p = e
            Lp = Le
            for a, pl, Lpl in zip(alphas, ps, Lps):
                p = p + a * pl
                Lp = Lp + a * Lpl
        # restart: the k-th direction becomes direction 0 of the next cycle
        rep.restarts += 1
    return done(psi)


# ---------------------------------------------------------------------------
# Laplacian on the sphere


def laplacian_sphere(grid: GaussianGrid, radius: float = 1.0) -> LinearOperator:
    """Finite-volume Laplacian on a full Gaussian grid, shape (nlat, nlon).

    Meridional fluxes live on faces midway between latitude rows; the faces
    at the poles have zero length (cos = 0), so no flux crosses a pole.
    """
    if not grid.is_full:
        raise ContractError("laplacian_sphere needs a full Gaussian grid")
    if grid.nlat < 4:
        raise ContractError("grid too coarse for the Laplacian (need K >= 4)")
    lat = grid.lat
    nlon = grid.nlon
    face = np.concatenate([[0.5 * math.pi], 0.5 * (lat[:-1] + lat[1:]), [-0.5 * math.pi]])
    cos_face = np.cos(face)
    cos_face[[0, -1]] = 0.0
    area = np.sin(face[:-1]) - np.sin(face[1:])  # > 0, north to south
    dphi = lat[:-1] - lat[1:]
    coef_n = cos_face[1:-1] / dphi  # between row j and j+1
    dlam = 2.0 * math.pi / nlon
    zonal = 1.0 / (np.cos(lat) ** 2 * dlam * dlam)
    a2 = radius * radius

    def apply(f):
        f = np.asarray(f, dtype=np.float64).reshape(grid.nlat, nlon)
        flux = coef_n[:, None] * (f[:-1] - f[1:])  # northward difference across face
        div = np.zeros_like(f)
        div[:-1] -= flux
        div[1:] += flux
        out = div / area[:, None]
        out += zonal[:, None] * (np.roll(f, -1, axis=1) - 2.0 * f + np.roll(f, 1, axis=1))
        return out / a2

    return LinearOperator(apply, (grid.nlat, nlon), "laplacian_sphere")


@dataclasses.dataclass
class LaplacianReport:
    err_bar: float
    gcr: GcrReport
    psi: np.ndarray


def mean_offset_error(psi_ref: np.ndarray, psi: np.ndarray) -> float:
    d = (psi_ref - psi).ravel()
    d = d - float(pairwise_sum(d)) / d.size
    return float(pairwise_sum(np.abs(d))) / d.size


def solve_laplacian_benchmark(
    grid: GaussianGrid,
    hill: dict | None = None,
    cfg: GcrConfig = GcrConfig(),
    preconditioner: str = "identity",
    psi_ref: np.ndarray | None = None,
    psi_start: np.ndarray | None = None,
) -> LaplacianReport:
    """Recover a hill from its Laplacian; error measured after removing the mean offset."""
    L = laplacian_sphere(grid)
    if psi_ref is None:
        hill = hill or {}
        psi_ref = gaussian_hill(
            grid, center=(hill.get("lon", math.pi), hill.get("lat", 0.0)), height=hill.get("height", 1.0)
        ).values.reshape(L.shape)
    psi_ref = np.asarray(psi_ref, np.float64).reshape(L.shape)
    R = L.apply(psi_ref)
    P = jacobi_preconditioner(probe_diagonal(L, (False, True))) if preconditioner == "jacobi" else IDENTITY
    start = np.zeros(L.shape) if psi_start is None else np.asarray(psi_start, np.float64).reshape(L.shape)
    psi, rep = gcr_solve(L, P, R, start, cfg)
    return LaplacianReport(mean_offset_error(psi_ref, psi), rep, psi)


# ---------------------------------------------------------------------------
# potential flow in terrain-following coordinates


@dataclasses.dataclass(frozen=True)
class TerrainHill:
    height: float = 200.0
    x_c: float | None = None  # default: domain centre
    y_c: float | None = None
    half_width: float = 1500.0


@dataclasses.dataclass(frozen=True, eq=False)
class TerrainMetrics:
    """Metric fields at cell centres, arrays shaped (nz, ny, nx)."""

    nx: int
    ny: int
    nz: int
    dx: float
    dy: float
    H: float
    Hs: float
    hill: TerrainHill
    h: np.ndarray  # (ny, nx)
    G13: np.ndarray
    G23: np.ndarray
    G33: np.ndarray
    J: np.ndarray
    rho_star: np.ndarray

    @property
    def dz(self) -> float:
        return self.H / self.nz

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nz, self.ny, self.nx)

    def _terrain(self, x, y):
        hl = self.hill
        xc = hl.x_c if hl.x_c is not None else 0.5 * self.nx * self.dx
        yc = hl.y_c if hl.y_c is not None else 0.5 * self.ny * self.dy
        Lx, Ly = self.nx * self.dx, self.ny * self.dy
        # nearest periodic image so the hill is smooth across the box edges
        ddx = (x - xc + 0.5 * Lx) % Lx - 0.5 * Lx
        ddy = (y - yc + 0.5 * Ly) % Ly - 0.5 * Ly
        a2 = hl.half_width**2
        h = hl.height * np.exp(-(ddx * ddx + ddy * ddy) / a2)
        return h, -2.0 * ddx / a2 * h, -2.0 * ddy / a2 * h

    def at(self, x, y, zbar):
        """(G13, G23, G33, J, rho_star) at arbitrary transformed coordinates."""
        h, hx, hy = self._terrain(x, y)
        H = self.H
        J = (H - h) / H
        G13 = hx * (zbar - H) / (H - h)
        G23 = hy * (zbar - H) / (H - h)
        G33 = G13 * G13 + G23 * G23 + 1.0 / (J * J)
        z_cart = zbar * (H - h) / H + h
        rho = J * np.exp(-z_cart / self.Hs)
        return G13, G23, G33, J, rho

    def coords(self, xs=0.0, ys=0.0, zs=0.0, nz=None):
        nz = self.nz if nz is None else nz
        x = (np.arange(self.nx) + 0.5 + xs) * self.dx
        y = (np.arange(self.ny) + 0.5 + ys) * self.dy
        z = (np.arange(nz) + 0.5 + zs) * self.dz
        return np.meshgrid(z, y, x, indexing="ij")[::-1]


def build_terrain_metrics(
    nx: int,
    ny: int,
    nz: int,
    H: float = 4000.0,
    hill: TerrainHill | dict | None = None,
    dx: float = 250.0,
    dy: float = 250.0,
    Hs: float = 8000.0,
) -> TerrainMetrics:
    if nz < 4:
        raise ContractError(f"need nz >= 4, got {nz}")
    hill = TerrainHill(**hill) if isinstance(hill, dict) else (hill or TerrainHill())
    empty = np.zeros(0)
    m = TerrainMetrics(nx, ny, nz, dx, dy, H, Hs, hill, empty, empty, empty, empty, empty, empty)
    x, y, z = m.coords()
    h = m._terrain(x[0], y[0])[0]
    if np.any(h >= H):
        raise ContractError(f"terrain height {h.max():.1f} reaches model depth {H}")
    if np.any(h < 0) or hill.height < 0:
        raise ContractError("terrain must be non-negative")
    G13, G23, G33, J, rho = m.at(x, y, z)
    for a in (h, G13, G23, G33, J, rho):
        a.flags.writeable = False
    return dataclasses.replace(m, h=h, G13=G13, G23=G23, G33=G33, J=J, rho_star=rho)


class PotentialFlow:
    """Discrete (1/rho*) div(rho* C grad phi) on a cell-centred periodic box.

    x and y are periodic; the vertical contravariant flux vanishes at the top
    and bottom walls. Face metrics are evaluated analytically at the faces.
    """

    def __init__(self, m: TerrainMetrics):
        self.m = m
        xf = m.coords(xs=0.5)
        yf = m.coords(ys=0.5)
        zf = m.coords(zs=0.5, nz=m.nz - 1)
        self.fx = m.at(*xf)
        self.fy = m.at(*yf)
        self.fz = m.at(*zf)
        self.rho_c = m.rho_star
        self.J_zf = self.fz[3]

    # derivative helpers -------------------------------------------------
    def _dz_centre(self, phi):
        dz = self.m.dz
        g = np.empty_like(phi)
        g[1:-1] = (phi[2:] - phi[:-2]) / (2 * dz)
        g[0] = (phi[1] - phi[0]) / dz
        g[-1] = (phi[-1] - phi[-2]) / dz
        return g

    def _grad_faces(self, phi):
        m = self.m
        dphidx_xf = (np.roll(phi, -1, 2) - phi) / m.dx
        dphidy_yf = (np.roll(phi, -1, 1) - phi) / m.dy
        dphidz_zf = (phi[1:] - phi[:-1]) / m.dz
        dz_c = self._dz_centre(phi)
        dz_xf = 0.5 * (dz_c + np.roll(dz_c, -1, 2))
        dz_yf = 0.5 * (dz_c + np.roll(dz_c, -1, 1))
        dx_c = (np.roll(phi, -1, 2) - np.roll(phi, 1, 2)) / (2 * m.dx)
        dy_c = (np.roll(phi, -1, 1) - np.roll(phi, 1, 1)) / (2 * m.dy)
        dx_zf = 0.5 * (dx_c[1:] + dx_c[:-1])
        dy_zf = 0.5 * (dy_c[1:] + dy_c[:-1])
        return dphidx_xf, dphidy_yf, dphidz_zf, dz_xf, dz_yf, dx_zf, dy_zf

    def divergence(self, Fx, Fy, Fz):
        """Discrete div of face fluxes; Fz holds interior z-faces only."""
        m = self.m
        d = (Fx - np.roll(Fx, 1, 2)) / m.dx + (Fy - np.roll(Fy, 1, 1)) / m.dy
        Fzp = np.zeros((m.nz + 1, m.ny, m.nx))
        Fzp[1:-1] = Fz
        return d + (Fzp[1:] - Fzp[:-1]) / m.dz

    def linear_fluxes(self, phi):
        px, py, pz, pz_xf, pz_yf, px_zf, py_zf = self._grad_faces(phi)
        G13x, _, _, _, rx = self.fx
        _, G23y, _, _, ry = self.fy
        G13z, G23z, G33z, _, rz = self.fz
        Fx = rx * (px + G13x * pz_xf)
        Fy = ry * (py + G23y * pz_yf)
        Fz = rz * (G13z * px_zf + G23z * py_zf + G33z * pz)
        return Fx, Fy, Fz

    def apply(self, phi):
        phi = np.asarray(phi, dtype=np.float64).reshape(self.m.shape)
        return self.divergence(*self.linear_fluxes(phi)) / self.rho_c

    def ambient_fluxes(self, u_e=10.0, v_e=0.0, w_e=0.0):
        G13x, _, _, _, rx = self.fx
        _, G23y, _, _, ry = self.fy
        G13z, G23z, _, Jz, rz = self.fz
        omega_e = w_e / Jz + G13z * u_e + G23z * v_e
        shape = self.m.shape
        return (
            np.broadcast_to(rx * u_e, shape),
            np.broadcast_to(ry * v_e, shape),
            np.broadcast_to(rz * omega_e, (self.m.nz - 1,) + shape[1:]),
        )

    def rhs(self, u_e=10.0, v_e=0.0, w_e=0.0):
        return self.divergence(*self.ambient_fluxes(u_e, v_e, w_e)) / self.rho_c

    def velocities(self, phi, u_e=10.0, v_e=0.0, w_e=0.0):
        """Full u, v (at x/y faces) and contravariant omega (interior z-faces)."""
        phi = np.asarray(phi, dtype=np.float64).reshape(self.m.shape)
        px, py, pz, pz_xf, pz_yf, px_zf, py_zf = self._grad_faces(phi)
        u = u_e - px - self.fx[0] * pz_xf
        v = v_e - py - self.fy[1] * pz_yf
        G13z, G23z, G33z, Jz, _ = self.fz
        # u, v and w interpolated to z-faces, then omega = w/J + G13 u + G23 v
        u_zf = u_e - px_zf - G13z * pz
        v_zf = v_e - py_zf - G23z * pz
        w_zf = w_e - pz / Jz
        omega = w_zf / Jz + G13z * u_zf + G23z * v_zf
        return u, v, omega

    def mass_divergence(self, phi, u_e=10.0, v_e=0.0, w_e=0.0):
        """div(rho* v*) recomputed from the full velocities."""
        u, v, omega = self.velocities(phi, u_e, v_e, w_e)
        return self.divergence(self.fx[4] * u, self.fy[4] * v, self.fz[4] * omega)


def potential_flow_operator(metrics: TerrainMetrics):
    pf = PotentialFlow(metrics)
    return LinearOperator(pf.apply, metrics.shape, "potential_flow"), pf.rhs, pf


@dataclasses.dataclass
class PotentialFlowReport:
    gcr: GcrReport
    phi: np.ndarray
    divergence_linf: float
    rhs_linf: float


def solve_potential_flow(
    metrics: TerrainMetrics,
    cfg: GcrConfig = GcrConfig(k=10, eps=1e-8),
    wind: tuple[float, float, float] = (10.0, 0.0, 0.0),
    preconditioner: str = "jacobi",
) -> PotentialFlowReport:
    L, rhs, pf = potential_flow_operator(metrics)
    Q = rhs(*wind)
    P = jacobi_preconditioner(probe_diagonal(L, (False, True, True))) if preconditioner == "jacobi" else IDENTITY
    phi, rep = gcr_solve(L, P, Q, np.zeros(metrics.shape), cfg)
    div = pf.mass_divergence(phi, *wind)
    return PotentialFlowReport(rep, phi, float(np.max(np.abs(div))), float(np.max(np.abs(Q))))
