"""Semi-Lagrangian interpolation on Gaussian grids: LAITRI, tri-linear, tri-cubic.

Weights and stencil indices are computed once by :func:`locate`; the kernels
(:func:`laitri`, :func:`trilinear`, :func:`tricubic64`) are then pure gathers
and arithmetic. Every stencil is a 4x4x4 block of flat indices into
``Field3d.values`` ordered ``[level, row, lon]`` with rows running north to
south and lon points A, B, C, D west to east; the schemes use subsets of it.

Rows beyond a pole are the mirrored rows on the far side: row -1 is row 0
shifted by pi in longitude and placed at latitude pi - phi_0.

The cubic sums are written in incremental form about the node bracketing the
target from the west/north/top (the "B" point), so a target sitting exactly on
a node returns the stored value bit-for-bit and constants are reproduced
exactly.
"""

from __future__ import annotations

import dataclasses
import enum
import math

import numpy as np

from nwp_dwarfs.grids import ContractError, Field3d, GaussianGrid

TWO_PI = 2.0 * math.pi


class Kqm(enum.IntEnum):
    NONMONO = 0
    HORIZ_QM = 1
    QM = 2


def f2(a):
    return (a + 1.0) * (a - 2.0) * (a - 1.0) / 2.0


def f3(a):
    return -(a + 1.0) * (a - 2.0) * a / 2.0


def f4(a):
    return a * (a - 1.0) * (a + 1.0) / 6.0


def f1(a):
    # weight of the A point; f1 + f2 + f3 + f4 = 1
    return -a * (a - 1.0) * (a - 2.0) / 6.0


def lagrange4(x: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """Cubic Lagrange weights (npts, 4) for targets x on per-point nodes (npts, 4).

    Each weight is a product of ratios, so it is exactly 1 at its own node and
    exactly 0 at the others.
    """
    x = np.asarray(x, dtype=np.float64)[:, None]
    w = np.ones(nodes.shape)
    for k in range(4):
        for j in range(4):
            if j != k:
                w[:, k] *= (x[:, 0] - nodes[:, j]) / (nodes[:, k] - nodes[:, j])
    return w


def quasi_monotone_clip(value, lo, hi):
    """Clamp to [lo, hi]."""
    return np.minimum(np.maximum(value, lo), hi)


@dataclasses.dataclass(frozen=True, eq=False)
class InterpWeights:
    """Precomputed weights for npts targets.

    pdlo[p, r] is the zonal linear weight in row r; pclo[p, r, :] holds
    (f1, f2, f3, f4) at that row's alpha, the last three being the classic
    PCLO entries. pcla and pvintw are four-point Lagrange weights over the
    stencil rows and levels; entries 1..3 are PCLA(1..3) and PVINTW(1..3).
    ``vbase`` is the stencil level that brackets the target from above and
    ``pvlin`` the matching two-level linear weights.
    """

    pdlo: np.ndarray
    pclo: np.ndarray
    pdlat: np.ndarray
    pcla: np.ndarray
    pvintw: np.ndarray
    pvlin: np.ndarray
    vbase: np.ndarray
    kqm: Kqm = Kqm.NONMONO

    @property
    def npts(self) -> int:
        return self.pdlat.size


def compute_weights(alpha_lon: np.ndarray, lat: np.ndarray, lat_nodes: np.ndarray, eta: np.ndarray, eta_nodes: np.ndarray, vbase: np.ndarray, kqm: int = 0) -> InterpWeights:
    """Weights from per-row zonal fractions (npts, 4) and meridional/vertical nodes (npts, 4)."""
    a = np.asarray(alpha_lon, dtype=np.float64)
    pclo = np.stack([f1(a), f2(a), f3(a), f4(a)], axis=-1)
    pdlat = (lat - lat_nodes[:, 1]) / (lat_nodes[:, 2] - lat_nodes[:, 1])
    pcla = lagrange4(lat, lat_nodes)
    n = a.shape[0]
    vbase = np.asarray(vbase, dtype=np.intp)
    flat_levels = eta_nodes[:, 0] == eta_nodes[:, 3]
    pvintw = np.zeros((n, 4))
    pvlin = np.zeros((n, 4))
    live = ~flat_levels
    if np.any(live):
        pvintw[live] = lagrange4(eta[live], eta_nodes[live])
        rows = np.nonzero(live)[0]
        b = vbase[live]
        up = b < 3
        bb = np.minimum(b, 2)
        lo = eta_nodes[rows, bb]
        hi = eta_nodes[rows, bb + 1]
        t = (eta[live] - lo) / (hi - lo)
        pvlin[rows[up], b[up] + 1] = t[up]
    return InterpWeights(a.copy(), pclo, pdlat, pcla, pvintw, pvlin, vbase, Kqm(kqm))


@dataclasses.dataclass(frozen=True, eq=False)
class Stencil32:
    """Flat source indices as a (npts, 4, 4, 4) block [level, row, lon A..D].

    ``ghost[p, r]`` marks stencil rows taken from across a pole; vector
    components change sign there.
    """

    idx64: np.ndarray
    ghost: np.ndarray

    @property
    def indices(self) -> np.ndarray:
        """The 32 LAITRI points per target in kernel order.

        Level 0: B1 C1 B2 C2; levels 1 and 2: B0 C0 A1 B1 C1 D1 A2 B2 C2 D2 B3 C3;
        level 3: B1 C1 B2 C2.
        """
        s = self.idx64
        outer = lambda L: [s[:, L, 1, 1], s[:, L, 1, 2], s[:, L, 2, 1], s[:, L, 2, 2]]
        inner = lambda L: [s[:, L, 0, 1], s[:, L, 0, 2], *[s[:, L, 1, i] for i in range(4)], *[s[:, L, 2, i] for i in range(4)], s[:, L, 3, 1], s[:, L, 3, 2]]
        return np.stack(outer(0) + inner(1) + inner(2) + outer(3), axis=1)


def _row_geometry(grid: GaussianGrid, j: np.ndarray):
    """Real row, longitude offset and latitude of (possibly mirrored) rows j."""
    K = grid.nlat
    lat = grid.lat
    north = j < 0
    south = j >= K
    jr = np.where(north, -j - 1, np.where(south, 2 * K - 1 - j, j))
    off = np.where(north | south, math.pi, 0.0)
    phi = lat[jr]
    phi = np.where(north, math.pi - phi, np.where(south, -math.pi - phi, phi))
    return jr, off, phi


def _zonal_position(lon: np.ndarray, off: np.ndarray, n: np.ndarray):
    t = np.mod(lon - off, TWO_PI) * n / TWO_PI
    r = np.rint(t)
    # targets that are grid longitudes up to rounding land exactly on the node
    t = np.where(np.abs(t - r) <= 16 * np.finfo(float).eps * np.maximum(1.0, r), r, t)
    i = np.floor(t)
    alpha = t - i
    i = i.astype(np.intp) % n
    return i, alpha


def locate(grid: GaussianGrid, levels: np.ndarray, lon, lat, eta=None, kqm: int = 0) -> tuple[Stencil32, InterpWeights]:
    """Stencils and weights for targets at (lon, lat, eta) in radians / level units.

    ``levels`` are increasing vertical coordinates of the field levels; use a
    single level for 2D fields. Targets outside [levels[0], levels[-1]] are
    clamped.
    """
    if not isinstance(grid, GaussianGrid):
        raise ContractError("interpolation needs a Gaussian grid")
    levels = np.asarray(levels, dtype=np.float64)
    nlev = levels.size
    if 1 < nlev < 4:
        raise ContractError("need a single level or at least four levels")
    if nlev > 1 and np.any(np.diff(levels) <= 0):
        raise ContractError("levels must be strictly increasing")
    lon = np.atleast_1d(np.asarray(lon, dtype=np.float64))
    lat = np.atleast_1d(np.asarray(lat, dtype=np.float64))
    npts = lon.size
    eta = np.full(npts, levels[0]) if eta is None else np.atleast_1d(np.asarray(eta, dtype=np.float64))
    if lat.shape != lon.shape or eta.shape != lon.shape:
        raise ContractError("lon, lat and eta must have the same length")
    if np.any(np.abs(lat) > 0.5 * math.pi) or not np.all(np.isfinite(lon)):
        raise ContractError("latitudes must lie in [-pi/2, pi/2] and longitudes be finite")

    # meridional: row jb brackets the target from the north
    jb = np.searchsorted(-grid.lat, -lat, side="right") - 1
    rows = jb[:, None] + np.arange(-1, 3)[None, :]
    jr, off, phi = _row_geometry(grid, rows)
    nlon = grid.nlon_per_lat[jr]
    iB, alpha = _zonal_position(lon[:, None], off, nlon)
    starts = grid.row_offsets[jr]
    lon_idx = (iB[..., None] + np.arange(-1, 3)) % nlon[..., None]
    hidx = starts[..., None] + lon_idx  # (npts, 4 rows, 4 lons)

    # vertical
    if nlev == 1:
        kb = np.zeros(npts, dtype=np.intp)
        vbase = np.ones(npts, dtype=np.intp)
        lev = np.zeros((npts, 4), dtype=np.intp)
        eta_c = np.full(npts, levels[0])
    else:
        eta_c = np.clip(eta, levels[0], levels[-1])
        kl = np.clip(np.searchsorted(levels, eta_c, side="right") - 1, 0, nlev - 1)
        kb = np.clip(kl - 1, 0, nlev - 4)
        vbase = kl - kb
        lev = kb[:, None] + np.arange(4)[None, :]
    eta_nodes = levels[lev]
    idx64 = lev[:, :, None, None] * grid.npoints + hidx[:, None, :, :]
    w = compute_weights(alpha, lat, phi, eta_c, eta_nodes, vbase, kqm)
    ghost = (rows < 0) | (rows >= grid.nlat)
    return Stencil32(idx64, ghost), w


# -- kernels ------------------------------------------------------------------


def _inc(X: np.ndarray, w: np.ndarray, base) -> np.ndarray:
    """X_b + sum_{k != b} w_k (X_k - X_b) over the last axis, fixed order."""
    if np.isscalar(base):
        xb = X[..., base]
    else:
        xb = np.take_along_axis(X, np.asarray(base)[..., None], axis=-1)[..., 0]
    s = np.zeros_like(xb)
    for k in range(X.shape[-1]):
        d = X[..., k] - xb  # exactly 0 at the base
        s = s + w[..., k] * d
    return xb + s


def _lin(xb, xc, t):
    return xb + t * (xc - xb)


def _gather(field: Field3d | np.ndarray, st: Stencil32, vector: bool = False) -> np.ndarray:
    v = field.values if isinstance(field, Field3d) else np.asarray(field)
    X = v.ravel()[st.idx64]
    if vector and np.any(st.ghost):
        X = np.where(st.ghost[:, None, :, None], -X, X)
    return X


def _envelope(X: np.ndarray, levels: list) -> tuple[np.ndarray, np.ndarray]:
    """Min/max over points B1 C1 B2 C2 at the given stencil levels."""
    pts = np.concatenate([X[:, L, 1:3, 1:3].reshape(X.shape[0], -1) for L in levels], axis=1)
    return pts.min(axis=1), pts.max(axis=1)


def _vertical_envelope_levels(w: InterpWeights) -> np.ndarray:
    return np.minimum(w.vbase, 2)


def _clip_final(X, w, value):
    e0 = _vertical_envelope_levels(w)
    rows = np.arange(X.shape[0])
    inner0 = X[rows, e0][:, 1:3, 1:3].reshape(X.shape[0], -1)
    inner1 = X[rows, e0 + 1][:, 1:3, 1:3].reshape(X.shape[0], -1)
    pts = np.concatenate([inner0, inner1], axis=1)
    return quasi_monotone_clip(value, pts.min(axis=1), pts.max(axis=1))


def _zonal_cubic(X, w, r):
    """Cubic zonal interpolation in row r for every level: (npts, 4)."""
    return _inc(X[:, :, r, :], w.pclo[:, None, r, :], 1)


def _zonal_linear(X, w, L, r):
    return _lin(X[:, L, r, 1], X[:, L, r, 2], w.pdlo[:, r])


def laitri(field, st: Stencil32, w: InterpWeights, vector: bool = False) -> np.ndarray:
    """32-point quasi-tri-cubic interpolation."""
    X = _gather(field, st, vector)
    n = X.shape[0]
    Z = np.empty((n, 4))
    for L in (0, 3):
        Z[:, L] = _lin(_zonal_linear(X, w, L, 1), _zonal_linear(X, w, L, 2), w.pdlat)
    row1 = _zonal_cubic(X, w, 1)
    row2 = _zonal_cubic(X, w, 2)
    for L in (1, 2):
        Zr = np.stack([_zonal_linear(X, w, L, 0), row1[:, L], row2[:, L], _zonal_linear(X, w, L, 3)], axis=1)
        Z[:, L] = _inc(Zr, w.pcla, 1)
        if w.kqm >= Kqm.HORIZ_QM:
            lo, hi = _envelope(X, [L])
            Z[:, L] = quasi_monotone_clip(Z[:, L], lo, hi)
    out = _inc(Z, w.pvintw, w.vbase)
    if w.kqm >= Kqm.QM:
        out = _clip_final(X, w, out)
    return out


def tricubic64(field, st: Stencil32, w: InterpWeights, vector: bool = False) -> np.ndarray:
    """Full 64-point tensor-product cubic Lagrange interpolation."""
    X = _gather(field, st, vector)
    rowsL = np.stack([_zonal_cubic(X, w, r) for r in range(4)], axis=-1)  # (npts, level, row)
    Z = _inc(rowsL, w.pcla[:, None, :], 1)
    if w.kqm >= Kqm.HORIZ_QM:
        for L in range(4):
            lo, hi = _envelope(X, [L])
            Z[:, L] = quasi_monotone_clip(Z[:, L], lo, hi)
    out = _inc(Z, w.pvintw, w.vbase)
    if w.kqm >= Kqm.QM:
        out = _clip_final(X, w, out)
    return out


def trilinear(field, st: Stencil32, w: InterpWeights, vector: bool = False) -> np.ndarray:
    """8-point tri-linear interpolation on the inner cell."""
    X = _gather(field, st, vector)
    Z = _lin(_lin(X[:, :, 1, 1], X[:, :, 1, 2], w.pdlo[:, None, 1]), _lin(X[:, :, 2, 1], X[:, :, 2, 2], w.pdlo[:, None, 2]), w.pdlat[:, None])
    return _inc(Z, w.pvlin, w.vbase)


SCHEMES = {1: trilinear, 3: tricubic64, 4: laitri}


def interpolate(field, st: Stencil32, w: InterpWeights, interp_meth: int = 4, vector: bool = False) -> np.ndarray:
    try:
        fn = SCHEMES[int(interp_meth)]
    except KeyError:
        raise ContractError(f"unknown interp_meth {interp_meth}; expected one of {sorted(SCHEMES)}") from None
    return fn(field, st, w, vector)


# -- micro-benchmark ------------------------------------------------------------


@dataclasses.dataclass
class LaitriBenchReport:
    npoints: int
    nlev: int
    kqm: int
    seconds: float
    points_per_second: float
    checksum: str


def laitri_bench(npoints: int = 100000, nlev: int = 8, kqm: int = 0, N: int = 31, seed: int = 0) -> LaitriBenchReport:
    """Interpolate a smooth synthetic field at random departure points."""
    import hashlib
    import time

    from nwp_dwarfs.grids import make_gaussian_grid

    if npoints < 1:
        raise ContractError("npoints must be >= 1")
    grid = make_gaussian_grid(N)
    levels = np.linspace(0.0, 1.0, nlev) if nlev > 1 else np.zeros(1)
    lon, lat = grid.coordinates()
    vals = np.stack([np.cos(lat) * np.sin(2 * lon + 3 * z) + 0.5 * np.sin(lat) * (1 + z) for z in levels])
    field = Field3d(grid, vals, name="laitri_bench")
    rng = np.random.default_rng(seed)
    plon = rng.uniform(0, TWO_PI, npoints)
    plat = np.arcsin(rng.uniform(-1, 1, npoints))
    peta = rng.uniform(levels[0], levels[-1], npoints)
    st, w = locate(grid, levels, plon, plat, peta, kqm)
    t0 = time.perf_counter()
    out = laitri(field, st, w)
    dt = time.perf_counter() - t0
    return LaitriBenchReport(npoints, nlev, int(kqm), dt, npoints / max(dt, 1e-12), hashlib.sha256(out.tobytes()).hexdigest())
