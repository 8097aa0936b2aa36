"""Horizontal grids, field containers, norms and I/O shared by all dwarfs."""

from __future__ import annotations

import csv
import dataclasses
import enum
import functools
import math
import struct
from pathlib import Path

import numpy as np

from nwp_dwarfs.fft import is_fft_length, next_fft_length

MAX_TRUNCATION = 512
HILL_RADIUS = 2.0 * math.pi / 9.0


class CapacityError(ValueError):
    """Requested problem size is beyond the desk-scale cap."""


class ContractError(ValueError):
    """Arguments violate an operation's preconditions."""


class GridKind(str, enum.Enum):
    LINEAR = "linear"
    QUADRATIC = "quadratic"
    CUBIC = "cubic"

    @property
    def order(self) -> int:
        return {"linear": 1, "quadratic": 2, "cubic": 3}[self.value]


def pairwise_sum(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Sum along ``axis`` with a fixed pairwise tree.

    The tree depends only on the length, so the result is bit-identical for
    identical inputs independently of library internals or thread counts.
    """
    x = np.moveaxis(np.asarray(x, dtype=np.float64), axis, -1)
    if x.shape[-1] == 0:
        return np.zeros(x.shape[:-1])
    while x.shape[-1] > 1:
        if x.shape[-1] % 2:
            x = np.concatenate([x, np.zeros(x.shape[:-1] + (1,))], axis=-1)
        x = x[..., 0::2] + x[..., 1::2]
    return x[..., 0]


def legendre_p(n: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ordinary Legendre polynomial P_n and its derivative at ``x``.

    Evaluated in the precision of ``x`` (callers pass long double).
    """
    x = np.asarray(x)
    p_prev = np.ones_like(x)
    p = x.copy()
    if n == 0:
        return p_prev, np.zeros_like(x)
    for k in range(2, n + 1):
        p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
    dp = n * (x * p - p_prev) / (x * x - 1)
    return p, dp


@functools.lru_cache(maxsize=64)
def gauss_legendre_ld(k: int, tol: float = 1e-14, maxiter: int = 100):
    """Long-double nodes (decreasing) and weights of the k-point Gauss rule.

    Newton iteration on P_k seeded by the Chebyshev-like estimate
    ``cos(pi (i + 0.75) / (k + 0.5))``; weights sum to 2. The iteration and
    the weights are carried in long double and rounded once, which keeps
    repeated transform round trips from drifting.
    """
    ld = np.longdouble
    pi = ld("3.14159265358979323846264338327950288")
    x = np.cos(pi * (np.arange(k) + ld(0.75)) / (k + ld(0.5)))
    for _ in range(maxiter):
        p, dp = legendre_p(k, x)
        dx = p / dp
        x = x - dx
        if np.max(np.abs(dx)) < tol:
            break
    # one more step: quadratic convergence takes the root to working precision
    p, dp = legendre_p(k, x)
    x = x - p / dp
    _, dp = legendre_p(k, x)
    w = 2 / ((1 - x * x) * dp * dp)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def gauss_legendre(k: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = gauss_legendre_ld(k)
    return x.astype(np.float64), w.astype(np.float64)


def _nlat_for(truncation: int, kind: GridKind) -> int:
    # (order+1) N + 1 longitudes avoid aliasing of products of that order
    return math.ceil(((kind.order + 1) * truncation + 1) / 2)


@dataclasses.dataclass(frozen=True, eq=False)
class GaussianGrid:
    """Full or reduced Gaussian grid, rows ordered north to south.

    ``latitudes`` holds x_k = sin(latitude) = cos(colatitude).
    """

    truncation_N: int
    nlat: int
    latitudes: np.ndarray
    weights: np.ndarray
    nlon_per_lat: np.ndarray
    grid_kind: GridKind
    reduced: bool = False

    @property
    def npoints(self) -> int:
        return int(self.nlon_per_lat.sum())

    @property
    def row_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.nlon_per_lat)[:-1]]).astype(np.int64)

    @property
    def lat(self) -> np.ndarray:
        """Geographic latitude of each row in radians."""
        return np.arcsin(self.latitudes)

    @property
    def is_full(self) -> bool:
        return bool(np.all(self.nlon_per_lat == self.nlon_per_lat[0]))

    @property
    def nlon(self) -> int:
        if not self.is_full:
            raise ContractError("reduced grid has no single longitude count")
        return int(self.nlon_per_lat[0])

    def row_lons(self, row: int) -> np.ndarray:
        n = int(self.nlon_per_lat[row])
        return 2.0 * math.pi * np.arange(n) / n

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-point (lon, lat) in radians, in storage order."""
        lons = np.concatenate([self.row_lons(j) for j in range(self.nlat)])
        lats = np.repeat(self.lat, self.nlon_per_lat)
        return lons, lats


def make_gaussian_grid(
    N: int,
    kind: GridKind | str = GridKind.LINEAR,
    reduced: bool = False,
    max_truncation: int = MAX_TRUNCATION,
) -> GaussianGrid:
    kind = GridKind(kind)
    if N < 1:
        raise ContractError(f"truncation must be >= 1, got {N}")
    if N > max_truncation:
        raise CapacityError(f"truncation {N} exceeds desk-scale cap {max_truncation}")
    nlat = _nlat_for(N, kind)
    x, w = gauss_legendre(nlat)
    nlon_full = next_fft_length(2 * nlat)
    if reduced:
        coslat = np.sqrt(1.0 - x * x)
        nlon = np.array(
            [min(nlon_full, next_fft_length(max(8, math.ceil(nlon_full * c)))) for c in coslat],
            dtype=np.int64,
        )
    else:
        nlon = np.full(nlat, nlon_full, dtype=np.int64)
    for arr in (x, w, nlon):
        arr.flags.writeable = False
    return GaussianGrid(N, nlat, x, w, nlon, kind, reduced)


@dataclasses.dataclass(frozen=True, eq=False)
class LamGrid:
    """Rectangular limited-area grid with an extension zone."""

    nx: int
    ny: int
    ext_x: int
    ext_y: int
    dx: float = 1.0
    dy: float = 1.0
    grid_kind: GridKind = GridKind.LINEAR

    def __post_init__(self):
        object.__setattr__(self, "grid_kind", GridKind(self.grid_kind))
        for name, n in (("x", self.nx + self.ext_x), ("y", self.ny + self.ext_y)):
            if not is_fft_length(n):
                raise ContractError(f"extended size in {name} ({n}) is not 2^a 3^b 5^c")

    @property
    def nx_ext(self) -> int:
        return self.nx + self.ext_x

    @property
    def ny_ext(self) -> int:
        return self.ny + self.ext_y

    @property
    def kmax_x(self) -> int:
        return self.nx_ext // (self.grid_kind.order + 1)

    @property
    def kmax_y(self) -> int:
        return self.ny_ext // (self.grid_kind.order + 1)

    @property
    def npoints(self) -> int:
        return self.nx_ext * self.ny_ext


@dataclasses.dataclass(frozen=True, eq=False)
class Field3d:
    """Level-major point values on a grid; ``values`` has shape (nlev, npoints)."""

    grid: GaussianGrid | LamGrid
    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, order="C")
        if v.ndim == 1:
            v = v[None, :]
        if v.ndim != 2 or v.shape[1] != self.grid.npoints:
            raise ContractError(
                f"field {self.name!r}: values shape {v.shape} does not match "
                f"{self.grid.npoints} points per level"
            )
        if not np.all(np.isfinite(v)):
            raise ContractError(f"field {self.name!r} contains non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def nlev(self) -> int:
        return self.values.shape[0]

    def grid_view(self) -> np.ndarray:
        """(nlev, nlat, nlon) view for full Gaussian grids, (nlev, ny, nx) for LAM."""
        g = self.grid
        if isinstance(g, LamGrid):
            return self.values.reshape(self.nlev, g.ny_ext, g.nx_ext)
        return self.values.reshape(self.nlev, g.nlat, g.nlon)

    def rows(self, level: int = 0) -> list[np.ndarray]:
        g = self.grid
        off = g.row_offsets
        return [self.values[level, off[j] : off[j] + g.nlon_per_lat[j]] for j in range(g.nlat)]

    def with_values(self, values: np.ndarray, name: str | None = None) -> "Field3d":
        return Field3d(self.grid, values, self.name if name is None else name)


@dataclasses.dataclass(frozen=True)
class Norms:
    l2: float
    linf: float
    mean: float


def field_norms(a: Field3d | np.ndarray, b: Field3d | np.ndarray) -> Norms:
    """RMS, max-abs and mean of ``a - b`` with a fixed reduction order."""
    av = a.values if isinstance(a, Field3d) else np.asarray(a, dtype=np.float64)
    bv = b.values if isinstance(b, Field3d) else np.asarray(b, dtype=np.float64)
    if av.shape != bv.shape:
        raise ContractError(f"shape mismatch: {av.shape} vs {bv.shape}")
    if isinstance(a, Field3d) and isinstance(b, Field3d) and a.grid is not b.grid:
        if a.grid.npoints != b.grid.npoints:
            raise ContractError("fields live on different grids")
    d = (av - bv).ravel()
    count = d.size
    if count == 0:
        return Norms(0.0, 0.0, 0.0)
    l2 = math.sqrt(float(pairwise_sum(d * d)) / count)
    linf = float(np.max(np.abs(d)))
    mean = float(pairwise_sum(d)) / count
    return Norms(l2, linf, mean)


def great_circle_distance(lon, lat, lon_c, lat_c) -> np.ndarray:
    """Haversine central angle between points and a centre (radians)."""
    h = np.sin((lat - lat_c) / 2.0) ** 2 + np.cos(lat) * np.cos(lat_c) * np.sin((lon - lon_c) / 2.0) ** 2
    return 2.0 * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def hill_profile(lon, lat, center, height, radius=HILL_RADIUS) -> np.ndarray:
    """Raised-cosine hill ``(height/2)(1 + cos(pi s / radius))`` for s < radius."""
    if height <= 0:
        raise ContractError(f"hill height must be > 0, got {height}")
    s = great_circle_distance(np.asarray(lon, float), np.asarray(lat, float), center[0], center[1])
    return np.where(s < radius, 0.5 * height * (1.0 + np.cos(math.pi * s / radius)), 0.0)


def gaussian_hill(
    grid: GaussianGrid,
    center: tuple[float, float] = (math.pi, 0.0),
    height: float = 1.0,
    nlev: int = 1,
    radius: float = HILL_RADIUS,
) -> Field3d:
    """Cosine-bell initial state for the Laplacian and advection benchmarks.

    ``center`` is (longitude, latitude) in radians. The distance to the centre
    is the great-circle angle, so the bell is isotropic on the sphere.
    """
    lon, lat = grid.coordinates()
    vals = hill_profile(lon, lat, center, height, radius)
    return Field3d(grid, np.tile(vals, (nlev, 1)), name="hill")


# ---------------------------------------------------------------------------
# field dump I/O

DUMP_MAGIC = b"NWPF"
_HEADER = struct.Struct("<4sIII")


def write_field_dump(path: str | Path, values: Field3d | np.ndarray) -> None:
    """Write the NWPF binary layout: 16-byte header then level-major float64."""
    v = values.values if isinstance(values, Field3d) else np.atleast_2d(np.asarray(values, np.float64))
    nlev, npoints = v.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DUMP_MAGIC, nlev, npoints, 0))
        fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def read_field_dump(path: str | Path) -> np.ndarray:
    """Read an NWPF dump; returns an array of shape (nlev, npoints)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ContractError(f"{path}: truncated header")
    magic, nlev, npoints, _ = _HEADER.unpack_from(raw)
    if magic != DUMP_MAGIC:
        raise ContractError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 8 * nlev * npoints
    if len(raw) != expected:
        raise ContractError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    return data.reshape(nlev, npoints)


def write_field_csv(path: str | Path, field: Field3d) -> None:
    """lon,lat,level,value rows (degrees) for plotting."""
    lon, lat = field.grid.coordinates()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lon", "lat", "level", "value"])
        for lev in range(field.nlev):
            for lo, la, v in zip(np.degrees(lon), np.degrees(lat), field.values[lev]):
                w.writerow([f"{lo:.6f}", f"{la:.6f}", lev, repr(float(v))])
