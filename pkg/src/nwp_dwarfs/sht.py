"""Spherical-harmonics transform pair and the round-trip timing driver."""

from __future__ import annotations

import dataclasses
import time

import numpy as np

from nwp_dwarfs.fft import FourierCoeffs, dft_direct, dft_inverse
from nwp_dwarfs.grids import ContractError, Field3d, GaussianGrid, make_gaussian_grid
from nwp_dwarfs.legendre import LegendreTable, build_legendre_table


@dataclasses.dataclass(frozen=True, eq=False)
class SphericalCoeffs:
    """Triangular-truncation amplitudes, ``coeffs[level, m, n]`` (zero for n < m)."""

    N: int
    coeffs: np.ndarray

    @property
    def nlev(self) -> int:
        return self.coeffs.shape[0]

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.complex128)
        if c.ndim == 2:
            c = c[None]
        if c.shape[1:] != (self.N + 1, self.N + 1):
            raise ContractError(f"coefficient array shape {c.shape} does not match N={self.N}")
        c[:, np.tril(np.ones((self.N + 1, self.N + 1), dtype=bool), -1)] = 0.0
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)


def random_coeffs(N: int, nlev: int = 1, rng: np.random.Generator | None = None) -> SphericalCoeffs:
    """Random amplitudes of a real band-limited field (m=0 entries real)."""
    rng = np.random.default_rng(0) if rng is None else rng
    c = rng.standard_normal((nlev, N + 1, N + 1)) + 1j * rng.standard_normal((nlev, N + 1, N + 1))
    c[:, 0, :] = c[:, 0, :].real
    return SphericalCoeffs(N, c)


def _row_groups(grid: GaussianGrid):
    """Consecutive rows sharing a longitude count, as (start_row, stop_row, nlon)."""
    nl = grid.nlon_per_lat
    start = 0
    for j in range(1, grid.nlat + 1):
        if j == grid.nlat or nl[j] != nl[start]:
            yield start, j, int(nl[start])
            start = j


def _fourier_rows(f: Field3d, M: int) -> np.ndarray:
    """Complex zonal amplitudes c_m(x_k) for m = 0..M, shape (nlev, nlat, M+1)."""
    g = f.grid
    out = np.zeros((f.nlev, g.nlat, M + 1), dtype=np.complex128)
    off = g.row_offsets
    for j0, j1, nlon in _row_groups(g):
        block = f.values[:, off[j0] : off[j0] + (j1 - j0) * nlon].reshape(f.nlev, j1 - j0, nlon)
        c = dft_direct(block).c
        # amplitudes at and above a row's Nyquist are not representable there
        mmax = min(M, (nlon - 1) // 2)
        out[:, j0:j1, : mmax + 1] = c[..., : mmax + 1]
    return out


def sht_direct(f: Field3d, table: LegendreTable) -> SphericalCoeffs:
    g = f.grid
    if not isinstance(g, GaussianGrid):
        raise ContractError("spherical transform needs a Gaussian grid")
    if table.K != g.nlat:
        raise ContractError("Legendre table was built for a different grid")
    N = table.N
    cm = _fourier_rows(f, N)
    wc = cm * g.weights[None, :, None]
    # psi[l, m, n] = sum_k w_k c_m(x_k) P̄_n^m(x_k), fixed loop order
    psi = np.einsum("lkm,mnk->lmn", wc, table.pbar, optimize=False)
    return SphericalCoeffs(N, psi)


def sht_inverse(c: SphericalCoeffs, grid: GaussianGrid, table: LegendreTable) -> Field3d:
    if c.N > table.N:
        raise ContractError(f"coefficients at N={c.N} exceed table truncation {table.N}")
    N = c.N
    pbar = table.pbar[: N + 1, : N + 1, :]
    cm = np.einsum("lmn,mnk->lkm", c.coeffs, pbar, optimize=False)
    values = np.empty((c.nlev, grid.npoints))
    off = grid.row_offsets
    for j0, j1, nlon in _row_groups(grid):
        half = nlon // 2 + 1
        mmax = min(N, (nlon - 1) // 2)
        spec = np.zeros((c.nlev, j1 - j0, half), dtype=np.complex128)
        spec[..., : mmax + 1] = cm[:, j0:j1, : mmax + 1]
        rows = dft_inverse(FourierCoeffs.from_complex(nlon, spec))
        values[:, off[j0] : off[j0] + (j1 - j0) * nlon] = rows.reshape(c.nlev, -1)
    return Field3d(grid, values, name="sht_inverse")


@dataclasses.dataclass
class ShtBenchReport:
    N: int
    nlev: int
    seconds: list[float]
    max_err: list[float]

    @property
    def final_max_err(self) -> float:
        return max(self.max_err)


def sht_roundtrip_bench(N: int, nlev: int = 1, iters: int = 100, seed: int = 0, reduced: bool = False) -> ShtBenchReport:
    """Iterate f <- inverse(direct(f)) and track the max error vs the initial field."""
    if iters < 1:
        raise ContractError("iters must be >= 1")
    grid = make_gaussian_grid(N, reduced=reduced)
    table = build_legendre_table(grid)
    f0 = sht_inverse(random_coeffs(N, nlev, np.random.default_rng(seed)), grid, table)
    f = f0
    seconds, errs = [], []
    running = 0.0
    for _ in range(iters):
        t0 = time.perf_counter()
        f = sht_inverse(sht_direct(f, table), grid, table)
        seconds.append(time.perf_counter() - t0)
        running = max(running, float(np.max(np.abs(f.values - f0.values))))
        errs.append(running)
    return ShtBenchReport(N, nlev, seconds, errs)
