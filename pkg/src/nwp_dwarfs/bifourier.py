"""Bi-Fourier transforms on a limited-area grid with elliptic truncation."""

from __future__ import annotations

import dataclasses
import math
import time

import numpy as np

from nwp_dwarfs.fft import FourierCoeffs, dft_direct, dft_inverse, fft, ifft_unnormalized
from nwp_dwarfs.grids import ContractError, LamGrid


def _blend_axis(f: np.ndarray, ext: int) -> np.ndarray:
    """Append ``ext`` points along the last axis, blending last -> first value.

    Weight cos^2(pi t / 2) on the trailing boundary value with t = (j+1)/(ext+1),
    so the fill leaves one boundary with zero slope and arrives at the other
    with zero slope, staying between the two boundary values.
    """
    t = (np.arange(ext) + 1.0) / (ext + 1.0)
    w = np.cos(0.5 * math.pi * t) ** 2
    last = f[..., -1:]
    first = f[..., :1]
    fill = w * last + (1.0 - w) * first
    # exact for equal boundary values, so constants stay bit-exact
    fill = np.where(last == first, last, fill)
    return np.concatenate([f, fill], axis=-1)


def extend_periodic(f: np.ndarray, ext_x: int, ext_y: int) -> np.ndarray:
    """Interior field of shape (ny, nx) -> periodic field (ny+ext_y, nx+ext_x)."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2:
        raise ContractError("extend_periodic expects a 2D (ny, nx) field")
    if ext_x < 2 or ext_y < 2:
        raise ContractError(f"extension widths must be >= 2, got ({ext_x}, {ext_y})")
    ex = _blend_axis(f, ext_x)
    return _blend_axis(ex.T, ext_y).T.copy()


def elliptic_mask(grid: LamGrid) -> np.ndarray:
    """Boolean mask over the stored (ky, kx) half spectrum."""
    ny, nx = grid.ny_ext, grid.nx_ext
    kx = np.arange(nx // 2 + 1)
    ky = np.arange(ny)
    ky = np.where(ky <= ny // 2, ky, ky - ny)
    r2 = (kx[None, :] / grid.kmax_x) ** 2 + (ky[:, None] / grid.kmax_y) ** 2
    return r2 <= 1.0


@dataclasses.dataclass(frozen=True, eq=False)
class LamSpectral:
    """``coeffs[ky, kx]`` for kx = 0..nx/2 and ky in FFT order."""

    grid: LamGrid
    coeffs: np.ndarray
    mask: np.ndarray

    def norm(self) -> float:
        return spectral_norm(self.grid, self.coeffs)


def _kx_weights(nx: int) -> np.ndarray:
    w = np.full(nx // 2 + 1, 2.0)
    w[0] = 1.0
    if nx % 2 == 0:
        w[-1] = 1.0
    return w


def spectral_norm(grid: LamGrid, coeffs: np.ndarray) -> float:
    """L2 norm over the half spectrum, weighted so it equals the RMS of the field."""
    w = _kx_weights(grid.nx_ext)
    return math.sqrt(float(np.sum(w[None, :] * np.abs(coeffs) ** 2)))


def bifft_direct(f: np.ndarray, grid: LamGrid) -> LamSpectral:
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (grid.ny_ext, grid.nx_ext):
        raise ContractError(f"field shape {f.shape} != extended grid {(grid.ny_ext, grid.nx_ext)}")
    rows = dft_direct(f).c  # (ny, nx//2+1), zonal first
    c = fft(rows.T).T / grid.ny_ext
    mask = elliptic_mask(grid)
    c = np.where(mask, c, 0.0)
    c.flags.writeable = False
    return LamSpectral(grid, c, mask)


def bifft_inverse(s: LamSpectral) -> np.ndarray:
    g = s.grid
    rows = ifft_unnormalized(np.where(s.mask, s.coeffs, 0.0).T).T
    return dft_inverse(FourierCoeffs.from_complex(g.nx_ext, rows))


def analytic_field(grid: LamGrid) -> np.ndarray:
    """Smooth non-periodic interior test field (a tilted bump on a gradient)."""
    x = np.arange(grid.nx) / grid.nx
    y = np.arange(grid.ny) / grid.ny
    X, Y = np.meshgrid(x, y)
    bump = np.exp(-((X - 0.4) ** 2 + (Y - 0.55) ** 2) / 0.02)
    return 280.0 + 5.0 * X - 3.0 * Y + 2.0 * bump + 0.5 * np.sin(3 * math.pi * X) * np.cos(2 * math.pi * Y)


@dataclasses.dataclass
class BifourierRow:
    field: int
    iter: int
    seconds: float
    spectral_norm_diff: float


def bifourier_bench(grid: LamGrid, nfld: int = 1, iters: int = 100, fields: list[np.ndarray] | None = None) -> list[BifourierRow]:
    """Back-and-forth transforms; spectral-norm distance to the first spectrum."""
    if iters < 1:
        raise ContractError("iters must be >= 1")
    if fields is None:
        base = analytic_field(grid)
        fields = [base] * nfld
    if len(fields) != nfld:
        raise ContractError(f"expected {nfld} fields, got {len(fields)}")
    rows = []
    for i, interior in enumerate(fields):
        f = np.asarray(interior, dtype=np.float64)
        if f.shape == (grid.ny, grid.nx):
            f = extend_periodic(f, grid.ext_x, grid.ext_y)
        s0 = bifft_direct(f, grid)
        s = s0
        for it in range(1, iters + 1):
            t0 = time.perf_counter()
            s = bifft_direct(bifft_inverse(s), grid)
            dt = time.perf_counter() - t0
            rows.append(BifourierRow(i, it, dt, spectral_norm(grid, s.coeffs - s0.coeffs)))
    return rows
