"""Normalised associated Legendre functions at Gaussian latitudes.

P̄_n^m is scaled so that the integral of its square over [-1, 1] is one; no
Condon-Shortley phase. With Gauss weights summing to 2 the discrete
orthonormality relation sum_k w_k P̄_n^m P̄_n'^m = delta_nn' then holds exactly
for n, n' <= N.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from nwp_dwarfs.grids import ContractError, GaussianGrid, gauss_legendre_ld


def legendre_matrix(N: int, x: np.ndarray) -> np.ndarray:
    """P̄_n^m(x) for 0 <= m <= n <= N as an array of shape (N+1, N+1, len(x)).

    Indexed ``[m, n, k]``; entries with n < m are zero. The recurrence runs in
    n at fixed m, seeded by the sectoral values, so it never forms the
    unnormalised factorials. It is carried in long double and rounded once.
    """
    ld = np.longdouble
    x = np.asarray(x, dtype=ld)
    s = np.sqrt(np.maximum(ld(0), 1 - x * x))
    out = np.zeros((N + 1, N + 1, x.size), dtype=ld)
    pmm = np.full(x.size, 1 / np.sqrt(ld(2)))
    for m in range(N + 1):
        if m > 0:
            pmm = np.sqrt(ld(2 * m + 1) / ld(2 * m)) * s * pmm
        out[m, m] = pmm
        if m + 1 > N:
            continue
        out[m, m + 1] = np.sqrt(ld(2 * m + 3)) * x * pmm
        for n in range(m + 2, N + 1):
            a = np.sqrt(ld(4 * n * n - 1) / ld(n * n - m * m))
            b = np.sqrt(ld((n - 1) ** 2 - m * m) / ld(4 * (n - 1) ** 2 - 1))
            out[m, n] = a * (x * out[m, n - 1] - b * out[m, n - 2])
    return out.astype(np.float64)


@dataclasses.dataclass(frozen=True, eq=False)
class LegendreTable:
    N: int
    x: np.ndarray
    pbar: np.ndarray  # [m, n, k]

    @property
    def K(self) -> int:
        return self.x.size

    def order(self, m: int) -> np.ndarray:
        """Matrix of P̄_n^m(x_k) for n = m..N (rows) and k (columns)."""
        return self.pbar[m, m:, :]


def build_legendre_table(grid: GaussianGrid, N: int | None = None) -> LegendreTable:
    N = grid.truncation_N if N is None else N
    if 2 * grid.nlat - 1 < 2 * N:
        raise ContractError(f"{grid.nlat} latitudes cannot integrate products at truncation {N}")
    # evaluate at the unrounded roots so analysis and synthesis share an
    # exact quadrature; the stored float64 latitudes are one rounding away
    x_ld, _ = gauss_legendre_ld(grid.nlat)
    p = legendre_matrix(N, x_ld)
    p.flags.writeable = False
    return LegendreTable(N, grid.latitudes, p)
