"""Column cloud microphysics with explicit/implicit source matrices.

Five water categories (vapour, cloud liquid, cloud ice, rain, snow) are
integrated level by level from the model top down. At every level the fast
processes are collected into an explicit matrix ``A`` (antisymmetric off the
diagonal, external sources on the diagonal) and an implicit matrix ``B``
(non-negative, zero diagonal). Explicit sinks are scaled so no category can go
negative, then the 5x5 system is solved by non-pivoting LU.

All arrays are vectorised over columns: shape ``(ncol, klev)`` for profiles and
``(ncol, 5, 5)`` for the matrices at one level. Process rates are simple
stand-ins whose coefficients live in :data:`CONSTANTS`; they keep the shape of
the computation, not the fidelity of an operational scheme.
"""

from __future__ import annotations

import dataclasses
import hashlib
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from nwp_dwarfs.grids import ContractError

NV, NL, NI, NR, NS = range(5)
NCAT = 5
CATEGORIES = ("v", "l", "i", "r", "s")


@dataclasses.dataclass(frozen=True)
class CloudConstants:
    cp: float = 1004.709
    rd: float = 287.0597
    rv: float = 461.5250
    lv: float = 2.5008e6
    lf: float = 0.3334e6
    t0: float = 273.16
    t_hom: float = 235.15
    # two-branch saturation vapour pressure fit e = r2es exp(r3 (T - t0)/(T - r4))
    r2es: float = 611.21
    r3les: float = 17.502
    r4les: float = 32.19
    r3ies: float = 22.587
    r4ies: float = -0.7
    # fall speeds (m/s) for v, l, i, r, s
    fall: tuple = (0.0, 0.0, 0.15, 4.0, 1.0)
    k_auto: float = 1.0e-3  # liquid -> rain (1/s)
    q_crit: float = 3.0e-4  # kg/kg
    k_snow: float = 1.0e-3  # ice -> snow (1/s) at t0
    snow_texp: float = 0.025  # 1/K
    k_rime: float = 2.0  # (kg/kg)^-1 s^-1
    k_dep: float = 1.0e-4  # liquid -> ice when both present below t0 (1/s)
    k_melt: float = 5.0e-5  # 1/(s K)
    k_frz: float = 5.0e-5  # rain freezing, 1/(s K)
    k_evap_r: float = 2.0e-4  # rain evaporation (1/s per unit subsaturation)
    k_evap_s: float = 1.0e-4  # snow sublimation
    k_eros: float = 1.0e-5  # cloud-edge erosion (1/s per unit subsaturation)
    tau_cloud: float = 3600.0  # cloud-cover formation time scale (s)
    k_cover: float = 1.0e-3  # cloud-cover decay per unit subsaturation (1/s)
    da_conv: float = 0.0  # convective detrainment of cover (stub, 1/s)

    @property
    def ls(self) -> float:
        return self.lv + self.lf

    @property
    def eps(self) -> float:
        return self.rd / self.rv


CONSTANTS = CloudConstants()


def _as2d(x, name: str) -> np.ndarray:
    a = np.array(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ContractError(f"{name} must be (ncol, klev)")
    return a


@dataclasses.dataclass(frozen=True, eq=False)
class ColumnState:
    """Profiles ordered top to bottom, each of shape (ncol, klev)."""

    T: np.ndarray
    qv: np.ndarray
    ql: np.ndarray
    qi: np.ndarray
    qr: np.ndarray
    qs: np.ndarray
    a: np.ndarray
    rho: np.ndarray
    dz: np.ndarray
    dt: float

    def __post_init__(self):
        names = ("T", "qv", "ql", "qi", "qr", "qs", "a", "rho", "dz")
        arrs = {n: _as2d(getattr(self, n), n) for n in names}
        shape = arrs["T"].shape
        for n, v in arrs.items():
            if v.shape != shape:
                raise ContractError(f"{n} has shape {v.shape}, expected {shape}")
            if not np.all(np.isfinite(v)):
                raise ContractError(f"{n} has non-finite entries")
            v.flags.writeable = False
            object.__setattr__(self, n, v)
        for n in ("qv", "ql", "qi", "qr", "qs"):
            if np.any(arrs[n] < 0):
                raise ContractError(f"{n} must be non-negative")
        if np.any(arrs["a"] < 0) or np.any(arrs["a"] > 1):
            raise ContractError("cloud fraction must lie in [0, 1]")
        if np.any(arrs["dz"] <= 0) or np.any(arrs["rho"] <= 0) or np.any(arrs["T"] <= 0):
            raise ContractError("dz, rho and T must be positive")
        if not self.dt > 0:
            raise ContractError("dt must be positive")

    @property
    def ncol(self) -> int:
        return self.T.shape[0]

    @property
    def klev(self) -> int:
        return self.T.shape[1]

    def q(self) -> np.ndarray:
        """Water categories stacked as (ncol, klev, 5)."""
        return np.stack([self.qv, self.ql, self.qi, self.qr, self.qs], axis=-1)

    def take(self, cols) -> "ColumnState":
        f = {n: getattr(self, n)[cols] for n in ("T", "qv", "ql", "qi", "qr", "qs", "a", "rho", "dz")}
        return ColumnState(dt=self.dt, **f)


@dataclasses.dataclass(frozen=True, eq=False)
class SourceMatrices:
    """Per-column matrices at one level; ``A[c, x, y]`` is the rate into x from y."""

    A: np.ndarray
    B: np.ndarray
    fall: np.ndarray
    # cloud-cover implicit update pieces, a' = (a + Aa)/(1 + Ba)
    Aa: np.ndarray
    Ba: np.ndarray


@dataclasses.dataclass(frozen=True, eq=False)
class ColumnTendencies:
    """Rates per level (ncol, klev); ``flux[c, k, x]`` is the downward mass flux
    (kg m^-2 s^-1) of category x through the top of level k, k = 0..klev."""

    dT: np.ndarray
    dqv: np.ndarray
    dql: np.ndarray
    dqi: np.ndarray
    dqr: np.ndarray
    dqs: np.ndarray
    da: np.ndarray
    flux: np.ndarray

    def dq(self) -> np.ndarray:
        return np.stack([self.dqv, self.dql, self.dqi, self.dqr, self.dqs], axis=-1)

    def as_array(self) -> np.ndarray:
        """All tendencies in column-major order for checksums, (ncol, 7*klev + 5*(klev+1))."""
        parts = [self.dT, self.dqv, self.dql, self.dqi, self.dqr, self.dqs, self.da, self.flux.reshape(self.flux.shape[0], -1)]
        return np.ascontiguousarray(np.concatenate(parts, axis=1))


# -- thermodynamics ---------------------------------------------------------


def saturation_pressure(T: np.ndarray, c: CloudConstants = CONSTANTS) -> tuple[np.ndarray, np.ndarray]:
    """Saturation vapour pressure (Pa) and d ln e / dT: water above t0, ice below."""
    T = np.asarray(T, dtype=np.float64)
    warm = T >= c.t0
    a3 = np.where(warm, c.r3les, c.r3ies)
    a4 = np.where(warm, c.r4les, c.r4ies)
    e = c.r2es * np.exp(a3 * (T - c.t0) / (T - a4))
    dlne = a3 * (c.t0 - a4) / (T - a4) ** 2
    return e, dlne


def saturation_mixing_ratio(T: np.ndarray, rho: np.ndarray, c: CloudConstants = CONSTANTS) -> tuple[np.ndarray, np.ndarray]:
    """q_sat and dq_sat/dT with pressure from the dry gas law p = rho R_d T."""
    p = rho * c.rd * T
    e, dlne = saturation_pressure(T, c)
    e = np.minimum(e, 0.5 * p)  # keep the denominator away from zero in hot, thin air
    den = p - (1.0 - c.eps) * e
    qs = c.eps * e / den
    dqs = qs * p / den * dlne
    return qs, dqs


# -- process rates ----------------------------------------------------------


def _check(name: str, x: np.ndarray) -> np.ndarray:
    if np.any(np.isnan(x)):
        raise ContractError(f"NaN in process rate '{name}'")
    return x


def _pair(A: np.ndarray, x: int, y: int, rate: np.ndarray) -> None:
    """Transfer ``rate`` (>= 0) from category y to x, keeping A antisymmetric."""
    A[:, x, y] += rate
    A[:, y, x] -= rate


def build_process_rates(state: ColumnState, k: int, inflow: np.ndarray | None = None, c: CloudConstants = CONSTANTS) -> SourceMatrices:
    """Source matrices at level ``k``.

    ``inflow`` is the sedimentation source from the level above in kg/kg/s,
    shape (ncol, 5); the top level (or ``None``) has zero inflow.
    """
    if not 0 <= k < state.klev:
        raise ContractError(f"level {k} outside 0..{state.klev - 1}")
    n = state.ncol
    dt = state.dt
    T = state.T[:, k]
    rho = state.rho[:, k]
    qv, ql, qi, qr, qs = (state.qv[:, k], state.ql[:, k], state.qi[:, k], state.qr[:, k], state.qs[:, k])
    a = state.a[:, k]
    inflow = np.zeros((n, NCAT)) if inflow is None else np.asarray(inflow, dtype=np.float64)
    A = np.zeros((n, NCAT, NCAT))
    B = np.zeros((n, NCAT, NCAT))
    for x in range(NCAT):
        A[:, x, x] = inflow[:, x]
    warm = T >= c.t0
    cold = ~warm
    zero = np.zeros(n)
    # precipitation available at this level includes what falls in from above
    qr_av = qr + dt * inflow[:, NR]
    qs_av = qs + dt * inflow[:, NS]
    qi_av = qi + dt * inflow[:, NI]

    qsat, dqsat = saturation_mixing_ratio(T, rho, c)
    qsat = _check("saturation", qsat)
    lat = np.where(warm, c.lv, c.ls)

    # condensation / evaporation: one Newton step of the saturation adjustment
    dq = _check("condensation", (qv - qsat) / (1.0 + lat / c.cp * dqsat))
    cond = np.where(dq > 0, dq, 0.0) / dt
    _pair(A, NL, NV, np.where(warm, cond, 0.0))
    _pair(A, NI, NV, np.where(cold, cond, 0.0))
    cld = ql + qi
    evap = np.minimum(np.where(dq < 0, -dq, 0.0), cld) / dt
    frac_l = np.divide(ql, cld, out=np.zeros(n), where=cld > 0)
    _pair(A, NV, NL, evap * frac_l)
    _pair(A, NV, NI, evap * (1.0 - frac_l) * (cld > 0))

    subsat = _check("subsaturation", np.maximum(0.0, 1.0 - qv / qsat))
    # erosion at cloud edges in subsaturated air
    eros = c.k_eros * a * subsat
    _pair(A, NV, NL, eros * ql)
    _pair(A, NV, NI, eros * qi)

    # deposition (liquid -> ice where both coexist below freezing)
    dep = np.where(cold & (qi > 0), c.k_dep * ql, zero)
    _pair(A, NI, NL, _check("deposition", dep))

    # autoconversion of liquid to rain (explicit, Sundqvist)
    auto = c.k_auto * ql * (1.0 - np.exp(-((ql / c.q_crit) ** 2)))
    _pair(A, NR, NL, _check("autoconversion", auto))

    # autoconversion of ice to snow (implicit)
    snow = np.where(qi_av > 0, c.k_snow * np.exp(c.snow_texp * (T - c.t0)), zero)
    B[:, NS, NI] = _check("snow autoconversion", snow)

    # riming of cloud liquid by falling snow (implicit)
    rime = np.where(cold & (ql > 0), c.k_rime * qs_av, zero)
    B[:, NS, NL] = _check("riming", rime)

    # melting of ice and snow into rain
    dtm = np.maximum(T - c.t0, 0.0)
    _pair(A, NR, NI, _check("melting", c.k_melt * dtm * qi))
    _pair(A, NR, NS, _check("melting", c.k_melt * dtm * qs))

    # freezing of rain into snow
    _pair(A, NS, NR, _check("rain freezing", c.k_frz * np.maximum(c.t0 - T, 0.0) * qr))

    # homogeneous freezing of cloud liquid
    _pair(A, NI, NL, _check("liquid freezing", np.where(T < c.t_hom, ql / dt, zero)))

    # rain evaporation and snow sublimation in the clear-sky part
    clear = 1.0 - a
    _pair(A, NV, NR, _check("rain evaporation", c.k_evap_r * clear * subsat * qr_av))
    _pair(A, NV, NS, _check("snow evaporation", c.k_evap_s * clear * subsat * qs_av))

    # cloud cover: formation where supersaturated, decay by erosion
    Aa = (1.0 - a) * np.where(dq > 0, -np.expm1(-dt / c.tau_cloud), 0.0)
    Aa = np.minimum(1.0 - a, Aa + dt * c.da_conv * (1.0 - a))
    Ba = dt * c.k_cover * subsat
    return SourceMatrices(A, B, np.asarray(c.fall, dtype=np.float64), _check("cloud cover", Aa), _check("cloud cover", Ba))


# -- positivity scaling -----------------------------------------------------


def _sink_totals(A: np.ndarray) -> np.ndarray:
    """Sum of explicit sinks per category (ncol, 5), accumulated in fixed order."""
    s = np.zeros(A.shape[:2])
    for x in range(NCAT):
        for y in range(NCAT):
            if y != x:
                s[:, x] += np.maximum(-A[:, x, y], 0.0)
    return s


def _source_totals(A: np.ndarray) -> np.ndarray:
    s = np.zeros(A.shape[:2])
    for x in range(NCAT):
        s[:, x] = A[:, x, x]
        for y in range(NCAT):
            if y != x:
                s[:, x] += np.maximum(A[:, x, y], 0.0)
    return s


def sink_factors(q: np.ndarray, A: np.ndarray, dt: float) -> np.ndarray:
    """Per category factor in (0, 1] bringing dt * sinks down to the available q."""
    sinks = dt * _sink_totals(A)
    over = sinks > q
    return np.where(over, np.divide(q, sinks, out=np.ones_like(q), where=over), 1.0)


def scale_sinks(q: np.ndarray, m: SourceMatrices, dt: float) -> tuple[SourceMatrices, np.ndarray]:
    """Scale explicit sink pairs by the factor of the category that loses mass.

    Returns the scaled matrices and the factors (ncol, 5). Both entries of a
    pair get the same factor, so antisymmetry survives.
    """
    f = sink_factors(q, m.A, dt)
    if np.all(f == 1.0):
        return m, f
    A = m.A.copy()
    for x in range(NCAT):
        for y in range(NCAT):
            if y == x:
                continue
            lose = A[:, x, y] < 0
            fx = np.where(lose, f[:, x], 1.0)
            A[:, x, y] *= fx
            A[:, y, x] *= fx
    return dataclasses.replace(m, A=A), f


# -- level solve ------------------------------------------------------------


def lu_solve_nopivot(M: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched Doolittle LU without pivoting, then forward/back substitution."""
    M = np.array(M, dtype=np.float64)
    x = np.array(b, dtype=np.float64)
    n = M.shape[-1]
    for j in range(n):
        piv = M[:, j, j]
        if np.any(piv == 0) or not np.all(np.isfinite(piv)):
            raise ContractError("zero pivot in level solve")
        for i in range(j + 1, n):
            l = M[:, i, j] / piv
            M[:, i, j] = l
            for kk in range(j + 1, n):
                M[:, i, kk] -= l * M[:, j, kk]
    for i in range(n):
        for j in range(i):
            x[:, i] -= M[:, i, j] * x[:, j]
    for i in range(n - 1, -1, -1):
        for j in range(i + 1, n):
            x[:, i] -= M[:, i, j] * x[:, j]
        x[:, i] /= M[:, i, i]
    return x


def level_system(q: np.ndarray, m: SourceMatrices, dz: np.ndarray, dt: float, factors: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Left-hand matrix (ncol, 5, 5) and right-hand side (ncol, 5)."""
    n = q.shape[0]
    M = np.zeros((n, NCAT, NCAT))
    for x in range(NCAT):
        d = 1.0 + dt * (m.fall[x] / dz)
        for y in range(NCAT):
            if y != x:
                d = d + dt * m.B[:, y, x]
                M[:, x, y] = -dt * m.B[:, x, y]
        M[:, x, x] = d
    sinks = dt * _sink_totals(m.A)
    sources = dt * _source_totals(m.A)
    # q - dt*sinks >= 0 exactly once sinks are scaled; a fully consumed
    # category keeps only its sources so it lands on zero, not on -ulp
    if factors is None:
        factors = np.ones_like(q)
    base = np.where(factors < 1.0, 0.0, q - sinks)
    return M, base + sources


def solve_level(q: np.ndarray, m: SourceMatrices, dz: np.ndarray, dt: float, factors: np.ndarray | None = None) -> np.ndarray:
    M, rhs = level_system(q, m, dz, dt, factors)
    return lu_solve_nopivot(M, rhs)


# -- column driver ----------------------------------------------------------


def _latent_levels(c: CloudConstants) -> np.ndarray:
    # heat content relative to ice; moving mass from y to x releases E[y] - E[x]
    return np.array([c.ls, c.lf, 0.0, c.lf, 0.0])


def transfer_heating(A: np.ndarray, B: np.ndarray, qn1: np.ndarray, dt: float, c: CloudConstants = CONSTANTS) -> np.ndarray:
    """c_p dT over one step from the phase transfers of the solved level."""
    E = _latent_levels(c)
    h = np.zeros(qn1.shape[0])
    for x in range(NCAT):
        for y in range(x + 1, NCAT):
            if E[x] == E[y]:
                continue
            t = dt * (A[:, x, y] + B[:, x, y] * qn1[:, y] - B[:, y, x] * qn1[:, x])
            h += t * (E[y] - E[x])
    return h


def cloud_column_step(state: ColumnState, c: CloudConstants = CONSTANTS, ncldtop: int = 0) -> ColumnTendencies:
    """One step over all columns, levels top to bottom."""
    n, klev, dt = state.ncol, state.klev, state.dt
    qn = state.q()
    qn1 = qn.copy()
    a1 = state.a.copy()
    dT = np.zeros((n, klev))
    flux = np.zeros((n, klev + 1, NCAT))
    fall = np.asarray(c.fall, dtype=np.float64)
    for k in range(ncldtop, klev):
        rho, dz = state.rho[:, k], state.dz[:, k]
        inflow = flux[:, k, :] / (rho * dz)[:, None]
        m = build_process_rates(state, k, inflow, c)
        a1[:, k] = (state.a[:, k] + m.Aa) / (1.0 + m.Ba)
        m, f = scale_sinks(qn[:, k, :], m, dt)
        q = solve_level(qn[:, k, :], m, dz, dt, f)
        qn1[:, k, :] = q
        flux[:, k + 1, :] = rho[:, None] * fall[None, :] * q
        dT[:, k] = transfer_heating(m.A, m.B, q, dt, c) / (c.cp * dt)
    if np.any(qn1 < 0) or np.any(a1 < 0) or np.any(a1 > 1):
        raise ContractError("cloud step produced negative water or cover outside [0, 1]")
    d = (qn1 - qn) / dt
    return ColumnTendencies(dT, d[..., NV], d[..., NL], d[..., NI], d[..., NR], d[..., NS], (a1 - state.a) / dt, flux)


# -- audits -----------------------------------------------------------------


def sedimentation_divergence(state: ColumnState, tend: ColumnTendencies) -> np.ndarray:
    """(flux in - flux out)/(rho dz) per category, shape (ncol, klev, 5)."""
    f = tend.flux
    return (f[:, :-1, :] - f[:, 1:, :]) / (state.rho * state.dz)[..., None]


def _budget_scale(state: ColumnState, tend: ColumnTendencies) -> np.ndarray:
    """Size of the budget terms at each level: content plus gross fluxes, per second."""
    f = tend.flux
    through = (f[:, :-1, :] + f[:, 1:, :]).sum(axis=-1) / (state.rho * state.dz)
    return np.maximum(state.q().sum(axis=-1) / state.dt + through, 1e-300)


def water_residual(state: ColumnState, tend: ColumnTendencies) -> np.ndarray:
    """Relative per-level mismatch of total-water change versus flux divergence."""
    dq = tend.dq()
    sed = sedimentation_divergence(state, tend)
    lhs = dq.sum(axis=-1)
    rhs = sed.sum(axis=-1)
    return np.abs(lhs - rhs) / _budget_scale(state, tend)


def energy_residual(state: ColumnState, tend: ColumnTendencies, c: CloudConstants = CONSTANTS) -> np.ndarray:
    """Relative mismatch of c_p dT/dt against latent heating implied by the state change."""
    sed = sedimentation_divergence(state, tend)
    cond = -tend.dqv  # vapour has no sedimentation or external source
    frz = tend.dqi + tend.dqs - sed[..., NI] - sed[..., NS]
    expect = c.lv * cond + c.lf * frz
    return np.abs(c.cp * tend.dT - expect) / (c.ls * _budget_scale(state, tend))


# -- synthetic input and benchmark ------------------------------------------


def synthetic_columns(ncol: int = 100, klev: int = 137, seed: int = 0, dt: float = 900.0) -> ColumnState:
    """Seeded tropical-like profiles with a mixed-phase cloud layer."""
    rng = np.random.default_rng(seed)
    g, H = 9.80665, 7500.0
    ztop = 20000.0
    eta = (np.arange(klev) + 0.5) / klev
    z = ztop * (1.0 - eta) ** 1.5  # finer spacing near the surface
    zi = ztop * (1.0 - np.arange(klev + 1) / klev) ** 1.5
    dz = zi[:-1] - zi[1:]
    tsfc = 295.0 + 8.0 * rng.random((ncol, 1))
    lapse = 6.5e-3 * (0.9 + 0.2 * rng.random((ncol, 1)))
    T = np.maximum(tsfc - lapse * z[None, :], 200.0 + 5.0 * rng.random((ncol, 1)))
    p = 1.0e5 * np.exp(-z / H)[None, :] * np.ones((ncol, 1))
    rho = p / (CONSTANTS.rd * T)
    qsat, _ = saturation_mixing_ratio(T, rho)
    rh = 0.5 + 0.45 * np.exp(-(((z[None, :] - 5000.0 * (1 + rng.random((ncol, 1)))) / 2500.0) ** 2))
    rh = rh + 0.1 * (rng.random((ncol, 1)) - 0.3)
    qv = rh * qsat
    layer = np.exp(-(((z[None, :] - (3000.0 + 6000.0 * rng.random((ncol, 1)))) / 1500.0) ** 2))
    cw = 5e-4 * rng.random((ncol, 1)) * layer
    ice = np.clip((CONSTANTS.t0 - T) / 20.0, 0.0, 1.0)
    ql = cw * (1.0 - ice)
    qi = cw * ice
    qr = 1e-4 * rng.random((ncol, 1)) * layer * (1.0 - ice)
    qs = 1e-4 * rng.random((ncol, 1)) * layer * ice
    a = np.clip(layer * rng.random((ncol, 1)), 0.0, 1.0)
    return ColumnState(T, qv, ql, qi, qr, qs, a, rho, np.broadcast_to(dz, (ncol, klev)), dt)


def random_columns(ncol: int, klev: int, rng: np.random.Generator) -> ColumnState:
    """Fuzz states: wide temperature range, sparse and dense condensate, any dt."""

    def sparse(scale):
        v = scale * rng.random((ncol, klev)) ** 3
        return np.where(rng.random((ncol, klev)) < 0.3, 0.0, v)

    T = rng.uniform(190.0, 315.0, (ncol, klev))
    rho = rng.uniform(0.05, 1.3, (ncol, klev))
    qsat, _ = saturation_mixing_ratio(T, rho)
    qv = qsat * rng.uniform(0.0, 1.3, (ncol, klev))
    dz = rng.uniform(20.0, 800.0, (ncol, klev))
    a = np.where(rng.random((ncol, klev)) < 0.1, rng.integers(0, 2, (ncol, klev)).astype(float), rng.random((ncol, klev)))
    dt = float(rng.uniform(10.0, 3600.0))
    return ColumnState(T, qv, sparse(2e-3), sparse(1e-3), sparse(2e-3), sparse(2e-3), a, rho, dz, dt)


def tendency_checksum(t: ColumnTendencies) -> str:
    return hashlib.sha256(t.as_array().tobytes()).hexdigest()


@dataclasses.dataclass
class CloudBenchRow:
    nproma: int
    seconds: float
    checksum: str


def _inflate(base: ColumnState, ngptot: int) -> ColumnState:
    return base.take(np.arange(ngptot) % base.ncol)


def run_blocks(state: ColumnState, nproma: int, threads: int = 1, c: CloudConstants = CONSTANTS) -> ColumnTendencies:
    """Process columns in blocks of ``nproma``; output is assembled in column order."""
    if nproma < 1 or threads < 1:
        raise ContractError("nproma and threads must be >= 1")
    starts = range(0, state.ncol, nproma)
    blocks = [state.take(slice(s, s + nproma)) for s in starts]
    if threads == 1:
        out = [cloud_column_step(b, c) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            out = list(ex.map(lambda b: cloud_column_step(b, c), blocks))
    fields = [f.name for f in dataclasses.fields(ColumnTendencies)]
    return ColumnTendencies(**{n: np.concatenate([getattr(t, n) for t in out], axis=0) for n in fields})


def cloudsc_bench(ngptot: int = 100, klev: int = 137, nproma_list=(1, 10, 100), threads: int = 1, seed: int = 0) -> list[CloudBenchRow]:
    """Inflate 100 base columns to ``ngptot`` and time each block size."""
    if ngptot < 1:
        raise ContractError("ngptot must be >= 1")
    state = _inflate(synthetic_columns(100, klev, seed), ngptot)
    rows = []
    for nproma in nproma_list:
        t0 = time.perf_counter()
        tend = run_blocks(state, int(nproma), threads)
        rows.append(CloudBenchRow(int(nproma), time.perf_counter() - t0, tendency_checksum(tend)))
    return rows
