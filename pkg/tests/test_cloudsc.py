import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nwp_dwarfs import cloudsc as cs
from nwp_dwarfs.cloudsc import CONSTANTS as C, NI, NL, NR, NS, NV
from nwp_dwarfs.grids import ContractError


def one_level(T, qv, ql=0.0, qi=0.0, qr=0.0, qs=0.0, a=0.0, rho=1.0, dz=100.0, dt=600.0):
    f = lambda v: np.array([[v]], dtype=float)
    return cs.ColumnState(f(T), f(qv), f(ql), f(qi), f(qr), f(qs), f(a), f(rho), f(dz), dt)


def qsat_scalar(T, rho):
    warm = T >= C.t0
    a3, a4 = (C.r3les, C.r4les) if warm else (C.r3ies, C.r4ies)
    p = rho * C.rd * T
    e = min(C.r2es * math.exp(a3 * (T - C.t0) / (T - a4)), 0.5 * p)
    den = p - (1 - C.eps) * e
    qs = C.eps * e / den
    return qs, qs * p / den * a3 * (C.t0 - a4) / (T - a4) ** 2


def reference_rates(T, qv, ql, qi, qr, qs, a, rho, dt):
    """Scalar re-evaluation of every process, as a dict keyed by (into, from)."""
    A = {}

    def add(x, y, r):
        A[(x, y)] = A.get((x, y), 0.0) + r
        A[(y, x)] = A.get((y, x), 0.0) - r

    qsat, dqsat = qsat_scalar(T, rho)
    warm = T >= C.t0
    lat = C.lv if warm else C.lv + C.lf
    dq = (qv - qsat) / (1 + lat / C.cp * dqsat)
    if dq > 0:
        add(NL if warm else NI, NV, dq / dt)
    cld = ql + qi
    if dq < 0 and cld > 0:
        e = min(-dq, cld) / dt
        add(NV, NL, e * ql / cld)
        add(NV, NI, e * (1 - ql / cld))
    sub = max(0.0, 1 - qv / qsat)
    add(NV, NL, C.k_eros * a * sub * ql)
    add(NV, NI, C.k_eros * a * sub * qi)
    if not warm and qi > 0:
        add(NI, NL, C.k_dep * ql)
    add(NR, NL, C.k_auto * ql * (1 - math.exp(-((ql / C.q_crit) ** 2))))
    add(NR, NI, C.k_melt * max(T - C.t0, 0) * qi)
    add(NR, NS, C.k_melt * max(T - C.t0, 0) * qs)
    add(NS, NR, C.k_frz * max(C.t0 - T, 0) * qr)
    if T < C.t_hom:
        add(NI, NL, ql / dt)
    add(NV, NR, C.k_evap_r * (1 - a) * sub * qr)
    add(NV, NS, C.k_evap_s * (1 - a) * sub * qs)
    B = {}
    if qi > 0:
        B[(NS, NI)] = C.k_snow * math.exp(C.snow_texp * (T - C.t0))
    if not warm and ql > 0:
        B[(NS, NL)] = C.k_rime * qs
    return A, B


# -- rates ------------------------------------------------------------------


def test_nothing_to_convert_gives_zero_matrices():
    T, rho = 280.0, 1.0
    qsat, _ = cs.saturation_mixing_ratio(np.array([T]), np.array([rho]))
    m = cs.build_process_rates(one_level(T, 0.5 * qsat[0], rho=rho), 0)
    assert np.all(m.A == 0) and np.all(m.B == 0)


def test_rain_freezing_pairs():
    m = cs.build_process_rates(one_level(250.0, 0.0, qr=1e-3), 0)
    assert m.A[0, NS, NR] > 0
    assert m.A[0, NR, NS] == -m.A[0, NS, NR]


@pytest.mark.parametrize(
    "prof",
    [
        dict(T=285.0, qv=1.2e-2, ql=8e-4, qi=0.0, qr=2e-4, qs=0.0, a=0.6, rho=1.1),
        dict(T=262.0, qv=1.0e-3, ql=1e-4, qi=3e-4, qr=5e-5, qs=2e-4, a=0.3, rho=0.7),
        dict(T=276.0, qv=2.0e-3, ql=0.0, qi=1e-4, qr=1e-4, qs=3e-4, a=0.2, rho=0.9),
        dict(T=230.0, qv=5.0e-5, ql=2e-5, qi=1e-5, qr=0.0, qs=1e-5, a=0.9, rho=0.3),
    ],
)
def test_rates_match_scalar_reference(prof):
    dt = 600.0
    m = cs.build_process_rates(one_level(dt=dt, **prof), 0)
    A, B = reference_rates(dt=dt, **prof)
    for x in range(5):
        for y in range(5):
            if x != y:
                ref = A.get((x, y), 0.0)
                assert m.A[0, x, y] == pytest.approx(ref, rel=1e-13, abs=1e-30)
                assert m.B[0, x, y] == pytest.approx(B.get((x, y), 0.0), rel=1e-13, abs=1e-30)


def test_nan_rate_names_process():
    bad = dataclasses.replace(C, k_auto=float("nan"))
    with pytest.raises(ContractError, match="autoconversion"):
        cs.build_process_rates(one_level(285.0, 1e-2, ql=1e-3), 0, c=bad)


def test_level_out_of_range():
    with pytest.raises(ContractError):
        cs.build_process_rates(one_level(285.0, 1e-2), 3)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matrix_structure(seed):
    s = cs.random_columns(20, 4, np.random.default_rng(seed))
    for k in range(4):
        m = cs.build_process_rates(s, k)
        off = ~np.eye(5, dtype=bool)
        assert np.all((m.A + m.A.transpose(0, 2, 1))[:, off] == 0)
        assert np.all(m.B >= 0)
        assert np.all(np.diagonal(m.B, axis1=1, axis2=2) == 0)


# -- sink scaling -----------------------------------------------------------


def _matrices(A, B=None):
    A = np.asarray(A, dtype=float)[None]
    B = np.zeros_like(A) if B is None else np.asarray(B, dtype=float)[None]
    return cs.SourceMatrices(A, B, np.zeros(5), np.zeros(1), np.zeros(1))


def test_no_overshoot_is_unchanged():
    A = np.zeros((5, 5))
    A[NR, NL], A[NL, NR] = 1e-7, -1e-7
    m = _matrices(A)
    q = np.array([[1e-3, 1e-3, 0, 0, 0]])
    m2, f = cs.scale_sinks(q, m, 600.0)
    assert m2 is m and np.all(f == 1.0)


def test_single_sink_halved_and_emptied():
    dt, ql = 600.0, 1e-3
    A = np.zeros((5, 5))
    r = 2 * ql / dt
    A[NR, NL], A[NL, NR] = r, -r
    m, f = cs.scale_sinks(np.array([[0, ql, 0, 0, 0]]), _matrices(A), dt)
    assert f[0, NL] == pytest.approx(0.5, rel=1e-15)
    q1 = cs.solve_level(np.array([[0, ql, 0, 0, 0]]), m, np.array([100.0]), dt, f)
    assert q1[0, NL] == 0.0
    assert q1[0, NR] == pytest.approx(ql, rel=1e-15)


def test_multiple_sinks_share_factor_and_stay_paired():
    dt = 100.0
    A = np.zeros((5, 5))
    for y, r in ((NR, 3e-5), (NV, 1e-5), (NI, 2e-5)):
        A[y, NL], A[NL, y] = r, -r
    A[NS, NR], A[NR, NS] = 1e-9, -1e-9
    q = np.array([[1e-3, 1e-3, 1e-3, 1e-3, 1e-3]])
    m, f = cs.scale_sinks(q, _matrices(A), dt)
    ratio = m.A[0, [NR, NV, NI], NL] / A[[NR, NV, NI], NL]
    assert np.all(ratio == f[0, NL]) and f[0, NL] < 1
    assert f[0, NL] * dt * 6e-5 == pytest.approx(1e-3, rel=1e-14)
    off = ~np.eye(5, dtype=bool)
    assert np.all((m.A[0] + m.A[0].T)[off] == 0)
    assert m.A[0, NS, NR] == A[NS, NR]


# -- level solve ------------------------------------------------------------


def test_identity_system_solve():
    rng = np.random.default_rng(3)
    A = np.zeros((5, 5))
    A[NR, NL], A[NL, NR] = 1e-7, -1e-7
    A[NS, NS] = 2e-8
    q = rng.uniform(1e-4, 1e-3, (1, 5))
    dt = 300.0
    q1 = cs.solve_level(q, _matrices(A), np.array([50.0]), dt)
    expect = q[0] + dt * A.sum(axis=1)
    # the two-part accumulation (q - dt*sinks) + dt*sources is exact here
    assert np.allclose(q1[0], expect, rtol=1e-15, atol=0)


@pytest.mark.parametrize("seed", range(10))
def test_level_solve_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    B = rng.uniform(0, 1e-3, (5, 5)) * (rng.random((5, 5)) < 0.6)
    np.fill_diagonal(B, 0)
    A = rng.uniform(0, 1e-7, (5, 5))
    A = np.triu(A, 1) - np.triu(A, 1).T
    q = rng.uniform(1e-4, 1e-2, (1, 5))
    m = dataclasses.replace(_matrices(A, B), fall=np.array(C.fall))
    dz, dt = np.array([rng.uniform(20, 500)]), rng.uniform(10, 3600)
    M, rhs = cs.level_system(q, m, dz, dt)
    ref = np.linalg.solve(M[0], rhs[0])
    got = cs.solve_level(q, m, dz, dt)[0]
    assert np.max(np.abs(got - ref) / np.abs(ref)) < 1e-12


def test_zero_pivot_raises():
    M = np.zeros((1, 5, 5))
    with pytest.raises(ContractError, match="pivot"):
        cs.lu_solve_nopivot(M, np.zeros((1, 5)))


def _inert():
    return dataclasses.replace(
        C, k_auto=0.0, k_snow=0.0, k_rime=0.0, k_dep=0.0, k_melt=0.0, k_frz=0.0, k_evap_r=0.0, k_evap_s=0.0, k_eros=0.0
    )


def test_pure_sedimentation_telescopes():
    klev = 30
    rng = np.random.default_rng(5)
    ones = np.ones((1, klev))
    T = 280.0 * ones
    rho = rng.uniform(0.4, 1.2, (1, klev))
    qsat, _ = cs.saturation_mixing_ratio(T, rho)
    s = cs.ColumnState(T, qsat, 0 * ones, rng.uniform(0, 1e-4, (1, klev)), rng.uniform(0, 1e-3, (1, klev)), rng.uniform(0, 1e-3, (1, klev)), 0 * ones, rho, rng.uniform(50, 400, (1, klev)), 900.0)
    t = cs.cloud_column_step(s, _inert())
    col = np.sum(s.rho * s.dz * t.dq().sum(axis=-1))
    surf = t.flux[0, -1].sum()
    assert abs(col + surf) <= 1e-12 * surf


# -- column step ------------------------------------------------------------


def test_saturated_equilibrium_has_zero_tendencies():
    klev = 10
    ones = np.ones((1, klev))
    T = np.linspace(230.0, 300.0, klev)[None, :]
    rho = np.linspace(0.3, 1.2, klev)[None, :]
    qsat, _ = cs.saturation_mixing_ratio(T, rho)
    s = cs.ColumnState(T, qsat, 0 * ones, 0 * ones, 0 * ones, 0 * ones, 0 * ones, rho, 200 * ones, 600.0)
    t = cs.cloud_column_step(s)
    assert np.all(np.abs(t.as_array()) <= 1e-14)


def test_warm_rain_converts_liquid():
    klev = 5
    ones = np.ones((1, klev))
    T = 290.0 * ones
    rho = 1.1 * ones
    qsat, _ = cs.saturation_mixing_ratio(T, rho)
    s = cs.ColumnState(T, qsat, 1e-3 * ones, 0 * ones, 0 * ones, 0 * ones, 1.0 * ones, rho, 200 * ones, 600.0)
    t = cs.cloud_column_step(s)
    assert np.all(t.dql < 0) and np.all(t.dqr[:, 0] > 0)
    assert cs.water_residual(s, t).max() < 1e-11


def test_snow_aloft_surface_flux_matches_column_loss():
    klev = 40
    ones = np.ones((1, klev))
    T = 265.0 * ones
    qs = np.where(np.arange(klev) < 8, 5e-4, 0.0)[None, :]
    s = cs.ColumnState(T, 0 * ones, 0 * ones, 0 * ones, 0 * ones, qs, 0 * ones, 0.8 * ones, 150 * ones, 300.0)
    t = cs.cloud_column_step(s)
    loss = -np.sum(s.rho * s.dz * t.dq().sum(axis=-1))
    surf = t.flux[0, -1].sum()
    assert surf > 0
    # relative to the column snow load per step, which is what the solve moves
    load = np.sum(s.rho * s.dz * s.qs) / s.dt
    assert abs(loss - surf) <= 1e-12 * load


def test_fuzzed_columns_invariants():
    rng = np.random.default_rng(2024)
    s = cs.random_columns(1000, 30, rng)
    t = cs.cloud_column_step(s)
    q1 = s.q() + s.dt * t.dq()
    assert np.all(q1 >= -1e-18)
    a1 = s.a + s.dt * t.da
    assert np.all(a1 >= -1e-15) and np.all(a1 <= 1 + 1e-15)
    assert cs.water_residual(s, t).max() < 1e-11
    assert cs.energy_residual(s, t).max() < 1e-11


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_positivity_property(seed):
    s = cs.random_columns(8, 12, np.random.default_rng(seed))
    t = cs.cloud_column_step(s)  # raises internally on any breach
    assert cs.water_residual(s, t).max() < 1e-11


def test_column_permutation_is_bit_exact():
    s = cs.random_columns(50, 10, np.random.default_rng(9))
    perm = np.random.default_rng(1).permutation(50)
    a = cs.cloud_column_step(s).as_array()
    b = cs.cloud_column_step(s.take(perm)).as_array()
    assert np.array_equal(a[perm], b)


def test_state_validation():
    with pytest.raises(ContractError):
        one_level(280.0, -1e-3)
    with pytest.raises(ContractError):
        one_level(280.0, 1e-3, a=1.5)
    with pytest.raises(ContractError):
        one_level(280.0, 1e-3, dt=0.0)


# -- bench ------------------------------------------------------------------


def test_checksum_independent_of_blocking():
    rows = cs.cloudsc_bench(ngptot=100, klev=20, nproma_list=(1, 10, 100), threads=1)
    assert len({r.checksum for r in rows}) == 1


def test_checksum_independent_of_threads():
    a = cs.cloudsc_bench(ngptot=120, klev=20, nproma_list=(7,), threads=1)[0]
    b = cs.cloudsc_bench(ngptot=120, klev=20, nproma_list=(7,), threads=4)[0]
    assert a.checksum == b.checksum


def test_inflation_replicates_base_columns():
    base = cs.synthetic_columns(100, 8)
    big = cs._inflate(base, 250)
    assert np.array_equal(big.T[130], base.T[30])
