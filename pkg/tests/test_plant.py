import numpy as np
import pytest

from lifeloop import plant as pl
from lifeloop.constants import M_O2, R_GAS, T_ZERO

from conftest import nominal_d, nominal_u


def test_rk4_generic_zero_rhs_is_identity():
    y = np.array([1.0, -2.0, 3.5])
    assert np.array_equal(pl.rk4_generic(lambda v: np.zeros_like(v), y, 0.7), y)


def test_rk4_generic_exponential():
    # one step of y' = -y is the degree-4 Taylor polynomial of exp(-h)
    h = 0.1
    y1 = pl.rk4_generic(lambda v: -v, np.array([1.0]), h)[0]
    assert y1 == pytest.approx(1 - h + h**2 / 2 - h**3 / 6 + h**4 / 24, rel=1e-15)


def test_initial_state_fill(x0):
    n = x0[pl.I_NO2] + x0[pl.I_NCO2] + x0[pl.I_NH2O] + x0[pl.I_NN2]
    assert n == pytest.approx(4.0, rel=1e-15)
    assert x0[pl.I_XO2] == pytest.approx(0.21, rel=1e-15)
    assert x0[pl.I_MTANK] == 3.0
    assert np.all(x0[pl.NX:] == 0.0)


def test_initial_state_obeys_ideal_gas(x0, params):
    g = pl.derived(x0, nominal_u(), nominal_d(), params)
    V = (params[pl.P_VRIGID] + x0[pl.I_VCL]) * 1e-3
    T = x0[pl.I_TBZ] + T_ZERO
    assert g["P_s"] * V == pytest.approx(g["n_total"] * R_GAS * T, rel=1e-12)


def test_counterlung_tracks_molar_change(x0, params):
    # isothermal, no breathing: dV_CL/dt equals RT/P times dn/dt
    dx = pl.plant_rhs(x0, nominal_u(), nominal_d(), params)
    g = pl.derived(x0, nominal_u(), nominal_d(), params)
    dn = dx[pl.I_NO2] + dx[pl.I_NCO2] + dx[pl.I_NH2O] + dx[pl.I_NN2]
    T = x0[pl.I_TBZ] + T_ZERO
    expect = R_GAS * T / g["P_s"] * dn * 1000.0 + (params[pl.P_VRIGID] + x0[pl.I_VCL]) / T * dx[pl.I_TBZ]
    assert dx[pl.I_VCL] == pytest.approx(expect, rel=1e-12)


def test_injection_reaches_o2_inventory(x0, params):
    u0, u1 = nominal_u(), nominal_u()
    u1[pl.U_MDOT] += 0.05
    d0 = pl.plant_rhs(x0, u0, nominal_d(), params)
    d1 = pl.plant_rhs(x0, u1, nominal_d(), params)
    assert d1[pl.I_NO2] - d0[pl.I_NO2] == pytest.approx(0.05 / M_O2, rel=1e-9)
    assert d1[pl.I_MTANK] - d0[pl.I_MTANK] == pytest.approx(-0.05e-3, rel=1e-9)


def test_no_injection_from_empty_tank(x0, params):
    x = x0.copy()
    x[pl.I_MTANK] = 0.0
    dx = pl.plant_rhs(x, nominal_u(), nominal_d(), params)
    assert dx[pl.I_MTANK] == 0.0
    assert dx[pl.NX + 0] == 0.0


def test_scrub_stoichiometry(x0, params):
    x = x0.copy()
    x[pl.I_NCO2] = 0.02
    dx = pl.plant_rhs(x, nominal_u(), nominal_d(), params)
    r = pl.derived(x, nominal_u(), nominal_d(), params)["r_scrub"]
    assert r > 0
    assert dx[pl.I_MCAOH2] == pytest.approx(-r * 74.09e-3, rel=1e-3)


def test_rk4_step_advances_audits(x0, params):
    y = pl.rk4_step(x0, nominal_u(), nominal_d(), 1.0, params)
    assert y.shape == (pl.NXA,)
    assert y[pl.NX + 1] > 0  # consumed O2
    assert y[pl.I_XO2] == pytest.approx(y[pl.I_NO2] / y[:4].sum(), rel=1e-14)


def test_nonfinite_input_faults(x0, params):
    x = x0.copy()
    x[pl.I_TBZ] = np.nan
    with pytest.raises(pl.PlantFault):
        pl.plant_rhs(x, nominal_u(), nominal_d(), params)
    with pytest.raises(pl.PlantFault):
        pl.rk4_step(x, nominal_u(), nominal_d(), 1.0, params)


def test_rk4_step_rejects_bad_dt(x0, params):
    with pytest.raises(ValueError):
        pl.rk4_step(x0, nominal_u(), nominal_d(), 0.0, params)


def test_continuous_jacobian_matches_central_difference(x0, params):
    u, d = nominal_u(), nominal_d()
    A, B, f0 = pl._cont_jac(x0, u, d, params, 1e-6, 1e-6)
    for j in (pl.I_NCO2, pl.I_TBED, pl.I_WHAT):
        h = 1e-5 * max(abs(x0[j]), 1.0)
        xp, xm = x0.copy(), x0.copy()
        xp[j] += h
        xm[j] -= h
        col = (pl._rhs(xp, u, d, params) - pl._rhs(xm, u, d, params))[:pl.NX] / (2 * h)
        assert np.linalg.norm(A[:, j] - col) <= 1e-4 * max(np.linalg.norm(col), 1e-12)
    assert np.allclose(f0[:pl.NX], pl.plant_rhs(x0, u, d, params)[:pl.NX])


def test_fan_flow_monotone(params):
    q = [pl.fan_flow(w, 0.0, params) for w in (0.0, 0.5, 1.0)]
    assert q[0] <= q[1] <= q[2]
    assert pl.fan_flow(1.0, 0.9, params) <= q[2]
