import math

import pytest
from hypothesis import given, strategies as st

from lifeloop import chem


def test_reaction_enthalpy_tabulated():
    assert chem.reaction_enthalpy() == pytest.approx(-113.1, abs=0.05)


def test_reaction_enthalpy_zero_table():
    assert chem.reaction_enthalpy(chem.ThermoTable(0.0, 0.0, 0.0, 0.0)) == 0.0


def test_reaction_enthalpy_without_water_term():
    # Hess's law by hand with the water formation enthalpy removed
    t = chem.ThermoTable(h2o_l=0.0)
    expected = t.caco3_s - (t.caoh2_s + t.co2_g)
    assert chem.reaction_enthalpy(t) == pytest.approx(expected)
    assert expected == pytest.approx(-1206.9 + 986.1 + 393.5)


def test_scrub_capacity_reference_canister():
    assert chem.scrub_capacity(1.0, 0.82, 0.77) == pytest.approx(375.0, abs=0.5)


def test_scrub_capacity_linear_in_mass():
    assert chem.scrub_capacity(0.0, 0.82, 0.77) == 0.0
    assert chem.scrub_capacity(2.0, 0.82, 0.77) == pytest.approx(750.2, abs=0.1)


def test_scrub_capacity_rejects_bad_fractions():
    with pytest.raises(ValueError):
        chem.scrub_capacity(1.0, 1.2, 0.77)
    with pytest.raises(ValueError):
        chem.scrub_capacity(-1.0, 0.8, 0.77)


def test_scrub_rate_zero_cases():
    assert chem.scrub_rate(400.0, 400.0, 1.0, 2.3e-6, 0.0) == 0.0
    assert chem.scrub_rate(500.0, 0.0, 0.0, 2.3e-6, 0.0) == 0.0


def test_scrub_rate_direct_product():
    assert chem.scrub_rate(500.0, 0.0, 1.0, 2.3e-6, 0.0) == pytest.approx(1.15e-3, rel=1e-12)


def test_effectiveness_shrinking_core():
    assert chem.effectiveness(0.0) == 1.0
    assert chem.effectiveness(1.0) == 0.0
    assert chem.effectiveness(0.5) == pytest.approx(0.5 ** 1.5, rel=1e-12)
    assert chem.effectiveness(0.5) == pytest.approx(0.3536, abs=1e-4)


def test_gab_loading():
    p = chem.DesiccantParams(q_m=0.10, C_G=40.0, K_G=0.85)
    assert chem.gab_loading(0.0, p) == 0.0
    assert chem.gab_loading(0.8, p) == pytest.approx(0.309, abs=5e-4)
    # independent evaluation of q_m C K a / ((1 - K a)(1 - K a + C K a))
    ka = 0.85 * 0.4
    oracle = 0.10 * 40.0 * ka / ((1 - ka) * (1 - ka + 40.0 * ka))
    assert chem.gab_loading(0.4, p) == pytest.approx(oracle, rel=1e-12)
    assert oracle == pytest.approx(0.1445, abs=1e-4)


def test_gab_rejects_activity_at_pole():
    with pytest.raises(ValueError):
        chem.gab_loading(1.0 / 0.85)


def test_ldf_rate():
    assert chem.ldf_rate(0.3, 0.3, 0.01) == 0.0
    assert chem.ldf_rate(0.0, 0.3, 0.01) == pytest.approx(3.0e-3)
    assert chem.ldf_rate(0.35, 0.30, 0.01) == pytest.approx(-5.0e-4)


def test_ergun():
    assert chem.ergun_dp_per_length(1.8e-5, 0.4, 3e-3, 0.0, 1.1) == 0.0
    assert chem.viscous_ratio(0.33, 0.40) == pytest.approx(2.2, abs=0.1)
    assert chem.viscous_ratio(0.166, 0.40) == pytest.approx(27.0, abs=1.0)
    with pytest.raises(ValueError):
        chem.ergun_dp_per_length(1.8e-5, 0.0, 3e-3, 0.1, 1.1)


@pytest.mark.parametrize("chi, sigma", [(0.0, 1.12), (0.5, 1.39), (1.0, 1.66)])
def test_swelling_ratio_table(chi, sigma):
    assert chem.swelling_ratio(chi) == pytest.approx(sigma, abs=0.005)


def test_void_fraction():
    assert chem.void_fraction(1.0, 0.40, 1.12) == pytest.approx(0.328, abs=0.005)
    assert chem.void_fraction(1.0, 0.40, 1.39) == pytest.approx(0.166, abs=0.005)
    assert chem.void_fraction(0.0, 0.40, 1.5) == pytest.approx(0.40)
    assert chem.void_fraction(1.0, 0.40, 1.66) <= 0.005


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(1.0, 1.7))
def test_void_fraction_non_increasing(a, b, sigma):
    lo, hi = sorted((a, b))
    assert chem.void_fraction(hi, 0.4, sigma) <= chem.void_fraction(lo, 0.4, sigma) + 1e-15


def test_void_fraction_constant_without_swelling():
    assert chem.void_fraction(0.7, 0.4, 1.0) == pytest.approx(0.4)


def test_heat_rates():
    assert chem.scrub_heat(0.068 / 60.0) == pytest.approx(128.0, abs=2.0)
    assert chem.adsorption_heat(4.2e-3 / 60.0) == pytest.approx(179.0, abs=3.0)


def test_bed_temperature_equilibrium():
    assert chem.bed_temp_rhs(35.0, 0.0, 0.01, 35.0) == 0.0


def test_ntu_and_circulation():
    assert chem.ntu_required(500.0, 500.0) == 0.0
    assert chem.ntu_required(math.e * 100.0, 100.0) == pytest.approx(1.0)
    assert chem.min_circulation(0.068, 308.0, 0.005) == pytest.approx(344.0, abs=1.0)
