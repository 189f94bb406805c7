import pytest
from hypothesis import given, strategies as st

from lifeloop import physiology as ph
from lifeloop.constants import P_ATM


def test_vo2_of_work():
    assert ph.vo2_of_work(0.0) == pytest.approx(0.25)
    assert ph.vo2_of_work(500.0) == pytest.approx(0.25 + 2.90 + 1.00)


def test_o2_mass_rate():
    assert ph.o2_mass_rate(1.0) == pytest.approx(1.43, abs=0.005)


def test_co2_production():
    assert ph.co2_production(1.52 / 0.85) == pytest.approx(0.068, abs=5e-4)
    assert ph.co2_production(0.0) == 0.0
    assert ph.co2_production(2.24, 1.0) == pytest.approx(0.100, abs=1e-3)


def test_uptd_rate():
    assert ph.uptd_rate(0.45) == 0.0
    assert ph.uptd_rate(1.0) == pytest.approx(1.0 / 60.0)
    assert ph.uptd_rate(0.75) == pytest.approx(0.5 ** 0.83 / 60.0, rel=1e-12)
    assert ph.uptd_rate(0.75) == pytest.approx(9.4e-3, abs=1e-4)


@given(st.floats(0.0, 2.0), st.floats(0.0, 2.0))
def test_uptd_rate_monotone(a, b):
    lo, hi = sorted((a, b))
    assert ph.uptd_rate(lo) <= ph.uptd_rate(hi)


def test_pio2_wet():
    assert ph.pio2_wet(P_ATM, 35.0, 0.0, 0.21) == pytest.approx(0.21)
    # water vapour at 60 % and 35 C is about 25 mmHg
    p_h2o = ph.p_sat(35.0) * 0.6 / 133.322
    assert p_h2o == pytest.approx(25.0, abs=0.5)
    reduction = 1.0 - ph.pio2_wet(P_ATM, 35.0, 100.0, 0.21) / 0.21
    assert reduction == pytest.approx(0.055, abs=0.003)
    with pytest.raises(ValueError):
        ph.pio2_wet(P_ATM, 35.0, 101.0, 0.21)


def test_p_sat_physiological_anchors():
    # 47 mmHg at body temperature and 42 mmHg at 35 C
    assert ph.p_sat(37.0) / 133.322387415 == pytest.approx(47.0, rel=1e-9)
    assert ph.p_sat(35.0) / 133.322387415 == pytest.approx(42.0, rel=1e-9)
    assert ph.p_sat(25.0) == pytest.approx(3169.0, rel=0.03)


def test_hr_rhs():
    assert ph.hr_rhs(100.0, 100.0) == 0.0
    assert ph.hr_rhs(70.0, 130.0) == pytest.approx(2.0)


def test_hr_steady_decomposition():
    p = ph.MetabolicParams()
    total = ph.hr_steady(250.0, 70.0, 36.0, 38.0, 0.17, p)
    parts = (ph.hr_work(250.0, p) + ph.hr_heat(70.0, 36.0, 38.0, p) + ph.hr_hypox(0.17, p))
    assert total == pytest.approx(min(parts, p.HR_max))


def test_metabolic_estimate_inverts_work_component():
    p = ph.MetabolicParams()
    hr = ph.hr_steady(300.0, 40.0, 33.0, 37.0, 0.21, p)
    assert ph.metabolic_estimate(hr, 40.0, 33.0, 37.0, 0.21, p) == pytest.approx(300.0)


def test_core_temperature_drifts_up_under_load():
    rate = ph.core_temp_rhs(37.0, 400.0, 33.0)
    assert 0.3 < rate * 1800.0 < 2.0


def test_risk_indices():
    assert ph.risk_indices(0.21, 400e-6) == pytest.approx((0.0, 0.0), abs=0.02)
    assert ph.risk_indices(0.16, 400e-6)[0] == pytest.approx(1.0)
    assert ph.risk_indices(0.21, 0.03)[1] == pytest.approx(1.0)
