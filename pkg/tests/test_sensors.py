import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lifeloop import plant as pl
from lifeloop.sensors import SENSOR_TABLE, SensorConfig, median_vote, sense

from conftest import nominal_d, nominal_u


def test_vote_agreeing_cells():
    v = median_vote(20.9, 21.0, 21.1)
    assert v.value == 21.0
    assert v.rejected == (False, False, False)
    assert not v.fault


def test_vote_rejects_outlier():
    v = median_vote(20.9, 21.0, 25.0)
    assert v.value == 21.0
    assert v.rejected == (False, False, True)
    assert not v.fault


def test_vote_faults_on_two_rejections():
    assert median_vote(15.0, 21.0, 27.0).fault


def test_vote_rejects_nan():
    with pytest.raises(ValueError):
        median_vote(21.0, float("nan"), 21.0)


def test_noiseless_frame_is_truth(x0, params):
    u, d = nominal_u(), nominal_d()
    f = sense(x0, u, d, params, 0.0, np.random.default_rng(0),
              SensorConfig(noise=False, quantize=False))
    g = pl.derived(x0, u, d, params)
    assert f.x_O2_cells == pytest.approx((21.0, 21.0, 21.0), abs=1e-12)
    assert f.x_CO2 == pytest.approx(g["x_CO2"], rel=1e-15)
    assert f.dP == pytest.approx(g["P_s"] - d[pl.D_PA], abs=1e-9)
    assert f.T_bz == x0[pl.I_TBZ]


def test_quantization_grid(x0, params):
    f = sense(x0, nominal_u(), nominal_d(), params, 0.0, np.random.default_rng(3))
    assert f.x_CO2 / 1e-4 == pytest.approx(round(f.x_CO2 / 1e-4), abs=1e-6)
    assert f.HR == round(f.HR)


def test_same_seed_same_frame(x0, params):
    a = sense(x0, nominal_u(), nominal_d(), params, 5.0, np.random.default_rng(9))
    b = sense(x0, nominal_u(), nominal_d(), params, 5.0, np.random.default_rng(9))
    assert a == b


def test_drifting_cell_outvoted(x0, params):
    cfg = SensorConfig(cell_fault=2, cell_fault_onset=0.0, cell_fault_rate=1e-3)
    f = sense(x0, nominal_u(), nominal_d(), params, 600.0, np.random.default_rng(1), cfg)
    v = median_vote(*f.x_O2_cells)
    assert v.rejected[2]
    assert abs(v.value - 21.0) < 0.5


_SIG = 100 * SENSOR_TABLE["x_O2"][0]
_QUANT = 100 * SENSOR_TABLE["x_O2"][1]


@settings(max_examples=300, deadline=None)
@given(truth=st.floats(15.0, 40.0), bad=st.integers(0, 2),
       fault=st.floats(-100.0, 100.0), seed=st.integers(0, 2**32 - 1))
def test_single_cell_fault_bounded_by_healthy_cells(truth, bad, fault, seed):
    rng = np.random.default_rng(seed)
    cells = [round((truth + _SIG * z) / _QUANT) * _QUANT for z in rng.standard_normal(3)]
    cells[bad] = truth + fault
    v = median_vote(*cells)
    healthy = [c for i, c in enumerate(cells) if i != bad]
    assert min(healthy) <= v.value <= max(healthy)
