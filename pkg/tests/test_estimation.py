import numpy as np
import pytest

from lifeloop import estimation as es
from lifeloop import plant as pl
from lifeloop.sensors import SensorConfig, sense

from conftest import nominal_d, nominal_u


def _track(x0, params, steps, perturb=None, seed=0, noise=False):
    rng = np.random.default_rng(seed)
    u, d = nominal_u(), nominal_d(400.0)
    xt = x0.copy()
    est = es.Estimate(x0.copy(), es.initial_covariance())
    if perturb is not None:
        est.x[:pl.NX] += perturb
    cfg = SensorConfig(noise=noise, quantize=noise)
    for k in range(steps):
        xt = pl.rk4_step(xt, u, d, 1.0, params)
        est = es.ekf_predict(est, u, d, 1.0, params)
        est = es.ekf_update(est, sense(xt, u, d, params, k + 1.0, rng, cfg), u, d, params)
    return xt, est


def test_noiseless_tracking_stays_on_truth(x0, params):
    xt, est = _track(x0, params, 120)
    assert abs(est.x[pl.I_XO2] - xt[pl.I_XO2]) < 1e-4
    assert abs(est.x[pl.I_NCO2] - xt[pl.I_NCO2]) < 1e-4
    assert abs(est.x[pl.I_TBZ] - xt[pl.I_TBZ]) < 0.05
    assert not est.degraded


def test_initial_error_shrinks(x0, params):
    dx = np.zeros(pl.NX)
    dx[pl.I_TBED] = 3.0
    dx[pl.I_VCL] = 0.5
    xt, est = _track(x0, params, 60, perturb=dx)
    assert abs(est.x[pl.I_TBED] - xt[pl.I_TBED]) < 1.0
    assert abs(est.x[pl.I_VCL] - xt[pl.I_VCL]) < 0.1


def test_covariance_stays_symmetric_psd(x0, params):
    _, est = _track(x0, params, 200, noise=True, seed=4)
    assert np.allclose(est.P, est.P.T, atol=0)
    assert np.linalg.eigvalsh(est.P).min() >= -1e-12


def test_predicted_measurement_matches_derived(x0, params):
    y = es.predicted_measurement(x0, nominal_u(), nominal_d(), params)
    g = pl.derived(x0, nominal_u(), nominal_d(), params)
    assert y[es.Y_CO2] == pytest.approx(g["x_CO2"])
    assert y[es.Y_O2] == pytest.approx(0.21)
    assert y[es.Y_TBED] == x0[pl.I_TBED]


def test_ekf_config_rejects_nonpositive_noise():
    q = np.ones(pl.NX)
    q[0] = 0.0
    with pytest.raises(ValueError):
        es.EkfConfig(q_diag=q)


def test_scrubber_health_bias_detected_within_5_min():
    h = es.ScrubberHealth()
    corr = [h.update(5e-4) for _ in range(300)]
    assert corr[-1] < 1.0
    assert all(c == 1.0 for c in corr[:59])


def test_scrubber_health_ignores_noise_and_suspension():
    rng = np.random.default_rng(1)
    assert es.scrubber_health(1e-4 * rng.standard_normal(600) * 0.3) == 1.0
    h = es.ScrubberHealth()
    for _ in range(300):
        h.update(5e-4, suspended=True)
    assert h.correction == 1.0


def test_scrubber_health_floor():
    assert es.scrubber_health([1.0] * 100) == es.ScrubberHealth().floor


def test_with_eta_scales_only_eta():
    d = nominal_d()
    out = es.with_eta(d, 0.8)
    assert out[pl.D_ETA] == pytest.approx(0.8)
    assert np.array_equal(np.delete(out, pl.D_ETA), np.delete(d, pl.D_ETA))


def _pressure_samples(rate_pa_s, seconds, base=200.0, t0=0.0, x=0.21, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    return [(t0 + t, base + rate_pa_s * t + noise * rng.standard_normal(), x, 0.0)
            for t in range(int(seconds) + 1)]


def test_seal_slow_leak_within_3_min():
    m = es.SealMonitor()
    first = None
    for s in _pressure_samples(-10.0 / 60.0, 300, noise=3.0, seed=2):
        if m.update(*s) == "slow_leak" and first is None:
            first = s[0]
    assert first is not None and first <= 180.0


def test_seal_steady_pressure_nominal():
    assert es.seal_integrity(_pressure_samples(0.0, 600, noise=3.0, seed=5)) == "nominal"


def test_seal_breach_on_fast_collapse():
    m = es.SealMonitor()
    for s in _pressure_samples(0.0, 60):
        m.update(*s)
    states = [m.update(60.0 + k, 200.0 * (1 - k / 5.0), 0.21) for k in range(1, 7)]
    assert states[-1] == "breach"
    assert states.index("breach") <= 5


def test_seal_breach_on_toxic_o2_drop():
    m = es.SealMonitor()
    for s in _pressure_samples(0.0, 60):
        m.update(*s)
    for k in range(1, 12):
        state = m.update(60.0 + k, 200.0, 0.21 - 0.003 * k, toxic=100.0)
    assert state == "breach"
