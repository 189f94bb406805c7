"""Extended Kalman filter, scrubber-health adaptation and seal-integrity monitor."""

from __future__ import annotations

from bisect import bisect_left
from collections import deque
from statistics import median
from dataclasses import dataclass, field

import numpy as np

from . import plant as pl
from ._jit import njit
from .sensors import SENSOR_TABLE, SensorFrame, median_vote

# measurement channels of the EKF update
CHANNELS = ("x_CO2", "x_O2", "RH", "T_bz", "T_torso", "T_bed", "dP", "Q_circ",
            "V_CL", "HR", "x_O2_consistency")
NY = len(CHANNELS)
Y_CO2, Y_O2, Y_RH, Y_TBZ, Y_TTORSO, Y_TBED, Y_DP, Y_Q, Y_VCL, Y_HR, Y_CONS = range(NY)

# process noise standard deviation per second of each state
_Q_STD = dict(
    n_O2=2e-4, n_CO2=5e-5, n_H2O=1e-4, n_N2=2e-4, x_O2=2e-5, V_CL=0.15,
    m_O2_tank=1e-6, m_CaOH2=1e-6, xi=1e-5, M_water=1e-6, T_bed=0.02, T_bz=0.05,
    T_torso=0.01, HR=0.5, T_c=1e-3, VO2=0.02, W_hat=5.0, UPTD=1e-6,
)


def _default_q() -> np.ndarray:
    return np.array([_Q_STD[n] ** 2 for n in pl.STATE_NAMES])


def _default_r() -> np.ndarray:
    r = np.empty(NY)
    for i, name in enumerate(CHANNELS[:-1]):
        r[i] = SENSOR_TABLE[name][0] ** 2
    r[Y_O2] = SENSOR_TABLE["x_O2"][0] ** 2 / 3.0
    r[Y_CONS] = 1e-10
    return r


@dataclass(frozen=True)
class EkfConfig:
    """``q_diag`` are variance rates per second; ``r_diag`` are channel
    variances (``Q_circ`` entry is a relative variance)."""

    q_diag: np.ndarray = field(default_factory=_default_q)
    r_diag: np.ndarray = field(default_factory=_default_r)
    jac_rel: float = 1e-7
    gate_sigma: float = 6.0
    trace_suspend: float = 50.0
    window: int = 120

    def __post_init__(self):
        if np.any(np.asarray(self.q_diag) <= 0) or np.any(np.asarray(self.r_diag) <= 0):
            raise ValueError("all noise entries must be positive")
        if len(self.q_diag) != pl.NX or len(self.r_diag) != NY:
            raise ValueError("noise vector lengths do not match the model")


@dataclass
class Estimate:
    """Mean (24 entries, audits carried for bookkeeping) and 18x18 covariance."""

    x: np.ndarray
    P: np.ndarray
    innovations: deque = field(default_factory=lambda: deque(maxlen=120))
    gated: tuple = ()
    degraded: bool = False

    @property
    def x_hat(self) -> pl.PlantState:
        return pl.PlantState.from_array(self.x)

    def copy(self) -> "Estimate":
        return Estimate(self.x.copy(), self.P.copy(), deque(self.innovations,
                        maxlen=self.innovations.maxlen), self.gated, self.degraded)


def initial_covariance() -> np.ndarray:
    std = dict(n_O2=0.01, n_CO2=1e-3, n_H2O=2e-3, n_N2=0.01, x_O2=2e-3, V_CL=0.1,
               m_O2_tank=0.01, m_CaOH2=0.01, xi=0.01, M_water=1e-3, T_bed=1.0,
               T_bz=0.5, T_torso=0.5, HR=2.0, T_c=0.3, VO2=0.1, W_hat=30.0, UPTD=1e-3)
    return np.diag([std[n] ** 2 for n in pl.STATE_NAMES])


# --- kernels ---------------------------------------------------------------

@njit
def _h(x, u, d, p):
    g = pl._derived(x, u, d, p)
    y = np.empty(NY)
    y[Y_CO2] = g[pl.G_XCO2]
    y[Y_O2] = x[pl.I_XO2]
    y[Y_RH] = g[pl.G_RH]
    y[Y_TBZ] = x[pl.I_TBZ]
    y[Y_TTORSO] = x[pl.I_TTORSO]
    y[Y_TBED] = x[pl.I_TBED]
    y[Y_DP] = g[pl.G_PS] - d[pl.D_PA]
    y[Y_Q] = g[pl.G_Q]
    y[Y_VCL] = x[pl.I_VCL]
    y[Y_HR] = x[pl.I_HR]
    n = x[0] + x[1] + x[2] + x[3]
    y[Y_CONS] = x[pl.I_XO2] - (x[pl.I_NO2] / n if n > 0.0 else 0.0)
    return y


@njit
def _h_jac(x, u, d, p, rel):
    y0 = _h(x, u, d, p)
    H = np.empty((NY, pl.NX))
    for j in range(pl.NX):
        h = rel * max(abs(x[j]), 1.0)
        xp = x.copy()
        xp[j] += h
        yp = _h(xp, u, d, p)
        for i in range(NY):
            H[i, j] = (yp[i] - y0[i]) / h
    return H, y0


@njit
def _predict(x, P, u, d, p, dt, rel, q):
    F, f0 = pl._jac_x(x, u, d, p, dt, rel)
    ok = True
    for i in range(pl.NX):
        for j in range(pl.NX):
            if not np.isfinite(F[i, j]):
                ok = False
    if not ok:
        return x.copy(), P.copy(), False
    Pn = F @ P @ F.T
    for i in range(pl.NX):
        Pn[i, i] += q[i] * dt
    Pn = 0.5 * (Pn + Pn.T)
    return f0, Pn, True


@njit
def _update(x, P, u, d, p, z, r, mask, rel, gate):
    """Sequential scalar Joseph-form updates with a prior-linearised H.

    Returns the posterior, the innovations and a flag per channel
    (0 unused, 1 applied, 2 gated).
    """
    H, y0 = _h_jac(x, u, d, p, rel)
    nx = pl.NX
    xs = x[:nx].copy()
    Pc = P.copy()
    innov = np.zeros(NY)
    flag = np.zeros(NY, dtype=np.int64)
    eye = np.eye(nx)
    for i in range(NY):
        if not mask[i]:
            continue
        hrow = H[i]
        # prediction at the current sequential mean, linearised about the prior
        yi = y0[i]
        for j in range(nx):
            yi += hrow[j] * (xs[j] - x[j])
        nu = z[i] - yi
        Ph = Pc @ hrow
        S = hrow @ Ph + r[i]
        innov[i] = nu
        if abs(nu) > gate * np.sqrt(S):
            flag[i] = 2
            continue
        K = Ph / S
        xs = xs + K * nu
        A = eye - np.outer(K, hrow)
        Pc = A @ Pc @ A.T + r[i] * np.outer(K, K)
        flag[i] = 1
    Pc = 0.5 * (Pc + Pc.T)
    out = x.copy()
    out[:nx] = xs
    return out, Pc, innov, flag


# --- public operations -----------------------------------------------------

def ekf_predict(est: Estimate, u, d_hat, dt: float, params,
                config: EkfConfig = EkfConfig()) -> Estimate:
    """Propagate mean with RK4 and covariance with F P F^T + Q dt."""
    p = params.to_vector() if isinstance(params, pl.PlantParams) else params
    _, ua, da = pl._as_arrays(est.x, u, d_hat)
    xn, Pn, ok = _predict(est.x, est.P, ua, da, p, dt, config.jac_rel,
                          np.asarray(config.q_diag, dtype=float))
    out = est.copy()
    if ok:
        out.x, out.P = xn, Pn
    out.degraded = not ok
    return out


def frame_vector(frame: SensorFrame) -> tuple[np.ndarray, np.ndarray, bool]:
    """Measurement vector, availability mask and O2 voting fault flag."""
    vote = median_vote(*frame.x_O2_cells)
    z = np.zeros(NY)
    z[Y_CO2] = frame.x_CO2
    z[Y_O2] = vote.value / 100.0
    z[Y_RH] = frame.RH
    z[Y_TBZ] = frame.T_bz
    z[Y_TTORSO] = frame.T_torso
    z[Y_TBED] = frame.T_bed
    z[Y_DP] = frame.dP
    z[Y_Q] = frame.Q_circ
    z[Y_VCL] = frame.V_CL
    z[Y_HR] = frame.HR
    z[Y_CONS] = 0.0
    mask = np.ones(NY, dtype=np.bool_)
    if vote.fault:
        mask[Y_O2] = False
    return z, mask, vote.fault


def ekf_update(est: Estimate, frame: SensorFrame, u, d_hat, params,
               config: EkfConfig = EkfConfig()) -> Estimate:
    """Joseph-form measurement update; channels beyond the gate are skipped."""
    p = params.to_vector() if isinstance(params, pl.PlantParams) else params
    _, ua, da = pl._as_arrays(est.x, u, d_hat)
    z, mask, _ = frame_vector(frame)
    r = np.asarray(config.r_diag, dtype=float).copy()
    r[Y_Q] = r[Y_Q] * max(frame.Q_circ, 1.0) ** 2
    xn, Pn, innov, flag = _update(est.x, est.P, ua, da, p, z, r, mask,
                                  config.jac_rel, config.gate_sigma)
    out = est.copy()
    try:
        np.linalg.cholesky(Pn + 1e-9 * np.eye(len(Pn)))
    except np.linalg.LinAlgError:
        # restore positive semidefiniteness and mark the estimate
        w, v = np.linalg.eigh(Pn)
        Pn = (v * np.clip(w, 0.0, None)) @ v.T
        out.degraded = True
    out.x, out.P = xn, 0.5 * (Pn + Pn.T)
    out.innovations.append(innov)
    out.gated = tuple(CHANNELS[i] for i in np.flatnonzero(flag == 2))
    return out


def predicted_measurement(x, u, d, params) -> np.ndarray:
    p = params.to_vector() if isinstance(params, pl.PlantParams) else params
    xa, ua, da = pl._as_arrays(x, u, d)
    return _h(xa, ua, da, p)


# --- scrubber health -------------------------------------------------------

@dataclass
class ScrubberHealth:
    """Maps a persistent positive CO2 residual to an effectiveness correction.

    The correction multiplies the controller model's scrubber effectiveness
    and never exceeds 1.
    """

    alpha: float = 1.0 / 30.0
    deadband: float = 1e-4        # fraction
    gain: float = 500.0           # correction drop per unit fraction of residual
    min_samples: int = 60
    floor: float = 0.5
    mean: float = 0.0
    count: int = 0

    def update(self, residual: float, suspended: bool = False) -> float:
        if not suspended and np.isfinite(residual):
            self.mean += self.alpha * (residual - self.mean) if self.count else residual
            self.count += 1
        return self.correction

    @property
    def correction(self) -> float:
        if self.count < self.min_samples:
            return 1.0
        excess = max(0.0, self.mean - self.deadband)
        return float(np.clip(1.0 - self.gain * excess, self.floor, 1.0))


def scrubber_health(residuals, **kwargs) -> float:
    """Correction after feeding a residual stream in order."""
    h = ScrubberHealth(**kwargs)
    for r in residuals:
        h.update(r)
    return h.correction


# --- seal integrity --------------------------------------------------------

@dataclass
class SealMonitor:
    """Classifies the suit seal from gauge pressure, O2 fraction and the
    external toxic reading.

    ``dP`` fed here should have the known breathing excursion removed.
    """

    slope_threshold: float = -5.0 / 60.0   # Pa/s, sustained decline
    t_stat: float = 4.0
    window_s: float = 90.0
    min_history_s: float = 30.0
    persist_s: float = 10.0
    breach_floor: float = 30.0             # Pa, near-equalized gauge pressure
    breach_window_s: float = 10.0
    toxic_limit: float = 50.0              # ppm external
    o2_drop: float = 0.01                  # fraction within the breach window
    o2_stable: float = 0.005
    hist: deque = field(default_factory=lambda: deque(maxlen=4096))
    _leak_since: float | None = None
    state: str = "nominal"

    def update(self, t: float, dP: float, x_O2: float, toxic: float = 0.0) -> str:
        self.hist.append((t, dP, x_O2, toxic))
        while self.hist and self.hist[0][0] < t - max(self.window_s, 60.0):
            self.hist.popleft()
        if self.state == "breach":
            return self.state
        if t - self.hist[0][0] < self.min_history_s - 1e-9:
            return self.state
        ts, dps, xs, _ = zip(*self.hist)
        cut = bisect_left(ts, t - self.breach_window_s)
        if cut > 0:
            base = median(dps[:cut])
            now = median(dps[-3:])
            if base > 3.0 * self.breach_floor and now < self.breach_floor:
                self.state = "breach"
                return self.state
            if toxic > self.toxic_limit and median(xs[:cut]) - median(
                    xs[cut:]) > self.o2_drop:
                self.state = "breach"
                return self.state
        start = bisect_left(ts, t - self.window_s)
        tw, dw, xw = np.array(ts[start:]), np.array(dps[start:]), xs[start:]
        if len(tw) >= 5:
            tc = tw - tw.mean()
            sxx = float(tc @ tc)
            slope = float(tc @ (dw - dw.mean())) / sxx
            resid = dw - dw.mean() - slope * tc
            se = np.sqrt(max(float(resid @ resid), 1e-12) / (len(tw) - 2) / sxx)
            stable = max(xw) - min(xw) < self.o2_stable
            declining = slope < self.slope_threshold and slope / se < -self.t_stat
            if declining and stable:
                if self._leak_since is None:
                    self._leak_since = t
                if t - self._leak_since >= self.persist_s - 1e-9:
                    self.state = "slow_leak"
            else:
                self._leak_since = None
                if self.state == "slow_leak" and slope > 0.5 * self.slope_threshold:
                    self.state = "nominal"
        return self.state


def seal_integrity(samples, **kwargs) -> str:
    """Classification after feeding ``(t, dP, x_O2, toxic)`` samples in order."""
    m = SealMonitor(**kwargs)
    state = m.state
    for s in samples:
        state = m.update(*s)
    return state


def with_eta(d_hat: np.ndarray, correction: float) -> np.ndarray:
    out = np.array(d_hat, dtype=float)
    out[pl.D_ETA] = out[pl.D_ETA] * correction
    return out


__all__ = [
    "CHANNELS", "EkfConfig", "Estimate", "ScrubberHealth", "SealMonitor",
    "ekf_predict", "ekf_update", "frame_vector", "initial_covariance",
    "predicted_measurement", "scrubber_health", "seal_integrity", "with_eta",
]
