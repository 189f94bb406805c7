"""Decision stack: LTV-MPC with scarcity cost, CBF safety filter, PID baseline,
scripted fallback, thermal-threat index and the consumable mode manager."""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from . import plant as pl
from ._jit import njit
from .constants import P_ATM
from .gas import TidalParams, tidal_amplitude
from .physiology import p_sat
from .qp import solve_qp

# --- controller outputs ----------------------------------------------------

OUT_NAMES = ("x_O2", "P_iO2", "x_CO2", "V_CL", "UPTD", "RH", "T_c", "T_bz",
             "T_torso", "HR", "T_bed", "n_vent", "m_tank")
NO = len(OUT_NAMES)
(O_XO2, O_PIO2, O_XCO2, O_VCL, O_UPTD, O_RH, O_TC, O_TBZ, O_TTORSO, O_HR,
 O_TBED, O_VENT, O_TANK) = range(NO)


@njit
def _outputs(x, u, d, p):
    g = pl._derived(x, u, d, p)
    y = np.empty(NO)
    y[O_XO2] = x[pl.I_XO2]
    y[O_PIO2] = g[pl.G_PIO2]
    y[O_XCO2] = g[pl.G_XCO2]
    y[O_VCL] = x[pl.I_VCL]
    y[O_UPTD] = x[pl.I_UPTD]
    y[O_RH] = g[pl.G_RH]
    y[O_TC] = x[pl.I_TC]
    y[O_TBZ] = x[pl.I_TBZ]
    y[O_TTORSO] = x[pl.I_TTORSO]
    y[O_HR] = x[pl.I_HR]
    y[O_TBED] = x[pl.I_TBED]
    y[O_VENT] = g[pl.G_VENT]
    y[O_TANK] = x[pl.I_MTANK]
    return y


@njit
def _out_jac(x, u, d, p, rel):
    y0 = _outputs(x, u, d, p)
    C = np.empty((NO, pl.NX))
    for j in range(pl.NX):
        if j == pl.I_XO2:
            # x_O2 follows the mole columns; a direct column would count it twice
            C[:, j] = 0.0
            continue
        h = rel * max(abs(x[j]), 1.0)
        xp = x.copy()
        xp[j] += h
        if j < 4:
            xp[pl.I_XO2] = xp[pl.I_NO2] / (xp[0] + xp[1] + xp[2] + xp[3])
        yp = _outputs(xp, u, d, p)
        for i in range(NO):
            C[i, j] = (yp[i] - y0[i]) / h
    return C, y0


@njit
def _mpc_prep(x0, ubar, d, p, dt, rel):
    """Nominal trajectory under the input sequence ``ubar`` (N x 3) with
    output values and output Jacobians at every step."""
    N = ubar.shape[0]
    xs = np.empty((N + 1, pl.NXA))
    xs[0] = x0
    for k in range(N):
        xs[k + 1] = pl._step_fast(xs[k], ubar[k], d, p, dt)
    Y = np.empty((N + 1, NO))
    C = np.empty((N + 1, NO, pl.NX))
    for k in range(N + 1):
        uk = ubar[min(k, N - 1)]
        Ck, yk = _out_jac(xs[k], uk, d, p, rel)
        Y[k] = yk
        C[k] = Ck
    return xs, Y, C


# --- discretization and linearization --------------------------------------

def zoh_discretize(A, B, dt: float):
    """Exact zero-order-hold discretization via the augmented exponential."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    n, m = A.shape[0], B.shape[1]
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A
    M[:n, n:] = B
    E = expm(M * dt)
    Ad, Bd = E[:n, :n], E[:n, n:]
    if not (np.all(np.isfinite(Ad)) and np.all(np.isfinite(Bd))):
        raise pl.PlantFault("non-finite ZOH discretization")
    return Ad, Bd


def linearize(x_hat, u_prev, d_hat, params, rel: float = 1e-6, hu: float = 1e-6):
    """Jacobians (A, B) of the continuous RHS and the affine residual g so that
    f(x, u) ~ A x + B u + g near the linearization point."""
    p = params.to_vector() if isinstance(params, pl.PlantParams) else params
    xa, ua, da = pl._as_arrays(x_hat, u_prev, d_hat)
    A, B, f0 = pl._cont_jac(xa, ua, da, p, rel, hu)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise pl.PlantFault("non-finite Jacobian")
    g = f0[:pl.NX] - A @ xa[:pl.NX] - B @ ua
    return A, B, g


# --- scarcity, threat, cost terms ------------------------------------------

def scarcity_lambda(m_now: float, m_init: float, lam0: float = 1.0, alpha: float = 2.0,
                    lam_max: float = 1e4) -> float:
    """Venting cost multiplier lam0 (m_init/m_now)^alpha, saturating at lam_max."""
    if m_init <= 0:
        raise ValueError("initial mass must be positive")
    if m_now <= 0:
        return lam_max
    return min(lam_max, lam0 * (m_init / m_now) ** alpha)


@dataclass(frozen=True)
class ThreatConfig:
    q_rad_max: float = 200.0      # kW/m^2
    T_ext_max: float = 500.0      # C
    slope_max: float = 0.01       # C/s torso heating rate
    threshold: float = 1.5
    relief: float = 0.5           # lambda multiplier while above threshold

    def __post_init__(self):
        if min(self.q_rad_max, self.T_ext_max, self.slope_max) <= 0:
            raise ValueError("threat maxima must be positive")


def thermal_threat(q_rad: float, T_ext: float, dT_torso_dt: float,
                   config: ThreatConfig = ThreatConfig()) -> float:
    """Sum of three normalized thermal terms, each clamped to [0, 1]."""
    def c(v):
        return min(1.0, max(0.0, v))
    return (c(q_rad / config.q_rad_max) + c(T_ext / config.T_ext_max)
            + c(dT_torso_dt / config.slope_max))


class Mode(enum.IntEnum):
    NORMAL = 0
    CONSERVATION = 1
    EMERGENCY = 2
    CASCADE = 3


# soft triples (lo, nominal, hi); x_CO2 and x_O2 as fractions, RH in percent
SOFT_TRIPLES = {
    "x_CO2": (0.0, 0.001, 0.0035),
    "RH": (20.0, 40.0, 60.0),
    "P_iO2": (0.20, 0.21, 0.5),
    "T_c": (36.0, 37.5, 38.5),
    "T_bz": (15.0, 28.0, 35.0),
    "T_torso": (15.0, 32.0, 40.0),
    "HR": (40.0, 120.0, 185.0),
    "T_bed": (0.0, 50.0, 80.0),
    "x_O2": (0.19, 0.21, 0.23),
}
# upper soft CO2 limit relaxed as the mode escalates; Cascade uses the triage bound
CO2_SOFT_HI = {Mode.NORMAL: 0.0035, Mode.CONSERVATION: 0.005, Mode.EMERGENCY: 0.01,
               Mode.CASCADE: 0.03}


@dataclass(frozen=True)
class MpcConfig:
    """Weights w1..w9: safety, RH comfort, temperature comfort, venting,
    smoothness of injection/fan/bypass, injection regularisation, decoupling."""

    N: int = 15
    block: int = 5
    dt: float = 1.0
    w: tuple = (1.0, 0.02, 0.02, 2.0e3, 0.2, 0.05, 0.05, 0.02, 1.0)
    lam0: float = 1.0
    alpha: float = 2.0
    lam_max: float = 1e4
    soft: dict = field(default_factory=lambda: dict(SOFT_TRIPLES))
    co2_soft_hi: dict = field(default_factory=lambda: dict(CO2_SOFT_HI))
    rh_comfort: float = 40.0
    t_comfort: float = 28.0
    rh_thresh: float = 60.0
    u_min: tuple = (0.0, 0.0, 0.0)
    u_max: tuple = (1.0, 1.0, 1.0)
    pio2_min: float = 0.16
    x_o2_max: float = 0.235
    x_o2_max_degraded: float = 0.50
    co2_cap: float = 0.05
    uptd_max: float = 300.0
    v_margin: float = 1.0          # L, movement allowance under the tidal trough
    v_soft_pad: float = 0.3        # L above the trough requirement
    v_nominal: float = 4.5
    qp_max_iter: int = 200
    hinge_iters: int = 3
    deadline_s: float = 0.1
    jac_rel: float = 1e-6

    def __post_init__(self):
        if self.N < 1 or self.block < 1:
            raise ValueError("horizon and block must be positive")
        if self.alpha <= 1.0:
            raise ValueError("alpha must exceed 1")
        if min(self.w) < 0:
            raise ValueError("weights must be non-negative")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


def _hinge(y, lo, nom, hi):
    up = np.maximum(0.0, (y - hi) / (hi - nom)) if hi > nom else 0.0 * y
    dn = np.maximum(0.0, (lo - y) / (nom - lo)) if nom > lo else 0.0 * y
    return up ** 2 + dn ** 2


def mpc_cost_terms(trajectory: dict, inputs, u_prev, config: MpcConfig = MpcConfig(),
                   lam: float = 1.0) -> dict:
    """Cost components of a predicted trajectory.

    ``trajectory`` maps output names (``SOFT_TRIPLES`` keys plus ``n_vent`` in
    mol/s) to arrays of length N+1; ``inputs`` is N x 3.
    """
    w = config.w
    u = np.atleast_2d(np.asarray(inputs, dtype=float))
    du = np.diff(np.vstack([np.asarray(u_prev, dtype=float)[None, :], u]), axis=0)
    span = np.asarray(config.u_max) - np.asarray(config.u_min)
    safety = 0.0
    for name, (lo, nom, hi) in config.soft.items():
        if name in trajectory:
            safety += float(np.sum(_hinge(np.asarray(trajectory[name], float), lo, nom, hi)))
    comfort = 0.0
    if "RH" in trajectory:
        lo, nom, hi = config.soft["RH"]
        comfort += w[1] * float(np.sum(((np.asarray(trajectory["RH"]) - config.rh_comfort)
                                        / (hi - nom)) ** 2))
    if "T_bz" in trajectory:
        lo, nom, hi = config.soft["T_bz"]
        comfort += w[2] * float(np.sum(((np.asarray(trajectory["T_bz"]) - config.t_comfort)
                                        / (hi - nom)) ** 2))
    vent = np.asarray(trajectory.get("n_vent", np.zeros(1)), float)
    resource = w[3] * lam * float(np.sum(vent[1:])) * config.dt
    smooth = float(np.sum(np.asarray(w[4:7]) * (du / span) ** 2))
    decouple = 0.0
    if "RH" in trajectory:
        rh = np.asarray(trajectory["RH"], float)
        for k in range(du.shape[0]):
            if rh[k] > config.rh_thresh and du[k, pl.U_FAN] > 0.0:
                decouple += w[8] * du[k, pl.U_FAN] * (rh[k] - config.rh_thresh) / 100.0
    return dict(safety=w[0] * safety, comfort=comfort, resource=resource,
                smoothness=smooth, decouple=decouple)


# --- condensed prediction ---------------------------------------------------

def blocking_matrix(N: int, block: int, nu: int) -> np.ndarray:
    """Map blocked moves (nb*nu) to per-step inputs (N*nu)."""
    nb = math.ceil(N / block)
    E = np.zeros((N * nu, nb * nu))
    for k in range(N):
        b = k // block
        E[k * nu:(k + 1) * nu, b * nu:(b + 1) * nu] = np.eye(nu)
    return E


def prediction_matrices(Ads, Bds, E: np.ndarray) -> np.ndarray:
    """State sensitivities S[k] (k = 0..N) of x_k to the blocked moves for
    x_{k+1} = A_k x_k + B_k u_k; S[0] = 0."""
    N = len(Ads)
    n = Ads[0].shape[0]
    nu = Bds[0].shape[1]
    S = np.zeros((N + 1, n, E.shape[1]))
    for k in range(N):
        S[k + 1] = Ads[k] @ S[k] + Bds[k] @ E[k * nu:(k + 1) * nu]
    return S


def linear_mpc(Ad, Bd, x0, Qx, Ru, N: int, block: int = 1, u_min=None, u_max=None,
               x_ref=None):
    """Condensed move-blocked MPC for x+ = Ad x + Bd u with stage cost
    x^T Qx x + u^T Ru u over steps 1..N. Returns the per-step inputs (N x m)."""
    Ad = np.atleast_2d(Ad)
    Bd = np.asarray(Bd, float).reshape(Ad.shape[0], -1)
    n, m = Bd.shape
    E = blocking_matrix(N, block, m)
    S = prediction_matrices([Ad] * N, [Bd] * N, E)
    free = [np.linalg.matrix_power(Ad, k) @ np.asarray(x0, float) for k in range(N + 1)]
    ref = np.zeros(n) if x_ref is None else np.asarray(x_ref, float)
    nz = E.shape[1]
    H = np.zeros((nz, nz))
    f = np.zeros(nz)
    for k in range(1, N + 1):
        H += 2 * S[k].T @ Qx @ S[k]
        f += 2 * S[k].T @ Qx @ (free[k] - ref)
    Rbig = np.kron(np.eye(N), np.atleast_2d(Ru))
    H += 2 * E.T @ Rbig @ E
    C = b = None
    if u_min is not None or u_max is not None:
        rows, rhs = [], []
        lo = -np.inf * np.ones(m) if u_min is None else np.asarray(u_min, float)
        hi = np.inf * np.ones(m) if u_max is None else np.asarray(u_max, float)
        nbk = nz // m
        for bk in range(nbk):
            for i in range(m):
                e = np.zeros(nz)
                e[bk * m + i] = 1.0
                if np.isfinite(lo[i]):
                    rows.append(e)
                    rhs.append(lo[i])
                if np.isfinite(hi[i]):
                    rows.append(-e)
                    rhs.append(-hi[i])
        C, b = np.array(rows), np.array(rhs)
    res = solve_qp(0.5 * (H + H.T), f, C, b)
    return (E @ res.x).reshape(N, m), res.status


# --- MPC --------------------------------------------------------------------

@dataclass(frozen=True)
class MpcResult:
    u: np.ndarray
    status: str
    plan: np.ndarray
    predicted: dict
    solve_time: float
    iterations: int


class MPC:
    """LTV-MPC on the controller-side plant model.

    The prediction starts from the estimated mean counter-lung volume (the
    known breathing excursion removed) and assumes zero mean breathing flow
    over the horizon.
    """

    def __init__(self, params, config: MpcConfig = MpcConfig(),
                 tidal: TidalParams = TidalParams(), v_min: float = 1.5,
                 v_threshold: float | None = None):
        self.p = params.to_vector() if isinstance(params, pl.PlantParams) else np.asarray(params)
        self.config = config
        self.tidal = tidal
        self.v_min = v_min
        if v_threshold is None:
            v_threshold = self.p[pl.P_VCL0] + self.p[pl.P_DPCRACK] / self.p[pl.P_KCL]
        self.v_threshold = v_threshold
        self.prev_plan: np.ndarray | None = None

    def reset(self):
        self.prev_plan = None

    def _nominal_inputs(self, u_warm):
        N = self.config.N
        if self.prev_plan is not None:
            plan = np.vstack([self.prev_plan[1:], self.prev_plan[-1:]])
        else:
            plan = np.tile(np.asarray(u_warm, float), (N, 1))
        return np.clip(plan, self.config.u_min, self.config.u_max)

    def x_o2_max(self, mode: Mode, degraded: bool) -> float:
        if mode == Mode.CASCADE and degraded:
            return self.config.x_o2_max_degraded
        return self.config.x_o2_max

    def solve(self, x0, u_warm, d_hat, mode: Mode = Mode.NORMAL, lam: float = 1.0,
              degraded: bool = False, v_offset: float = 0.0, m_dot_cap: float | None = None,
              clock=time.perf_counter) -> MpcResult:
        cfg = self.config
        t_start = clock()
        N, dt, nu = cfg.N, cfg.dt, pl.NU
        w = cfg.w
        x0 = np.array(x0, dtype=float)
        x0[pl.I_VCL] -= v_offset
        d = np.array(d_hat, dtype=float)
        d[pl.D_VBREATH] = 0.0
        ubar = self._nominal_inputs(u_warm)
        xs, Y0, Cy = _mpc_prep(x0, ubar, d, self.p, dt, cfg.jac_rel)
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(Cy))):
            return self._fail(u_warm, "infeasible", t_start, clock)
        # LTV model at block starts
        E = blocking_matrix(N, cfg.block, nu)
        nz = E.shape[1]
        Ads, Bds = [], []
        cache = {}
        for k in range(N):
            b0 = (k // cfg.block) * cfg.block
            if b0 not in cache:
                A, B, _ = pl._cont_jac(xs[b0], ubar[b0], d, self.p, cfg.jac_rel, 1e-6)
                cache[b0] = zoh_discretize(A, B, dt)
            Ads.append(cache[b0][0])
            Bds.append(cache[b0][1])
        S = prediction_matrices(Ads, Bds, E)
        Psi = np.einsum("kon,knz->koz", Cy, S)       # (N+1, NO, nz)

        W_hat = max(0.0, x0[pl.I_WHAT])
        amp = tidal_amplitude(W_hat, self.tidal)
        trough_req = self.v_min + amp + cfg.v_margin
        v_lo = trough_req + cfg.v_soft_pad
        v_nom = max(cfg.v_nominal, v_lo + 0.1)
        v_hi = max(v_nom + 0.1, self.v_threshold - amp - cfg.v_soft_pad)
        soft = dict(cfg.soft)
        lo, nom, _ = soft["x_CO2"]
        soft["x_CO2"] = (lo, nom, cfg.co2_soft_hi[mode])
        xmax = self.x_o2_max(mode, degraded)
        if xmax > cfg.x_o2_max:
            lo, nom, _ = soft["x_O2"]
            soft["x_O2"] = (lo, nom, xmax - 0.02)
        soft["V_CL"] = (v_lo, v_nom, v_hi)
        soft_idx = {"x_CO2": O_XCO2, "RH": O_RH, "P_iO2": O_PIO2, "T_c": O_TC,
                    "T_bz": O_TBZ, "T_torso": O_TTORSO, "HR": O_HR, "T_bed": O_TBED,
                    "x_O2": O_XO2, "V_CL": O_VCL}

        # fixed quadratic pieces: comfort, smoothness, regularisation
        span = np.asarray(cfg.u_max) - np.asarray(cfg.u_min)
        H0 = np.zeros((nz, nz))
        f0 = np.zeros(nz)
        ks = np.arange(1, N + 1)
        for oi, target, wt, scale in ((O_RH, cfg.rh_comfort, w[1], soft["RH"][2] - soft["RH"][1]),
                                      (O_TBZ, cfg.t_comfort, w[2],
                                       soft["T_bz"][2] - soft["T_bz"][1])):
            P = Psi[ks, oi, :] / scale
            r = (Y0[ks, oi] - target) / scale
            H0 += 2 * wt * P.T @ P
            f0 += 2 * wt * P.T @ r
        # per-step inputs u_k = ubar_k + E_k z; smoothness on consecutive steps
        u_prev = np.asarray(u_warm, float)
        D = np.zeros((N * nu, nz))
        c = np.zeros(N * nu)
        for k in range(N):
            Ek = E[k * nu:(k + 1) * nu]
            Ekm = E[(k - 1) * nu:k * nu] if k > 0 else np.zeros_like(Ek)
            D[k * nu:(k + 1) * nu] = Ek - Ekm
            c[k * nu:(k + 1) * nu] = ubar[k] - (ubar[k - 1] if k > 0 else u_prev)
        wsm = np.tile(np.asarray(w[4:7]) / span ** 2, N)
        H0 += 2 * D.T @ (wsm[:, None] * D)
        f0 += 2 * D.T @ (wsm * c)
        ri = np.arange(N) * nu + pl.U_MDOT
        Einj = E[ri]
        H0 += 2 * w[7] * Einj.T @ Einj
        f0 += 2 * w[7] * Einj.T @ ubar[:, pl.U_MDOT]
        H0 += 1e-9 * np.eye(nz)

        # venting: linearised vent rate
        f_vent = w[3] * lam * dt * Psi[ks, O_VENT, :].sum(axis=0)

        # hard rows: actuator box, then the safety set at every horizon step
        umin = np.asarray(cfg.u_min, float).copy()
        umax = np.asarray(cfg.u_max, float).copy()
        if m_dot_cap is not None:
            umax[pl.U_MDOT] = min(umax[pl.U_MDOT], max(0.0, m_dot_cap))
        rows = [E, -E]
        rhs = [(umin - ubar).ravel(), (ubar - umax).ravel()]
        for oi, sign, bound in ((O_XO2, -1.0, xmax), (O_PIO2, 1.0, cfg.pio2_min),
                                (O_VCL, 1.0, trough_req), (O_UPTD, -1.0, cfg.uptd_max),
                                (O_XCO2, -1.0, cfg.co2_cap)):
            rows.append(sign * Psi[ks, oi])
            rhs.append(sign * (bound - Y0[ks, oi]))
        Call = np.vstack(rows)
        ball = np.concatenate(rhs)

        z, status, iters = self._hinge_solve(H0, f0, f_vent, Call, ball, Y0, Psi, soft,
                                             soft_idx, D, c, ks, t_start, clock)
        if status in ("infeasible", "max_iter") or z is None or not np.all(np.isfinite(z)):
            return self._fail(u_warm, "infeasible" if status != "max_iter" else status,
                              t_start, clock)
        if clock() - t_start > cfg.deadline_s:
            status = "deadline_exceeded"
        plan = np.clip(ubar + (E @ z).reshape(N, nu), umin, umax)
        ypred = Y0 + Psi @ z
        self.prev_plan = plan
        pred = {n: ypred[:, i] for i, n in enumerate(OUT_NAMES)}
        return MpcResult(plan[0].copy(), status, plan, pred, clock() - t_start, iters)

    def _hinge_solve(self, H0, f0, f_vent, Cq, bq, Y0, Psi, soft, soft_idx, D, c, ks,
                     t_start, clock):
        """Re-solve with the hinge penalties active at the previous solution
        until the active set repeats or the iteration budget runs out."""
        cfg = self.config
        w = cfg.w
        N, nu = cfg.N, pl.NU
        z = np.zeros(H0.shape[0])
        status = "optimal"
        iters = 0
        active_prev = None
        solved = False
        for it in range(cfg.hinge_iters):
            if it > 0 and clock() - t_start > cfg.deadline_s:
                status = "deadline_exceeded"
                break
            ypred = Y0 + Psi @ z
            H = H0.copy()
            f = f0 + f_vent
            active = []
            for name, (lo, nom, hi) in soft.items():
                oi = soft_idx[name]
                yk = ypred[ks, oi]
                for side, bound, scale in ((1, hi, hi - nom), (-1, lo, nom - lo)):
                    if scale <= 0:
                        continue
                    viol = (yk - bound) * side > 0
                    if not viol.any():
                        continue
                    sel = ks[viol]
                    active.append((oi, side, tuple(sel)))
                    P = Psi[sel, oi, :] / scale
                    r = (Y0[sel, oi] - bound) / scale
                    H += 2 * w[0] * P.T @ P
                    f += 2 * w[0] * P.T @ r
            # decoupling: penalise fan increases while humid
            du = D @ z + c
            for k in range(N):
                j = k * nu + pl.U_FAN
                rh = ypred[k, O_RH]
                if rh > cfg.rh_thresh and du[j] > 0.0:
                    f += w[8] * (rh - cfg.rh_thresh) / 100.0 * D[j]
            res = solve_qp(0.5 * (H + H.T), f, Cq, bq, max_iter=cfg.qp_max_iter)
            iters += res.iterations
            if not res.ok:
                status = "infeasible" if res.status in ("infeasible", "singular") else res.status
                break
            z = res.x
            solved = True
            if active == active_prev:
                break
            active_prev = active
        if status == "infeasible" or not solved:
            return None, ("infeasible" if status != "max_iter" else status), iters
        return z, status, iters

    def _fail(self, u_warm, status, t_start, clock):
        self.prev_plan = None
        return MpcResult(np.asarray(u_warm, float).copy(), status, np.empty((0, pl.NU)), {},
                         clock() - t_start, 0)


# --- CBF safety filter -------------------------------------------------------

BARRIERS = ("x_O2", "P_iO2", "x_CO2", "V_CL", "UPTD")
# relaxation order when the full set is infeasible (first dropped first)
RELAX_ORDER = (4, 0, 2, 3)


@dataclass(frozen=True)
class CbfConfig:
    kappa: tuple = (0.2, 0.2, 0.2, 0.2, 0.2)
    pio2_min: float = 0.16
    co2_cap: dict = field(default_factory=lambda: {m: 0.05 for m in Mode})
    v_min: float = 1.5
    uptd_max: float = 300.0
    x_o2_max: float = 0.235
    x_o2_max_degraded: float = 0.50
    u_min: tuple = (0.0, 0.0, 0.0)
    u_max: tuple = (1.0, 1.0, 1.0)
    tol: float = 1e-10
    hu: float = 1e-4
    refine_iters: int = 16
    backoff_sigma: float = 3.0     # x_O2 ceiling lowered by this many estimate std devs

    def __post_init__(self):
        if not all(0.0 < k <= 1.0 for k in self.kappa):
            raise ValueError("kappa must lie in (0, 1]")


@dataclass(frozen=True)
class CbfResult:
    u: np.ndarray
    status: str          # "pass", "filtered", "override"
    dropped: tuple
    margins: np.ndarray
    alarm: bool


@njit
def _barriers(y, xmax, pio2_min, co2_cap, v_min, uptd_max):
    h = np.empty(5)
    h[0] = xmax - y[O_XO2]
    h[1] = y[O_PIO2] - pio2_min
    h[2] = co2_cap - y[O_XCO2]
    h[3] = y[O_VCL] - v_min
    h[4] = uptd_max - y[O_UPTD]
    return h


@njit
def _cbf_affine(x, u_ref, d, p, dt, hu, rel, xmax, pio2_min, co2_cap, v_min, uptd_max):
    """Barrier values now, at the one-step prediction under u_ref, and their
    input gradients through the one-step map."""
    y_now = _outputs(x, u_ref, d, p)
    h_now = _barriers(y_now, xmax, pio2_min, co2_cap, v_min, uptd_max)
    G, f0 = pl._jac_u(x, u_ref, d, p, dt, hu)
    Cy, y1 = _out_jac(f0, u_ref, d, p, rel)
    h1 = _barriers(y1, xmax, pio2_min, co2_cap, v_min, uptd_max)
    dh_dy = np.zeros((5, NO))
    dh_dy[0, O_XO2] = -1.0
    dh_dy[1, O_PIO2] = 1.0
    dh_dy[2, O_XCO2] = -1.0
    dh_dy[3, O_VCL] = 1.0
    dh_dy[4, O_UPTD] = -1.0
    J = dh_dy @ Cy @ G
    return h_now, h1, J


# slack normalisation per barrier for best-effort relaxation
_RELAX_SCALE = np.array([0.01, 0.01, 0.001, 0.1, 1.0])


def _best_effort(G, a, C, b, J, bnd, dropped, fallback):
    """Re-add dropped barriers as quadratically penalised rows so the command
    still pushes them back toward safety; later-dropped barriers weigh more."""
    m = len(dropped)
    n = G.shape[0]
    G2 = np.zeros((n + m, n + m))
    G2[:n, :n] = G
    a2 = np.concatenate([a, np.zeros(m)])
    rows = [np.hstack([C, np.zeros((C.shape[0], m))])]
    rhs = [b]
    for i, j in enumerate(dropped):
        G2[n + i, n + i] = 2.0 * 1e2 * 10.0 ** i / _RELAX_SCALE[j] ** 2
        e = np.zeros(m)
        e[i] = 1.0
        rows.append(np.concatenate([J[j], e])[None, :])
        rhs.append([bnd[j]])
        rows.append(np.concatenate([np.zeros(n), e])[None, :])
        rhs.append([0.0])
    res = solve_qp(G2, a2, np.vstack(rows), np.concatenate(rhs))
    return res if res.ok else fallback


def cbf_filter(u_cand, x, d, params, dt: float, mode: Mode = Mode.NORMAL,
               degraded: bool = False, u_ref=None, config: CbfConfig = CbfConfig(),
               m_dot_cap: float | None = None, v_offset: float = 0.0,
               v_reserve: float = 0.0, o2_backoff: float = 0.0) -> CbfResult:
    """Minimal range-scaled change of ``u_cand`` so every barrier satisfies
    h(x+) >= (1 - kappa) h(x) under the one-step affine prediction.

    The affine model is taken about ``u_ref`` (defaults to the clamped
    candidate), so filtering with a fixed reference is idempotent. With
    ``v_offset`` the volume barrier acts on the counter-lung volume with the
    known breathing excursion removed, and ``v_reserve`` (the excursion
    amplitude) is added to the volume floor. ``o2_backoff`` lowers the x_O2
    ceiling to cover estimation error when filtering an estimated state.
    """
    p = params.to_vector() if isinstance(params, pl.PlantParams) else params
    umin = np.asarray(config.u_min, float).copy()
    umax = np.asarray(config.u_max, float).copy()
    if m_dot_cap is not None:
        umax[pl.U_MDOT] = min(umax[pl.U_MDOT], max(0.0, m_dot_cap))
    uc = np.clip(np.asarray(u_cand, dtype=float), umin, umax)
    ur = uc.copy() if u_ref is None else np.clip(np.asarray(u_ref, float), umin, umax)
    xa = np.asarray(x, dtype=float)
    if xa.shape[0] == pl.NX:
        xa = np.concatenate([xa, np.zeros(pl.NA)])
    da = np.asarray(d, dtype=float)
    if v_offset != 0.0 or v_reserve != 0.0:
        xa = xa.copy()
        xa[pl.I_VCL] -= v_offset
        da = da.copy()
        da[pl.D_VBREATH] = 0.0
    xmax = config.x_o2_max_degraded if (mode == Mode.CASCADE and degraded) else config.x_o2_max
    xmax -= max(0.0, o2_backoff)
    lim = (xmax, config.pio2_min, config.co2_cap[Mode(mode)], config.v_min + v_reserve,
           config.uptd_max)
    kap = np.asarray(config.kappa)
    h_now, h1, J = _cbf_affine(xa, ur, da, p, dt, config.hu, 1e-6, *lim)
    floor = (1.0 - kap) * h_now
    if np.all(_next_margins(xa, uc, da, p, dt, lim) - floor >= -config.tol):
        return CbfResult(uc, "pass", (), h_now, False)
    # scale by the configured ranges so a tight injection cap cannot blow up the metric
    span = np.asarray(config.u_max, float) - np.asarray(config.u_min, float)
    span = np.where(span > 0, span, 1.0)
    G = np.diag(2.0 / span ** 2)
    a = -2.0 * uc / span ** 2
    box_C = np.vstack([np.eye(pl.NU), -np.eye(pl.NU)])
    box_b = np.concatenate([umin, -umax])
    out = None
    for it in range(config.refine_iters):
        if it > 0:
            _, h1, J = _cbf_affine(xa, ur, da, p, dt, config.hu, 1e-6, *lim)
        # rows: h1 + J (u - ur) >= (1 - kappa) h_now, aimed just inside so the
        # exact check clears its tolerance
        bnd = floor - h1 + J @ ur + 10.0 * config.tol
        out = _cbf_qp(G, a, J, bnd, box_C, box_b, uc, umin, umax, h_now)
        miss = _next_margins(xa, out.u, da, p, dt, lim) - floor
        if np.all(miss >= -config.tol):
            if out.dropped:
                # the relaxed command meets every barrier after all
                out = CbfResult(out.u, "filtered", (), h_now, False)
            return out
        # the affine model was taken too far from the answer (a drop included).
        # Nearly parallel rows make plain re-linearisation oscillate, so move
        # the linearisation point halfway.
        ur = out.u if it == 0 else ur + 0.5 * (out.u - ur)
    return out


@njit
def _next_margins(x, u, d, p, dt, lim):
    """Barrier values after one nonlinear step of the model."""
    y = _outputs(pl._step_fast(x, u, d, p, dt), u, d, p)
    return _barriers(y, lim[0], lim[1], lim[2], lim[3], lim[4])


def _cbf_qp(G, a, J, bnd, box_C, box_b, uc, umin, umax, h_now):
    """Projection QP, dropping barriers in relaxation order until feasible."""
    keep = list(range(5))
    dropped = []
    order = list(RELAX_ORDER)
    while True:
        C = np.vstack([J[keep], box_C])
        b = np.concatenate([bnd[keep], box_b])
        res = solve_qp(G, a, C, b)
        if res.ok:
            if dropped:
                res = _best_effort(G, a, C, b, J, bnd, dropped, res)
            u = np.clip(res.x[:pl.NU], umin, umax)
            status = "filtered" if not dropped else "override"
            return CbfResult(u, status, tuple(BARRIERS[i] for i in dropped), h_now,
                             bool(dropped))
        if not order:
            break
        j = order.pop(0)
        keep.remove(j)
        dropped.append(j)
    # only the inspired-O2 barrier remains and cannot be met: maximum injection
    u = uc.copy()
    u[pl.U_MDOT] = umax[pl.U_MDOT]
    return CbfResult(u, "override", tuple(BARRIERS[i] for i in dropped), h_now, True)


# --- PID baseline ----------------------------------------------------------------

@dataclass(frozen=True)
class PidGains:
    kp: float
    ki: float
    kd: float = 0.0
    bias: float = 0.0
    out_min: float = 0.0
    out_max: float = 1.0
    sign: float = 1.0     # +1: output rises when measurement falls below setpoint


@dataclass(frozen=True)
class PidConfig:
    pio2_set: float = 0.20          # atm
    co2_set: float = 0.005          # fraction
    tbed_set: float = 60.0          # C
    o2: PidGains = PidGains(kp=2.0, ki=0.05, bias=0.0, out_max=1.0, sign=1.0)
    fan: PidGains = PidGains(kp=150.0, ki=2.0, bias=0.5, sign=-1.0)
    bypass: PidGains = PidGains(kp=0.02, ki=2e-4, bias=0.0, sign=-1.0)


class PidLoop:
    """Single PID loop with conditional-integration anti-windup."""

    def __init__(self, gains: PidGains):
        self.g = gains
        self.integral = 0.0
        self.prev_err: float | None = None

    def step(self, setpoint: float, measured: float, dt: float) -> float:
        g = self.g
        e = g.sign * (setpoint - measured)
        de = 0.0 if self.prev_err is None else (e - self.prev_err) / dt
        self.prev_err = e
        raw = g.bias + g.kp * e + g.ki * self.integral + g.kd * de
        # integrate only when not pushing further into saturation
        if not ((raw >= g.out_max and e > 0) or (raw <= g.out_min and e < 0)):
            self.integral += e * dt
            raw = g.bias + g.kp * e + g.ki * self.integral + g.kd * de
        return min(g.out_max, max(g.out_min, raw))


def measured_pio2(x_o2: float, RH: float, T_bz: float, dP: float, P_a: float) -> float:
    """Wet inspired O2 partial pressure from sensor readings, atm."""
    rh = min(100.0, max(0.0, RH))
    return (P_a + dP - p_sat(T_bz) * rh / 100.0) * x_o2 / P_ATM


class PID:
    """Three independent fixed-setpoint loops; no knowledge of tank level."""

    def __init__(self, config: PidConfig = PidConfig()):
        self.config = config
        self.o2 = PidLoop(config.o2)
        self.fan = PidLoop(config.fan)
        self.bypass = PidLoop(config.bypass)

    def step(self, frame, dt: float) -> np.ndarray:
        from .sensors import median_vote
        c = self.config
        x_o2 = median_vote(*frame.x_O2_cells).value / 100.0
        pio2 = measured_pio2(x_o2, frame.RH, frame.T_bz, frame.dP, frame.P_a)
        return np.array([
            self.o2.step(c.pio2_set, pio2, dt),
            self.fan.step(c.co2_set, frame.x_CO2, dt),
            self.bypass.step(c.tbed_set, frame.T_bed, dt),
        ])


def pid_baseline(frame, setpoints: PidConfig = PidConfig(), dt: float = 1.0,
                 controller: PID | None = None) -> pl.ControlInput:
    """One PID step; pass ``controller`` to keep integrator state across calls."""
    ctl = controller if controller is not None else PID(setpoints)
    u = ctl.step(frame, dt)
    return pl.ControlInput(*u)


# --- fallback policy ---------------------------------------------------------

def fallback_policy(x, mode: Mode, u_prev, d, params, dt: float = 1.0,
                    co2_target: float = 0.005, tbed_limit: float = 60.0,
                    fan_min: float = 0.2, co2_triage: float = 0.03) -> np.ndarray:
    """Scripted fallback candidate keyed on mode.

    Normal holds the last command. Conservation meets nominal setpoints with
    the least flow. Emergency injects just enough for the inspired-O2 floor at
    minimum fan. Cascade follows triage order: the inspired-O2 floor first,
    then the fan sized for the cascade CO2 bound.
    """
    p = params.to_vector() if isinstance(params, pl.PlantParams) else params
    xa = np.asarray(x, dtype=float)
    if xa.shape[0] == pl.NX:
        xa = np.concatenate([xa, np.zeros(pl.NA)])
    da = np.asarray(d, dtype=float)
    u_prev = np.asarray(u_prev, dtype=float)
    if mode == Mode.NORMAL:
        return u_prev.copy()
    g = pl._derived(xa, u_prev, da, p)
    n = g[pl.G_NTOT]
    x_o2 = xa[pl.I_NO2] / n
    cons = g[pl.G_CONS]                       # mol/s
    bypass = float(np.clip((xa[pl.I_TBED] - tbed_limit) / 20.0, 0.0, 1.0))
    if mode == Mode.CONSERVATION:
        x_target = 0.21
        fan = _fan_for_co2(xa, da, p, co2_target, bypass)
    else:
        # smallest O2 fraction giving the inspired floor at the current composition
        dry = g[pl.G_PS] - p_sat(xa[pl.I_TBZ]) * g[pl.G_RH] / 100.0
        x_target = 0.16 * P_ATM / dry
        fan = fan_min
        if mode == Mode.CASCADE:
            fan = max(fan_min, _fan_for_co2(xa, da, p, co2_triage, bypass))
    deficit = max(0.0, (x_target - x_o2) * n / max(1e-9, 1.0 - x_target))
    inj_mol = cons + deficit / dt
    inj = min(1.0, inj_mol * 32.0)
    return np.array([inj, fan, bypass])


def _fan_for_co2(x, d, p, target, bypass):
    """Fan speed whose well-mixed removal holds ``target`` CO2 fraction."""
    vo2 = max(0.0, x[pl.I_VO2])
    prod = p[pl.P_RER] * vo2 / 22.414 / 60.0            # mol/s
    T_K = x[pl.I_TBZ] + 273.15
    g = pl._derived(x, np.array([0.0, 1.0, bypass]), d, p)
    eta = max(0.0, 1.0 - x[pl.I_XI]) ** p[pl.P_ETAEXP] * d[pl.D_ETA]
    need = (prod * 8.314 * T_K / (g[pl.G_PS] * target) * 60000.0
            / max(1e-6, 1.0 - bypass) / max(eta, 1e-3))
    qmax = pl._fan_flow(1.0, x[pl.I_XI], p)
    return float(np.clip(need / max(qmax, 1e-9), 0.0, 1.0))


# --- mode manager ------------------------------------------------------------

@dataclass(frozen=True)
class ModeConfig:
    conservation: float = 0.25
    emergency: float = 0.10
    hysteresis: float = 0.05
    pio2_danger: float = 0.17
    co2_danger: float = 0.03
    rh_danger: float = 80.0
    tbed_danger: float = 80.0
    tc_danger: float = 39.0


# cascade triage: lower index, higher priority
TRIAGE = ("P_iO2", "x_CO2", "RH", "T_bed")


@dataclass(frozen=True)
class ModeStatus:
    mode: Mode
    degraded: bool
    alarm: bool
    critical: tuple
    triage: tuple


class ModeManager:
    """Consumable-driven mode lattice with recovery hysteresis."""

    def __init__(self, config: ModeConfig = ModeConfig()):
        self.config = config
        self.mode = Mode.NORMAL
        self.alarm = False
        self._low: set = set()
        self._crit: set = set()
        self._danger = False

    def update(self, consumables: dict, params_now: dict | None = None,
               sensor_faults: tuple = (), alarm: bool = False) -> ModeStatus:
        """``consumables`` maps name to remaining fraction; ``params_now`` may
        hold P_iO2, x_CO2, RH, T_bed, T_c for the danger-zone check."""
        c = self.config
        h = c.hysteresis
        for name, frac in consumables.items():
            if frac < c.conservation:
                self._low.add(name)
            elif frac >= c.conservation + h:
                self._low.discard(name)
            if frac < c.emergency:
                self._crit.add(name)
            elif frac >= c.emergency + h:
                self._crit.discard(name)
        pn = params_now or {}
        danger_now = (pn.get("P_iO2", 1.0) < c.pio2_danger
                      or pn.get("x_CO2", 0.0) > c.co2_danger
                      or pn.get("T_c", 0.0) > c.tc_danger
                      or pn.get("T_bed", 0.0) > c.tbed_danger
                      or "breach" in sensor_faults)
        clear_now = (pn.get("P_iO2", 1.0) >= c.pio2_danger + 0.005
                     and pn.get("x_CO2", 0.0) <= c.co2_danger - 0.005
                     and pn.get("T_c", 0.0) <= c.tc_danger - 0.3
                     and pn.get("T_bed", 0.0) <= c.tbed_danger - 5.0
                     and "breach" not in sensor_faults)
        if danger_now:
            self._danger = True
        elif clear_now:
            self._danger = False
        if len(self._crit) >= 2:
            mode = Mode.CASCADE
        elif self._crit or self._danger:
            mode = Mode.EMERGENCY
        elif self._low:
            mode = Mode.CONSERVATION
        else:
            mode = Mode.NORMAL
        self.mode = mode
        if mode >= Mode.EMERGENCY or alarm:
            self.alarm = True
        triage = ()
        if mode == Mode.CASCADE:
            triage = self.triage(pn)
        return ModeStatus(mode, bool(mode == Mode.CASCADE and self.alarm), self.alarm,
                          tuple(sorted(self._crit)), triage)

    def triage(self, pn: dict) -> tuple:
        """Parameters outside their cascade limits, in priority order."""
        c = self.config
        limits = {"P_iO2": pn.get("P_iO2", 1.0) < 0.16, "x_CO2": pn.get("x_CO2", 0.0) > 0.03,
                  "RH": pn.get("RH", 0.0) > c.rh_danger, "T_bed": pn.get("T_bed", 0.0) > 80.0}
        return tuple(k for k in TRIAGE if limits[k])


def mode_manager(consumables: dict, params_now: dict | None = None,
                 sensor_faults: tuple = (), manager: ModeManager | None = None) -> ModeStatus:
    m = manager if manager is not None else ModeManager()
    return m.update(consumables, params_now, sensor_faults)
