"""Mission execution loop, trace schema and summary metrics."""

from __future__ import annotations

import dataclasses
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import plant as pl
from .config import HarnessConfig
from .control import (MPC, PID, Mode, ModeManager, cbf_filter, fallback_policy,
                      scarcity_lambda, thermal_threat)
from .estimation import (Y_CO2, Y_O2, Estimate, ScrubberHealth, SealMonitor, ekf_predict,
                         ekf_update, frame_vector, initial_covariance, predicted_measurement,
                         with_eta)
from .gas import pwm_plan, tidal_amplitude, tidal_frequency
from .physiology import metabolic_estimate
from .scenarios import ScenarioScript
from .sensors import sense

TRACE_VERSION = 1

X_O2_MAX = 0.235
PIO2_MIN = 0.16
PIO2_MAX = 0.50
CO2_LIMIT = 0.005
RH_LIMIT = 60.0
UPTD_LIMIT = 300.0
DEPLETED_KG = 1e-3              # kg; residual below one gram cannot be delivered usefully

CON_COLUMNS = ("con1_tank[kg]", "con2_CaOH2[kg]", "con3_desiccant[kg]", "con4_PiO2[atm]",
               "con5_xO2[-]", "con6_xCO2[-]", "con7_RH[%]", "con8_VCL[L]", "con9_UPTD[-]")
U_NAMES = (("m_dot_O2", "g/s"), ("omega_fan", "-"), ("phi_bypass", "-"))
DERIVED_COLUMNS = (("P_s", "Pa", pl.G_PS), ("RH", "%", pl.G_RH), ("P_iO2", "atm", pl.G_PIO2),
                   ("x_CO2", "-", pl.G_XCO2), ("n_vent", "mol/s", pl.G_VENT),
                   ("Q_circ", "L/min", pl.G_Q))
STRING_COLUMNS = ("mpc_status[-]", "cbf_status[-]")


def trace_columns() -> tuple:
    cols = ["t[s]"]
    cols += [f"{n}[{u}]" for n, u in zip(pl.STATE_NAMES, pl.STATE_UNITS)]
    cols += [f"{n}[mol]" for n in pl.AUDIT_NAMES]
    cols += [f"hat_{n}[{u}]" for n, u in zip(pl.STATE_NAMES, pl.STATE_UNITS)]
    cols += [f"{n}[{u}]" for n, u in U_NAMES]
    cols += [f"cand_{n}[{u}]" for n, u in U_NAMES]
    cols += [f"delta_{n}[{u}]" for n, u in U_NAMES]
    cols += ["mode[-]", "degraded[-]", "alarm[-]"]
    cols += list(CON_COLUMNS)
    cols += ["theta[-]", "lambda[-]"]
    cols += [f"{n}[{u}]" for n, u, _ in DERIVED_COLUMNS]
    cols += list(STRING_COLUMNS)
    return tuple(cols)


COLUMNS = trace_columns()


@dataclass
class MissionTrace:
    """Per-tick rows keyed by column name (units in brackets)."""

    columns: tuple
    data: dict
    meta: dict = field(default_factory=dict)
    fault: str | None = None

    def __len__(self) -> int:
        return len(self.data[self.columns[0]])

    def col(self, name: str) -> np.ndarray:
        """Column by full name or by bare name without units."""
        if name in self.data:
            v = self.data[name]
        else:
            hits = [c for c in self.columns if c.split("[")[0] == name]
            if len(hits) != 1:
                raise KeyError(name)
            v = self.data[hits[0]]
        return v if isinstance(v, list) else np.asarray(v, dtype=float)


@dataclass(frozen=True)
class MissionSummary:
    scenario: str
    controller: str
    seed: int
    duration_min: float
    t_emergency_min: float          # tank first at or below 10 % of its initial mass
    t_depletion_min: float          # tank empty; nan when not reached
    endurance_min: float            # depletion time, else the last logged time
    o2_used_kg: float
    peak_x_CO2_pct: float
    peak_T_c: float
    peak_T_c_hat: float
    vent_total_mol: float
    vent_O2_mol: float
    violations: dict                # margin column -> (count, max depth)
    normal_hard_violations: int
    mode_timeline: tuple            # (t_min, mode name) at each change
    fault: str | None = None

    @property
    def flagged(self) -> bool:
        return self.fault is not None


class _Log:
    def __init__(self):
        self.rows = {c: [] for c in COLUMNS}

    def add(self, values: dict):
        for c in COLUMNS:
            self.rows[c].append(values[c])

    def freeze(self) -> dict:
        return {c: (v if c in STRING_COLUMNS else np.asarray(v, dtype=float))
                for c, v in self.rows.items()}


def _margins(x, g, p, v_min):
    m_max = p[pl.P_QCAP] * p[pl.P_MDRY]
    pio2 = g[pl.G_PIO2]
    return (x[pl.I_MTANK], x[pl.I_MCAOH2], m_max - x[pl.I_MWATER],
            min(pio2 - 0.19, PIO2_MAX - pio2), X_O2_MAX - x[pl.I_XO2],
            CO2_LIMIT - g[pl.G_XCO2], RH_LIMIT - g[pl.G_RH], x[pl.I_VCL] - v_min,
            UPTD_LIMIT - x[pl.I_UPTD])


def _faults_at(scenario: ScenarioScript, t_s: float):
    leak = 0.0
    eta = 1.0
    for f in scenario.faults:
        if t_s / 60.0 >= f.onset_min:
            if f.kind in ("leak", "breach"):
                leak += f.magnitude
            elif f.kind == "scrubber_bias":
                eta *= f.magnitude
    return leak, eta


def _sensor_config(cfg: HarnessConfig, scenario: ScenarioScript):
    sc = cfg.sensors
    for f in scenario.faults:
        if f.kind == "o2_cell_drift":
            sc = dataclasses.replace(sc, cell_fault=f.cell, cell_fault_onset=f.onset_min * 60.0,
                                     cell_fault_rate=f.magnitude)
    return sc


def _d_array(dist: dict, v_breath: float, eta: float, leak: float) -> np.ndarray:
    return np.array([dist["W"], dist["T_ext"], dist["q_rad"], dist["c_toxic"], dist["P_a"],
                     v_breath, eta, leak])


def run_mission(scenario: ScenarioScript, controller: str = "mpc",
                config: HarnessConfig | None = None, seed: int | None = None,
                ) -> tuple[MissionTrace, MissionSummary]:
    """Simulate one mission until the duration cap, O2 depletion or a fault.

    Sensor noise and movement draw from separate streams spawned from the
    seed, so paired runs of different controllers see identical disturbances.
    """
    if controller not in ("mpc", "pid"):
        raise ValueError("controller must be 'mpc' or 'pid'")
    cfg = config if config is not None else HarnessConfig()
    seed = scenario.seed if seed is None else int(seed)
    mc = cfg.mission
    dt = mc.dt
    rng_sense, rng_move = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    sens_cfg = _sensor_config(cfg, scenario)

    dist0 = scenario.disturbance(0.0)
    x, plant_params = pl.initial_state(cfg.plant, W0=dist0["W"], n_total=mc.n_total,
                                       V_CL=mc.V_CL, T0=mc.T0, T_c0=mc.T_c0,
                                       tank_kg=cfg.tank.usable_kg, P_a=dist0["P_a"])
    p = plant_params.to_vector()
    m0 = x[pl.I_MTANK]
    caoh0 = x[pl.I_MCAOH2]
    m_water_max = p[pl.P_QCAP] * p[pl.P_MDRY]
    v_min = cfg.cbf.v_min

    est = Estimate(x.copy(), initial_covariance())
    health = ScrubberHealth()
    seal = SealMonitor()
    modes = ModeManager(cfg.mode)
    mpc = MPC(p, cfg.mpc, cfg.tidal, v_min=v_min) if controller == "mpc" else None
    pid = PID(cfg.pid) if controller == "pid" else None
    filter_on = not (controller == "pid" and mc.raw_pid)
    if mc.wall_clock_deadline:
        import time
        clock = time.perf_counter
    else:
        def clock():
            return 0.0

    n_steps = int(math.floor(scenario.duration_min * 60.0 / dt + 1e-9))
    phase = 0.0
    move = 0.0
    decay = math.exp(-dt / mc.movement_tau)
    u_prev = np.array([0.0, 0.5, 0.0])
    pwm_mode = None
    torso_hist = deque(maxlen=int(round(30.0 / dt)) + 1)
    cbf_alarm = False
    d_hat = None
    log = _Log()
    fault = None

    for k in range(n_steps + 1):
        t = k * dt
        dist = scenario.disturbance(t)
        leak, eta_true = _faults_at(scenario, t)
        # breathing excursion is known to the controller; movement is not
        amp = tidal_amplitude(x[pl.I_WHAT], cfg.tidal)
        breath_now = -amp * math.sin(phase)
        phase_next = phase + 2.0 * math.pi * tidal_frequency(x[pl.I_WHAT], cfg.tidal) * dt
        breath_next = -amp * math.sin(phase_next)
        sig = mc.movement_sigma * scenario.activity_at(t)
        move_next = move * decay + sig * math.sqrt(1.0 - decay * decay) * rng_move.standard_normal()
        v_tidal = (breath_next - breath_now) / dt
        v_move = (move_next - move) / dt
        d_true = _d_array(dist, v_tidal + v_move, eta_true, leak)

        try:
            frame = sense(x, u_prev, d_true, p, t, rng_sense, sens_cfg)
            if d_hat is None:
                d_hat = _d_array(dict(W=x[pl.I_WHAT], T_ext=frame.T_ext, q_rad=frame.q_rad,
                                      c_toxic=frame.toxic, P_a=frame.P_a), v_tidal, 1.0, 0.0)
            z, _, vote_fault = frame_vector(frame)
            y_prior = predicted_measurement(est.x, u_prev, d_hat, p)
            est = ekf_update(est, frame, u_prev, d_hat, p, cfg.ekf)
            xh = est.x
            suspended = bool(np.trace(est.P) > cfg.ekf.trace_suspend) or est.degraded
            eta_corr = health.update(z[Y_CO2] - y_prior[Y_CO2], suspended)
            seal_state = seal.update(t, frame.dP - p[pl.P_KCL] * breath_now,
                                     z[Y_O2], frame.toxic)

            g_hat = pl._derived(xh, u_prev, d_hat, p)
            W_est = metabolic_estimate(xh[pl.I_HR], g_hat[pl.G_RH], xh[pl.I_TTORSO],
                                       xh[pl.I_TC], xh[pl.I_XO2], cfg.plant.metabolic)
            d_hat = _d_array(dict(W=W_est, T_ext=frame.T_ext, q_rad=frame.q_rad,
                                  c_toxic=frame.toxic, P_a=frame.P_a), v_tidal, 1.0, 0.0)

            consumables = {"tank": xh[pl.I_MTANK] / m0, "sorbent": xh[pl.I_MCAOH2] / caoh0,
                           "desiccant": 1.0 - xh[pl.I_MWATER] / m_water_max}
            params_now = {"P_iO2": g_hat[pl.G_PIO2], "x_CO2": g_hat[pl.G_XCO2],
                          "RH": g_hat[pl.G_RH], "T_bed": xh[pl.I_TBED], "T_c": xh[pl.I_TC]}
            sensor_faults = tuple(n for n, on in (("breach", seal_state == "breach"),
                                                  ("slow_leak", seal_state == "slow_leak"),
                                                  ("o2_vote", vote_fault)) if on)
            status = modes.update(consumables, params_now, sensor_faults, cbf_alarm)
            mode = status.mode

            torso_hist.append(xh[pl.I_TTORSO])
            slope = ((torso_hist[-1] - torso_hist[0]) / (dt * (len(torso_hist) - 1))
                     if len(torso_hist) > 1 else 0.0)
            theta = thermal_threat(frame.q_rad, frame.T_ext, slope, cfg.threat)
            lam = scarcity_lambda(max(xh[pl.I_MTANK], 0.0), m0, cfg.mpc.lam0, cfg.mpc.alpha,
                                  cfg.mpc.lam_max)
            if theta > cfg.threat.threshold:
                lam *= cfg.threat.relief

            cap = max(0.0, x[pl.I_MTANK]) * 1000.0 / dt
            if mpc is not None:
                res = mpc.solve(xh, u_prev, with_eta(d_hat, eta_corr), mode, lam,
                                status.degraded, v_offset=breath_now, m_dot_cap=cap, clock=clock)
                mpc_status = res.status
                u_cand = res.u
                if res.status != "optimal":
                    u_cand = fallback_policy(xh, mode, u_prev, d_hat, p, dt)
                    mpc_status += "+fallback"
            else:
                mpc_status = "none"
                u_cand = pid.step(frame, dt)
            u_cand = np.asarray(u_cand, dtype=float)
            if filter_on:
                cres = cbf_filter(u_cand, xh, d_hat, p, dt, mode, status.degraded,
                                  u_ref=u_prev, config=cfg.cbf, m_dot_cap=cap,
                                  v_offset=breath_now,
                                  v_reserve=tidal_amplitude(max(xh[pl.I_WHAT], 0.0), cfg.tidal),
                                  o2_backoff=cfg.cbf.backoff_sigma
                                  * math.sqrt(max(est.P[pl.I_XO2, pl.I_XO2], 0.0)))
                u_cmd = cres.u
                cbf_status = cres.status
                cbf_alarm = cres.alarm
            else:
                u_cmd = np.clip(u_cand, pl.U_MIN, pl.U_MAX)
                cbf_status = "off"
            plan = pwm_plan(max(0.0, float(u_cmd[pl.U_MDOT])), cfg.valve, pwm_mode)
            pwm_mode = plan.mode
            u_app = np.array([min(plan.flow, cap), u_cmd[pl.U_FAN], u_cmd[pl.U_BYPASS]])
        except (pl.PlantFault, ValueError, np.linalg.LinAlgError) as exc:
            fault = f"t={t:g}s {type(exc).__name__}: {exc}"
            break

        g = pl._derived(x, u_app, d_true, p)
        row = {"t[s]": t}
        for i in range(pl.NXA):
            row[COLUMNS[1 + i]] = x[i]
        for i in range(pl.NX):
            row[COLUMNS[1 + pl.NXA + i]] = xh[i]
        for j, (n, u) in enumerate(U_NAMES):
            row[f"{n}[{u}]"] = u_app[j]
            row[f"cand_{n}[{u}]"] = u_cand[j]
            row[f"delta_{n}[{u}]"] = u_app[j] - u_cand[j]
        row["mode[-]"] = int(mode)
        row["degraded[-]"] = int(status.degraded)
        row["alarm[-]"] = int(status.alarm)
        for c, v in zip(CON_COLUMNS, _margins(x, g, p, v_min)):
            row[c] = v
        row["theta[-]"] = theta
        row["lambda[-]"] = lam
        for n, u, gi in DERIVED_COLUMNS:
            row[f"{n}[{u}]"] = g[gi]
        row["mpc_status[-]"] = mpc_status
        row["cbf_status[-]"] = cbf_status
        log.add(row)

        if k == n_steps or x[pl.I_MTANK] <= DEPLETED_KG:
            break
        try:
            x = pl.rk4_step(x, u_app, d_true, dt, p)
            est = ekf_predict(est, u_app, d_hat, dt, p, cfg.ekf)
        except pl.PlantFault as exc:
            fault = f"t={t + dt:g}s PlantFault: {exc}"
            break
        u_prev = u_app
        phase, move = phase_next, move_next

    trace = MissionTrace(COLUMNS, log.freeze(),
                         meta=dict(version=TRACE_VERSION, scenario=scenario.name,
                                   controller=controller, seed=seed, dt=dt),
                         fault=fault)
    return trace, summarize(trace)


def summarize(trace: MissionTrace) -> MissionSummary:
    """Mission metrics computed from the trace columns alone."""
    meta = trace.meta
    n = len(trace)
    nan = float("nan")
    if n == 0:
        return MissionSummary(meta.get("scenario", ""), meta.get("controller", ""),
                              int(meta.get("seed", 0)), 0.0, nan, nan, 0.0, 0.0, nan, nan, nan,
                              0.0, 0.0, {}, 0, (), trace.fault)
    t = trace.col("t[s]")
    tank = trace.col("m_O2_tank[kg]")
    m0 = tank[0]

    def first_time(mask):
        idx = np.flatnonzero(mask)
        return float(t[idx[0]] / 60.0) if idx.size else nan

    t_emerg = first_time(tank <= 0.1 * m0)
    t_dep = first_time(tank <= DEPLETED_KG)
    violations = {}
    for c in CON_COLUMNS:
        v = trace.col(c)
        bad = v < 0.0
        violations[c] = (int(bad.sum()), float(-v[bad].min()) if bad.any() else 0.0)
    mode = trace.col("mode[-]").astype(int)
    hard = ((trace.col(CON_COLUMNS[4]) < 0.0) | (trace.col("P_iO2[atm]") < PIO2_MIN)
            | (trace.col(CON_COLUMNS[7]) < 0.0))
    normal_hard = int(np.sum(hard & (mode == int(Mode.NORMAL))))
    changes = [0] + [i for i in range(1, n) if mode[i] != mode[i - 1]]
    timeline = tuple((float(t[i] / 60.0), Mode(mode[i]).name) for i in changes)
    return MissionSummary(
        scenario=meta.get("scenario", ""), controller=meta.get("controller", ""),
        seed=int(meta.get("seed", 0)),
        duration_min=float(t[-1] / 60.0),
        t_emergency_min=t_emerg, t_depletion_min=t_dep,
        endurance_min=t_dep if not math.isnan(t_dep) else float(t[-1] / 60.0),
        o2_used_kg=float(m0 - tank[-1]),
        peak_x_CO2_pct=float(trace.col("x_CO2[-]").max() * 100.0),
        peak_T_c=float(trace.col("T_c[C]").max()),
        peak_T_c_hat=float(trace.col("hat_T_c[C]").max()),
        vent_total_mol=float(trace.col("vent_total[mol]")[-1]),
        vent_O2_mol=float(trace.col("vent_O2[mol]")[-1]),
        violations=violations, normal_hard_violations=normal_hard,
        mode_timeline=timeline, fault=trace.fault)
