"""Acceptance criteria 1-21, one test each.

Every test records a one-line verdict; the terminal summary prints them in order.
"""

import dataclasses
import statistics

import numpy as np
import pytest

from lifeloop import control as ct
from lifeloop import estimation as es
from lifeloop import plant as pl
from lifeloop.constants import M_CAOH2, M_O2
from lifeloop.gas import GasInventory
from lifeloop.golden import golden_checks
from lifeloop.harness import run_mission
from lifeloop.physiology import vo2_of_work
from lifeloop.report import improvement_pct
from lifeloop.scenarios import get_scenario
from lifeloop.sensors import SENSOR_TABLE, SensorConfig, median_vote, sense

from conftest import nominal_d, nominal_u

RESULTS: dict = {}


def record(n: int, ok: bool, detail: str):
    RESULTS[n] = f"[{'PASS' if ok else 'FAIL'}] criterion {n:>2}: {detail}"
    assert ok, detail


# --- 1-10: desk constants -------------------------------------------------------

@pytest.mark.parametrize("n", range(1, 11))
def test_desk_constant(n):
    checks = [c for c in golden_checks() if c.criterion == n]
    assert checks
    detail = "; ".join(f"{c.name} = {c.value:.6g} in [{c.lo:.6g}, {c.hi:.6g}]" for c in checks)
    record(n, all(c.passed for c in checks), detail)


# --- 11: conservation audits ---------------------------------------------------

def test_conservation_audits_60_min():
    sc = dataclasses.replace(get_scenario("A"), duration_min=60.0)
    trace, summary = run_mission(sc, "mpc", seed=0)
    col = trace.col
    inj, cons = col("inj_O2[mol]")[-1], col("cons_O2[mol]")[-1]
    vent_o2, vent_n2, scrub = col("vent_O2[mol]")[-1], col("vent_N2[mol]")[-1], col("scrubbed[mol]")[-1]
    tank, nO2, nN2, caoh2 = (col(c) for c in ("m_O2_tank[kg]", "n_O2[mol]", "n_N2[mol]",
                                              "m_CaOH2[kg]"))
    errs = {
        "O2 tank mass": abs((tank[0] - tank[-1]) - inj * M_O2 * 1e-3) / (inj * M_O2 * 1e-3),
        "O2 inventory": abs((nO2[-1] - nO2[0]) - (inj - cons - vent_o2)) / max(inj, cons),
        "N2 inventory": abs((nN2[0] - nN2[-1]) - vent_n2) / nN2[0],
        "CaOH2 stoichiometry": abs((caoh2[0] - caoh2[-1]) - scrub * M_CAOH2 * 1e-3)
        / (scrub * M_CAOH2 * 1e-3),
    }
    worst = max(errs.values())
    record(11, worst <= 1e-6 and summary.fault is None,
           "max relative audit error " + ", ".join(f"{k} {v:.2e}" for k, v in errs.items())
           + " (limit 1e-6)")


# --- 12: RK4 order -------------------------------------------------------------

def test_rk4_order(x0, params):
    u, d = nominal_u(), nominal_d()

    def run(dt, T=600.0):
        x = x0.copy()
        for _ in range(int(round(T / dt))):
            x = pl.rk4_step(x, u, d, dt, params)
        return x

    ref = run(1.0 / 32.0)
    scale = np.maximum(np.abs(ref), 1e-3)
    e2 = np.max(np.abs(run(2.0) - ref) / scale)
    e1 = np.max(np.abs(run(1.0) - ref) / scale)
    ratio = e2 / e1
    record(12, 12.0 <= ratio <= 20.0, f"error ratio dt 2 s -> 1 s over 10 min = {ratio:.2f} "
           "in [12, 20]")


# --- 13: ZOH ---------------------------------------------------------------------

def test_zoh_matches_fine_integration():
    rng = np.random.default_rng(2024)
    n, m, dt, sub = 6, 2, 1.0, 1000
    worst = 0.0
    for _ in range(100):
        M = rng.standard_normal((n, n))
        A = M - (np.max(np.linalg.eigvals(M).real) + rng.uniform(0.1, 1.0)) * np.eye(n)
        B = rng.standard_normal((n, m))
        Ad, Bd = ct.zoh_discretize(A, B, dt)
        # columns of [Phi, Gamma]: x' = A x + B u from x = I, u = 0 and x = 0, u = I
        Y = np.hstack([np.eye(n), np.zeros((n, m))])
        U = np.hstack([np.zeros((m, n)), np.eye(m)])
        f = lambda y: A @ y + B @ U
        h = dt / sub
        for _ in range(sub):
            Y = pl.rk4_generic(f, Y, h)
        worst = max(worst, np.abs(Y[:, :n] - Ad).max(), np.abs(Y[:, n:] - Bd).max())
    record(13, worst <= 1e-8, f"max |ZOH - RK4(dt/1000)| over 100 systems = {worst:.2e} "
           "(limit 1e-8)")


# --- 14: EKF Jacobians and covariance --------------------------------------------

def _random_state(rng, x0):
    x = x0.copy()
    n = x[:4].sum() * rng.uniform(0.8, 1.3)
    xo2, xco2, xh2o = rng.uniform(0.17, 0.5), rng.uniform(1e-3, 0.04), rng.uniform(0.0, 0.04)
    x[pl.I_NO2], x[pl.I_NCO2], x[pl.I_NH2O] = xo2 * n, xco2 * n, xh2o * n
    x[pl.I_NN2] = n - x[:3].sum()
    x[pl.I_XO2] = xo2
    x[pl.I_VCL] = rng.uniform(2.5, 9.0)
    x[pl.I_MTANK] = rng.uniform(0.2, 3.0)
    x[pl.I_XI] = rng.uniform(0.0, 0.8)
    x[pl.I_MCAOH2] *= 1.0 - x[pl.I_XI]
    x[pl.I_MWATER] = rng.uniform(0.0, 0.05)
    x[pl.I_TBED] = rng.uniform(30.0, 70.0)
    x[pl.I_TBZ] = rng.uniform(25.0, 36.0)
    x[pl.I_TTORSO] = rng.uniform(30.0, 38.0)
    x[pl.I_HR] = rng.uniform(70.0, 170.0)
    x[pl.I_TC] = rng.uniform(36.8, 38.5)
    x[pl.I_WHAT] = rng.uniform(80.0, 500.0)
    x[pl.I_VO2] = vo2_of_work(x[pl.I_WHAT]) * rng.uniform(0.8, 1.2)
    x[pl.I_UPTD] = rng.uniform(0.0, 50.0)
    return x


def _central_jac(fun, x, idx, rel):
    cols = []
    for j in idx:
        h = rel * max(abs(x[j]), 1.0)
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        cols.append((fun(xp) - fun(xm)) / (2 * h))
    return np.array(cols).T


def test_ekf_jacobians_and_covariance(x0, params):
    rng = np.random.default_rng(14)
    u = nominal_u()
    d = nominal_d(300.0)
    rel = es.EkfConfig().jac_rel
    worst_f = worst_h = 0.0
    for _ in range(100):
        x = _random_state(rng, x0)
        F, _ = pl._jac_x(x, u, d, params, 1.0, rel)
        Fc = _central_jac(lambda v: pl._step_fast(v, u, d, params, 1.0)[:pl.NX], x,
                          range(pl.NX), rel / 10)
        worst_f = max(worst_f, np.linalg.norm(F - Fc) / np.linalg.norm(Fc))
        H, _ = es._h_jac(x, u, d, params, rel)
        Hc = _central_jac(lambda v: es._h(v, u, d, params), x, range(pl.NX), rel / 10)
        worst_h = max(worst_h, np.linalg.norm(H - Hc) / np.linalg.norm(Hc))

    # 10^4 predict/update cycles on a noisy run
    srng = np.random.default_rng(1414)
    xt = x0.copy()
    est = es.Estimate(x0.copy(), es.initial_covariance())
    min_eig, asym = np.inf, 0.0
    for k in range(10_000):
        W = 250.0 + 200.0 * np.sin(2 * np.pi * k / 900.0)
        dk = nominal_d(W)
        uk = np.array([0.03 + 0.02 * np.sin(k / 60.0), 0.8, 0.0])
        xt = pl.rk4_step(xt, uk, dk, 1.0, params)
        if xt[pl.I_MTANK] < 0.5:
            xt[pl.I_MTANK] = 3.0
        est = es.ekf_predict(est, uk, dk, 1.0, params)
        est = es.ekf_update(est, sense(xt, uk, dk, params, k + 1.0, srng), uk, dk, params)
        min_eig = min(min_eig, np.linalg.eigvalsh(est.P).min() / np.abs(est.P).max())
        asym = max(asym, np.abs(est.P - est.P.T).max())
    ok = worst_f <= 1e-4 and worst_h <= 1e-4 and min_eig >= -1e-12 and asym == 0.0
    record(14, ok, f"F rel err {worst_f:.2e}, H rel err {worst_h:.2e} (limit 1e-4); "
           f"min scaled eigenvalue of P over 1e4 cycles {min_eig:.2e}")


# --- 15: O2 cell voting ------------------------------------------------------------

def test_voting_single_cell_faults(x0, params):
    sig, quant = 100 * SENSOR_TABLE["x_O2"][0], 100 * SENSOR_TABLE["x_O2"][1]
    floor = 5 * sig + quant / 2
    rng = np.random.default_rng(15)
    faults = {
        "drift up": lambda t: 0.01 * t,
        "drift down": lambda t: -0.01 * t,
        "stuck 0": lambda t: -1e9,
        "stuck 100": lambda t: 1e9,
        "spikes": lambda t: 30.0 * ((t % 37) == 0),
        "erratic": lambda t: 8.0 * np.sin(t / 3.0),
    }
    u, d = nominal_u(), nominal_d()
    worst, outside = 0.0, 0
    for cell in range(3):
        for name, fn in faults.items():
            for t in range(600):
                x = x0 if t % 2 else _random_state(rng, x0)
                f = sense(x, u, d, params, float(t), rng)
                truth = 100.0 * x[pl.I_NO2] / x[:4].sum()
                cells = list(f.x_O2_cells)
                cells[cell] = min(100.0, max(0.0, truth + fn(t)))
                v = median_vote(*cells).value
                healthy = [c for i, c in enumerate(cells) if i != cell]
                outside += not (min(healthy) <= v <= max(healthy))
                worst = max(worst, abs(v - truth))
    record(15, outside == 0 and worst <= floor,
           f"max |vote - truth| {worst:.3f} pp over 18 fault trajectories (floor {floor:.2f} pp); "
           f"{outside} votes outside the healthy-cell envelope")


# --- 16: CBF forward invariance and idempotence -----------------------------------

def _hard_margins(x, u, d, p, cfg):
    y = ct._outputs(x, u, d, p)
    return ct._barriers(y, cfg.x_o2_max, cfg.pio2_min, cfg.co2_cap[ct.Mode.NORMAL],
                        cfg.v_min, cfg.uptd_max)


def test_cbf_forward_invariance(x0, params):
    rng = np.random.default_rng(16)
    cfg = ct.CbfConfig()
    violations, steps, idem_worst, idem_n, overrides = 0, 0, 0.0, 0, 0
    deepest = 0.0
    while steps < 10_000:
        x = _random_state(rng, x0)
        x[pl.I_XO2] = x[pl.I_NO2] / x[:4].sum()
        if np.any(_hard_margins(x, nominal_u(), nominal_d(), params, cfg) <= 0):
            continue
        d = nominal_d(rng.uniform(80.0, 500.0))
        for _ in range(500):
            uc = rng.uniform(0.0, 1.0, 3)
            r = ct.cbf_filter(uc, x, d, params, 1.0, config=cfg)
            if r.status == "override":
                overrides += 1
            elif steps % 10 == 0:
                again = ct.cbf_filter(r.u, x, d, params, 1.0, config=cfg, u_ref=np.clip(uc, 0, 1))
                idem_worst = max(idem_worst, np.abs(again.u - r.u).max())
                idem_n += 1
            x = pl.rk4_step(x, r.u, d, 1.0, params)
            h = _hard_margins(x, r.u, d, params, cfg)
            if np.any(h < 0):
                violations += 1
                deepest = max(deepest, float(-h.min()))
            steps += 1
            if x[pl.I_MTANK] < 0.05:
                break
    ok = violations == 0 and idem_worst <= 1e-8
    record(16, ok, f"{violations} hard-barrier violations in {steps} filtered steps "
           f"(deepest {deepest:.2e}, {overrides} overrides); idempotence error "
           f"{idem_worst:.1e} over {idem_n} checks (limit 1e-8)")


# --- 17: gas-phase cycle neutrality --------------------------------------------------

def test_cycle_neutrality(x0, params):
    inv = GasInventory(0.84, 0.0016, 0.02, 3.1584)
    after = inv.after_cycle(1.0, 0.85, 0.85, 1.0)
    d_book = abs(after.n_total - inv.n_total)

    # the plant's dry-gas rates with injection matched to uptake and the
    # respiratory quotient matched to the scrub rate: no net molar source
    x = x0.copy()
    x[pl.I_NCO2] = 0.02
    x[pl.I_NN2] -= 0.02
    u, d = nominal_u(), nominal_d()
    p = params.copy()
    g = pl.derived(x, u, d, p)
    vo2_mol_s = x[pl.I_VO2] / 22.414 / 60.0
    p[pl.P_RER] = g["r_scrub"] / vo2_mol_s
    u[pl.U_MDOT] = g["cons_O2"] * M_O2
    g = pl.derived(x, u, d, p)
    assert g["n_vent"] == 0.0
    dx = pl.plant_rhs(x, u, d, p)
    period = 1.0 / g["cons_O2"]             # seconds to take up 1 mol of O2
    d_plant = abs(dx[pl.I_NO2] + dx[pl.I_NCO2] + dx[pl.I_NN2]) * period
    worst = max(d_book, d_plant)
    record(17, worst <= 1e-9, f"|dn_total| per 1-mol cycle: bookkeeping {d_book:.1e}, "
           f"plant dry-gas rates {d_plant:.1e} mol (limit 1e-9)")


# --- 18-21: paired scenario runs --------------------------------------------------------

SEEDS = range(5)


@pytest.fixture(scope="module")
def paired():
    out = {}
    for name in ("A", "B", "C"):
        sc = get_scenario(name)
        for seed in SEEDS:
            out[name, seed] = {ctl: run_mission(sc, ctl, seed=seed)[1] for ctl in ("mpc", "pid")}
    return out


def test_endurance_ordering(paired):
    parts, ok = [], True
    for name in ("A", "B", "C"):
        gains = [improvement_pct(paired[name, s]["mpc"].endurance_min,
                                 paired[name, s]["pid"].endurance_min) for s in SEEDS]
        wins = sum(paired[name, s]["mpc"].endurance_min > paired[name, s]["pid"].endurance_min
                   for s in SEEDS)
        med = statistics.median(gains)
        ok &= wins == len(SEEDS) and med >= 10.0
        parts.append(f"{name}: MPC longer on {wins}/5 seeds, median gain {med:+.2f} %")
    record(18, ok, "; ".join(parts) + " (need all seeds and >= +10 %)")


def test_co2_ordering(paired):
    parts, ok = [], True
    for name in ("A", "B", "C"):
        m = max(paired[name, s]["mpc"].peak_x_CO2_pct for s in SEEDS)
        p = max(paired[name, s]["pid"].peak_x_CO2_pct for s in SEEDS)
        ok &= m <= p
        parts.append(f"{name}: MPC {m:.3f} % vs PID {p:.3f} %")
    mb = max(paired["B", s]["mpc"].peak_x_CO2_pct for s in SEEDS)
    pb = max(paired["B", s]["pid"].peak_x_CO2_pct for s in SEEDS)
    ok &= mb <= 0.5 < pb
    record(19, ok, "; ".join(parts) + " (need MPC <= PID, and on B MPC <= 0.5 % < PID)")


def test_core_temperature_ordering(paired):
    parts, ok = [], True
    for name in ("A", "B", "C"):
        m = max(paired[name, s]["mpc"].peak_T_c_hat for s in SEEDS)
        p = max(paired[name, s]["pid"].peak_T_c_hat for s in SEEDS)
        ok &= m <= p
        parts.append(f"{name}: MPC {m:.3f} C vs PID {p:.3f} C")
    record(20, ok, "; ".join(parts) + " (need MPC <= PID)")


def test_normal_mode_hard_constraints(paired):
    total = sum(paired[k]["mpc"].normal_hard_violations for k in paired)
    faults = [k for k in paired if paired[k]["mpc"].flagged]
    record(21, total == 0 and not faults,
           f"{total} normal-mode hard violations across {len(paired)} MPC runs; "
           f"{len(faults)} faulted runs")
