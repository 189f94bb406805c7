"""Coupled loop plant: 18-state right-hand side, RK4 integration and audits.

The compiled kernels work on flat arrays. States 0..17 are the physical
state vector; entries 18..23 are audit accumulators integrated alongside
so that RK4 carries the linear bookkeeping invariants exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from ._jit import njit
from .chem import DesiccantParams, ScrubberParams, reaction_enthalpy, swelling_ratio
from .constants import CP_AIR, M_CAOH2, M_H2O, M_N2, M_O2, M_CO2, P_ATM, R_GAS, T_ZERO
from .gas import VentParams
from .physiology import MetabolicParams, _p_sat, _pio2_wet, _uptd_rate, _vo2

# --- state layout ----------------------------------------------------------

STATE_NAMES = (
    "n_O2", "n_CO2", "n_H2O", "n_N2", "x_O2", "V_CL", "m_O2_tank", "m_CaOH2",
    "xi", "M_water", "T_bed", "T_bz", "T_torso", "HR", "T_c", "VO2", "W_hat", "UPTD",
)
STATE_UNITS = (
    "mol", "mol", "mol", "mol", "-", "L", "kg", "kg",
    "-", "kg", "C", "C", "C", "bpm", "C", "L/min", "W", "-",
)
AUDIT_NAMES = ("inj_O2", "cons_O2", "vent_O2", "vent_N2", "scrubbed", "vent_total")
NX = 18
NA = 6
NXA = NX + NA

(I_NO2, I_NCO2, I_NH2O, I_NN2, I_XO2, I_VCL, I_MTANK, I_MCAOH2, I_XI, I_MWATER,
 I_TBED, I_TBZ, I_TTORSO, I_HR, I_TC, I_VO2, I_WHAT, I_UPTD) = range(18)
(A_INJ, A_CONS, A_VENTO2, A_VENTN2, A_SCRUB, A_VENT) = range(18, 24)

# inputs and disturbances
NU = 3
U_MDOT, U_FAN, U_BYPASS = range(3)
U_MIN = np.array([0.0, 0.0, 0.0])
U_MAX = np.array([1.0, 1.0, 1.0])
ND = 8
D_W, D_TEXT, D_QRAD, D_TOXIC, D_PA, D_VBREATH, D_ETA, D_LEAK = range(8)

# derived algebraic outputs
DERIVED_NAMES = (
    "P_s", "RH", "P_iO2", "n_vent", "Q_circ", "r_scrub", "x_CO2", "x_H2O",
    "T_supply", "Q_scrub", "Q_ads", "n_total", "a_w", "n_ads", "cons_O2",
)
NDER = len(DERIVED_NAMES)
(G_PS, G_RH, G_PIO2, G_VENT, G_Q, G_R, G_XCO2, G_XH2O, G_TSUP, G_QSCRUB,
 G_QADS, G_NTOT, G_AW, G_NADS, G_CONS) = range(NDER)

# --- parameter vector layout ----------------------------------------------

PARAM_NAMES = (
    # counter-lung and vent
    "k_CL", "V_CL0", "dP_crack", "C_d", "A_v", "V_rigid",
    # scrubber
    "k_scrub", "q_ref", "eta_exp", "m_CaOH2_0", "bed_heat_cap", "UA_wall", "dH_scrub",
    # fan and bed resistance
    "Q_max", "f_derate", "eps0", "sigma", "q_min_frac",
    # desiccant
    "q_m", "C_G", "K_G", "k_ldf", "m_dry", "q_cap", "dH_ads", "E_q",
    # coolers and suit thermal
    "T_cool", "eps_hx1", "eps_hx2", "UA_des", "C_bz", "hA_bz", "C_torso", "UA_shell",
    "tauA_shell", "h_conv0", "h_conv1", "E_sweat", "sweat_rh", "T_sweat", "sweat_span", "k_cond",
    # physiology
    "VO2_rest", "gamma", "beta", "RER", "tau_W", "tau_VO2", "tau_HR", "HR_rest",
    "HR_per_W", "HR_max", "HR_per_RH", "HR_per_Tc", "HR_per_Ttorso", "HR_hypox_gain",
    "x_hypox", "x_hypox_scale", "C_c", "G_skin", "resp_sensible", "water_per_VO2",
    "K_tc", "torso_offset", "heat_per_VO2",
)
NP = len(PARAM_NAMES)
(P_KCL, P_VCL0, P_DPCRACK, P_CD, P_AV, P_VRIGID,
 P_KSCRUB, P_QREF, P_ETAEXP, P_MCAOH20, P_BEDC, P_UAWALL, P_DHSCRUB,
 P_QMAX, P_FDERATE, P_EPS0, P_SIGMA, P_QMINF,
 P_QM, P_CG, P_KG, P_KLDF, P_MDRY, P_QCAP, P_DHADS, P_EQ,
 P_TCOOL, P_EPSHX1, P_EPSHX2, P_UADES, P_CBZ, P_HABZ, P_CTORSO, P_UASHELL,
 P_TAUA, P_HCONV0, P_HCONV1, P_ESWEAT, P_SWEATRH, P_TSWEAT, P_SWEATSPAN, P_KCOND,
 P_VO2REST, P_GAMMA, P_BETA, P_RER, P_TAUW, P_TAUVO2, P_TAUHR, P_HRREST,
 P_HRPERW, P_HRMAX, P_HRPERRH, P_HRPERTC, P_HRPERTT, P_HRHYPG,
 P_XHYP, P_XHYPS, P_CC, P_GSKIN, P_RESPS, P_WATERVO2,
 P_KTC, P_TOFF, P_HEATVO2) = range(NP)


@dataclass(frozen=True)
class ThermalParams:
    """Coolers, breathing-zone and torso heat paths. All calibration values."""

    T_cool: float = 30.0          # C, heat-sink temperature of the loop coolers
    eps_hx1: float = 0.9          # cooler effectiveness after the scrubber
    eps_hx2: float = 0.8          # cooler effectiveness after the desiccant
    UA_des: float = 2.0           # W/K, desiccant bed coupling that buffers adsorption heat
    C_bz: float = 500.0           # J/K
    hA_bz: float = 5.0            # W/K
    C_torso: float = 4.0e4        # J/K
    UA_shell: float = 1.5         # W/K
    tauA_shell: float = 0.01      # m^2, radiant transmissivity times shell area
    h_conv0: float = 2.0          # W/K
    h_conv1: float = 10.0         # W/K at full fan
    E_sweat: float = 650.0        # W, evaporative capacity into dry gas
    sweat_rh: float = 0.6         # fraction of sweat evaporation blocked at 100 % RH
    T_sweat: float = 30.0         # C, torso temperature at sweating onset
    sweat_span: float = 4.0       # C, span to full sweating
    k_cond: float = 0.05          # 1/s, relaxation of supersaturated vapour


@dataclass(frozen=True)
class FanParams:
    Q_max: float = 400.0          # L/min at full speed
    f_derate: float = 0.02        # flow loss per unit rise in viscous resistance ratio
    q_min_frac: float = 0.2


@dataclass(frozen=True)
class PlantParams:
    scrubber: ScrubberParams = field(default_factory=ScrubberParams)
    desiccant: DesiccantParams = field(default_factory=DesiccantParams)
    vent: VentParams = field(default_factory=VentParams)
    metabolic: MetabolicParams = field(default_factory=MetabolicParams)
    thermal: ThermalParams = field(default_factory=ThermalParams)
    fan: FanParams = field(default_factory=FanParams)
    V_rigid: float = 95.0         # L, rigid gas volume outside the counter-lung

    def to_vector(self) -> np.ndarray:
        s, de, v, m, t, f = (self.scrubber, self.desiccant, self.vent,
                             self.metabolic, self.thermal, self.fan)
        vals = dict(
            k_CL=v.k_CL, V_CL0=v.V_CL0, dP_crack=v.dP_crack, C_d=v.C_d, A_v=v.A_v,
            V_rigid=self.V_rigid,
            k_scrub=s.k_ov_as_v, q_ref=s.q_ref, eta_exp=s.eta_exponent,
            m_CaOH2_0=s.caoh2_mass_kg, bed_heat_cap=s.rho_cp * s.V_bed, UA_wall=s.UA_wall,
            dH_scrub=-reaction_enthalpy() * 1e3,
            Q_max=f.Q_max, f_derate=f.f_derate, eps0=s.eps0, sigma=swelling_ratio(s.chi_w),
            q_min_frac=f.q_min_frac,
            q_m=de.q_m, C_G=de.C_G, K_G=de.K_G, k_ldf=de.k_ldf, m_dry=de.dry_mass,
            q_cap=de.capacity_fraction, dH_ads=de.dH_ads * 1e3, E_q=de.E_q,
            VO2_rest=m.VO2_rest, gamma=m.gamma, beta=m.beta, RER=m.R, tau_W=m.tau_W,
            tau_VO2=m.tau_VO2, tau_HR=m.tau_HR, HR_rest=m.HR_rest, HR_per_W=m.HR_per_W,
            HR_max=m.HR_max, HR_per_RH=m.HR_per_RH, HR_per_Tc=m.HR_per_Tc,
            HR_per_Ttorso=m.HR_per_Ttorso, HR_hypox_gain=m.HR_hypox_gain,
            x_hypox=m.x_hypox, x_hypox_scale=m.x_hypox_scale, C_c=m.C_c,
            G_skin=m.G_skin, resp_sensible=m.resp_sensible, water_per_VO2=m.water_per_VO2,
            K_tc=m.K_tc, torso_offset=m.torso_offset, heat_per_VO2=m.heat_per_VO2,
        )
        for fl in fields(ThermalParams):
            vals[fl.name] = getattr(t, fl.name)
        return np.array([float(vals[n]) for n in PARAM_NAMES])


# --- value types -----------------------------------------------------------

@dataclass(frozen=True)
class ControlInput:
    m_dot_O2: float = 0.0      # g/s
    omega_fan: float = 0.5     # 0..1
    phi_bypass: float = 0.0    # 0..1

    def __post_init__(self):
        if not 0.0 <= self.phi_bypass <= 1.0:
            raise ValueError("phi_bypass must lie in [0, 1]")

    def to_array(self) -> np.ndarray:
        return np.array([self.m_dot_O2, self.omega_fan, self.phi_bypass])


@dataclass(frozen=True)
class Disturbance:
    W: float = 250.0
    T_ext: float = 40.0        # C
    q_rad: float = 1.0         # kW/m^2
    c_toxic: float = 0.0       # ppm
    P_a: float = P_ATM         # Pa
    V_breath_dot: float = 0.0  # L/s
    eta_corr: float = 1.0      # model-side scrubber effectiveness multiplier
    leak: float = 0.0          # mol s^-1 Pa^-1, suit leak conductance

    def to_array(self) -> np.ndarray:
        return np.array([self.W, self.T_ext, self.q_rad, self.c_toxic, self.P_a,
                         self.V_breath_dot, self.eta_corr, self.leak])


@dataclass(frozen=True)
class PlantState:
    n_O2: float
    n_CO2: float
    n_H2O: float
    n_N2: float
    x_O2: float
    V_CL: float
    m_O2_tank: float
    m_CaOH2: float
    xi: float
    M_water: float
    T_bed: float
    T_bz: float
    T_torso: float
    HR: float
    T_c: float
    VO2: float
    W_hat: float
    UPTD: float

    def to_array(self) -> np.ndarray:
        out = np.zeros(NXA)
        out[:NX] = [getattr(self, n) for n in STATE_NAMES]
        return out

    @classmethod
    def from_array(cls, x: np.ndarray) -> "PlantState":
        return cls(*[float(v) for v in x[:NX]])


class PlantFault(RuntimeError):
    pass


# --- compiled kernels ------------------------------------------------------

@njit
def _fan_flow(omega, xi, p):
    eps0 = p[P_EPS0]
    eps = 1.0 - (1.0 - eps0) * (1.0 + xi * (p[P_SIGMA] - 1.0))
    if eps < 0.02:
        eps = 0.02
    ratio = ((1.0 - eps) ** 2 / eps ** 3) / ((1.0 - eps0) ** 2 / eps0 ** 3)
    derate = 1.0 - p[P_FDERATE] * (ratio - 1.0)
    if derate < p[P_QMINF]:
        derate = p[P_QMINF]
    w = omega if omega > 0.0 else 0.0
    return w * p[P_QMAX] * derate


@njit
def _gab_t(a_w, T_c, p):
    qm = p[P_QM] * math.exp(p[P_EQ] / R_GAS * (1.0 / (T_c + T_ZERO) - 1.0 / 298.15))
    ka = p[P_KG] * a_w
    return qm * p[P_CG] * ka / ((1.0 - ka) * (1.0 - ka + p[P_CG] * ka))


@njit
def _eval(x, u, d, p, dx, g):
    """Write the time derivative into ``dx`` (length 24) and outputs into ``g``."""
    nO2 = max(x[I_NO2], 0.0)
    nCO2 = max(x[I_NCO2], 0.0)
    nH2O = max(x[I_NH2O], 0.0)
    nN2 = max(x[I_NN2], 0.0)
    n = nO2 + nCO2 + nH2O + nN2
    if n < 1e-9:
        n = 1e-9
    xO2 = nO2 / n
    xCO2 = nCO2 / n
    xH2O = nH2O / n
    xN2 = nN2 / n
    T_bz = x[I_TBZ]
    T_K = T_bz + T_ZERO
    T_t = x[I_TTORSO]
    P_a = d[D_PA]
    P_s = P_a + p[P_KCL] * (x[I_VCL] - p[P_VCL0])
    if P_s < 0.5 * P_a:
        P_s = 0.5 * P_a
    M_bar = (xO2 * M_O2 + xCO2 * M_CO2 + xH2O * M_H2O + xN2 * M_N2) * 1e-3
    rho = P_s * M_bar / (R_GAS * T_K)

    # exhaust valve and leak
    dp = P_s - (P_a + p[P_DPCRACK])
    vent = 0.0
    if dp > 0.0:
        vent = p[P_CD] * p[P_AV] / M_bar * math.sqrt(2.0 * rho * dp)
    gauge = P_s - P_a
    if gauge > 0.0:
        vent += d[D_LEAK] * gauge

    # circulation
    xi = x[I_XI]
    if xi < 0.0:
        xi = 0.0
    if xi > 1.0:
        xi = 1.0
    Q = _fan_flow(u[U_FAN], xi, p)                  # L/min
    vol_flow = Q / 60000.0                           # m^3/s
    mdot = vol_flow * rho                            # kg/s
    ndot = vol_flow * P_s / (R_GAS * T_K)            # mol/s
    phi = u[U_BYPASS]
    if phi < 0.0:
        phi = 0.0
    if phi > 1.0:
        phi = 1.0

    # scrubbing
    # plug-flow form of the linear volumetric law: r -> K*eta*p_CO2 at low
    # transfer units and never exceeds the CO2 carried into the bed
    r = 0.0
    nb = (1.0 - phi) * ndot
    if x[I_MCAOH2] > 0.0 and nb > 0.0:
        eta = (1.0 - xi) ** p[P_ETAEXP] * d[D_ETA]
        k_eff = p[P_KSCRUB] * math.sqrt((1.0 - phi) * Q / p[P_QREF])
        ntu = k_eff * eta * P_s / nb
        r = nb * xCO2 * (1.0 - math.exp(-ntu))
    q_scrub = p[P_DHSCRUB] * r

    # metabolism
    vo2 = x[I_VO2] if x[I_VO2] > 0.0 else 0.0
    cons = vo2 / 22.414 / 60.0
    if nO2 < 0.02:
        cons *= nO2 / 0.02
    co2_prod = p[P_RER] * vo2 / 22.414 / 60.0
    h2o_exh = p[P_WATERVO2] * vo2 / 60.0 / M_H2O

    # O2 injection
    inj_g = u[U_MDOT]
    if inj_g < 0.0 or x[I_MTANK] <= 0.0:
        inj_g = 0.0
    inj = inj_g / M_O2

    # gas train temperatures
    T_bed = x[I_TBED]
    T1 = T_bed - p[P_EPSHX1] * (T_bed - p[P_TCOOL])
    T_mix = (1.0 - phi) * T1 + phi * T_t
    if Q <= 0.0:
        T_mix = T_t

    # desiccant
    p_w = xH2O * P_s
    a_w = p_w / _p_sat(T_mix)
    a_lim = 0.999 / p[P_KG]
    if a_w > a_lim:
        a_w = a_lim
    q_e = _gab_t(a_w, T_mix, p)
    if q_e > p[P_QCAP]:
        q_e = p[P_QCAP]
    q_bar = x[I_MWATER] / p[P_MDRY]
    ads_kg = p[P_MDRY] * p[P_KLDF] * (q_e - q_bar)
    flux = 0.95 * ndot * xH2O * M_H2O * 1e-3
    if ads_kg > flux:
        ads_kg = flux
    if ads_kg > 0.0 and q_bar >= p[P_QCAP]:
        ads_kg = 0.0
    ads = ads_kg / (M_H2O * 1e-3)
    q_ads = p[P_DHADS] * ads_kg
    cp_flow = mdot * CP_AIR
    T2 = T_mix + q_ads / (cp_flow + p[P_UADES])
    T_sup = T2 - p[P_EPSHX2] * (T2 - p[P_TCOOL])

    # condensation of supersaturated vapour in the breathing zone
    psat_bz = _p_sat(T_bz)
    cond = 0.0
    if p_w > psat_bz:
        cond = p[P_KCOND] * (p_w - psat_bz) / P_s * n
    RH = 100.0 * p_w / psat_bz
    if RH > 100.0:
        RH = 100.0

    # species balances
    vtot = vent
    d_nO2 = inj - cons - xO2 * vtot
    d_nCO2 = co2_prod - r - xCO2 * vtot
    d_nH2O = h2o_exh + r - ads - cond - xH2O * vtot
    d_nN2 = -xN2 * vtot
    d_n = d_nO2 + d_nCO2 + d_nH2O + d_nN2
    dx[I_NO2] = d_nO2
    dx[I_NCO2] = d_nCO2
    dx[I_NH2O] = d_nH2O
    dx[I_NN2] = d_nN2
    dx[I_XO2] = (d_nO2 - xO2 * d_n) / n

    # suit thermal states
    dT_bed = (q_scrub - (1.0 - phi) * cp_flow * (T_bed - T_t)
              - p[P_UAWALL] * (T_bed - T_t)) / p[P_BEDC]
    dT_bz = (cp_flow * (T_sup - T_bz) - p[P_HABZ] * (T_bz - T_t)) / p[P_CBZ]
    T_c = x[I_TC]
    s = (T_t - p[P_TSWEAT]) / p[P_SWEATSPAN]
    if s < 0.0:
        s = 0.0
    if s > 1.0:
        s = 1.0
    q_sweat = p[P_ESWEAT] * (1.0 - p[P_SWEATRH] * RH / 100.0) * s
    h_conv = p[P_HCONV0] + p[P_HCONV1] * (u[U_FAN] if u[U_FAN] > 0.0 else 0.0)
    q_skin = p[P_GSKIN] * (T_c - T_t)
    dT_t = (q_skin + p[P_UASHELL] * (d[D_TEXT] - T_t) + d[D_QRAD] * 1000.0 * p[P_TAUA]
            - h_conv * (T_t - T_sup) - p[P_HABZ] * (T_t - T_bz) - q_sweat) / p[P_CTORSO]

    # counter-lung: every net molar term plus thermal expansion and breathing
    V_gas = p[P_VRIGID] + x[I_VCL]
    dx[I_VCL] = (R_GAS * T_K / P_s * d_n * 1000.0 + V_gas / T_K * dT_bz
                 + d[D_VBREATH])

    dx[I_MTANK] = -inj_g * 1e-3
    dx[I_MCAOH2] = -r * M_CAOH2 * 1e-3
    dx[I_XI] = r * M_CAOH2 * 1e-3 / p[P_MCAOH20]
    dx[I_MWATER] = ads_kg
    dx[I_TBED] = dT_bed
    dx[I_TBZ] = dT_bz
    dx[I_TTORSO] = dT_t

    # physiology
    W_hat = x[I_WHAT]
    dx[I_WHAT] = (d[D_W] - W_hat) / p[P_TAUW]
    vo2_ss = _vo2(W_hat, p[P_VO2REST], p[P_GAMMA], p[P_BETA])
    dx[I_VO2] = (vo2_ss - vo2) / p[P_TAUVO2]
    hr_w = p[P_HRREST] + p[P_HRPERW] * (W_hat if W_hat > 0.0 else 0.0)
    if hr_w > p[P_HRMAX]:
        hr_w = p[P_HRMAX]
    hr_h = (p[P_HRPERRH] * max(0.0, RH - 50.0) + p[P_HRPERTT] * max(0.0, T_t - 35.0)
            + p[P_HRPERTC] * max(0.0, T_c - 37.5))
    sx = (p[P_XHYP] - xO2) / p[P_XHYPS]
    hr_x = p[P_HRHYPG] * sx * sx if sx > 0.0 else 0.0
    hr_ss = hr_w + hr_h + hr_x
    if hr_ss > p[P_HRMAX]:
        hr_ss = p[P_HRMAX]
    dx[I_HR] = (hr_ss - x[I_HR]) / p[P_TAUHR]
    q_met = p[P_HEATVO2] * vo2_ss - W_hat
    q_resp = 2430.0 * h2o_exh * M_H2O + p[P_RESPS] * vo2
    corr = p[P_KTC] * (T_t - (T_c - p[P_TOFF]))
    dx[I_TC] = (q_met - q_resp - q_skin + corr) / p[P_CC]
    pio2 = _pio2_wet(P_s, T_bz, RH, xO2)
    dx[I_UPTD] = _uptd_rate(pio2)

    # audits
    dx[A_INJ] = inj
    dx[A_CONS] = cons
    dx[A_VENTO2] = xO2 * vtot
    dx[A_VENTN2] = xN2 * vtot
    dx[A_SCRUB] = r
    dx[A_VENT] = vtot

    g[G_PS] = P_s
    g[G_RH] = RH
    g[G_PIO2] = pio2
    g[G_VENT] = vtot
    g[G_Q] = Q
    g[G_R] = r
    g[G_XCO2] = xCO2
    g[G_XH2O] = xH2O
    g[G_TSUP] = T_sup
    g[G_QSCRUB] = q_scrub
    g[G_QADS] = q_ads
    g[G_NTOT] = n
    g[G_AW] = a_w
    g[G_NADS] = ads
    g[G_CONS] = cons


@njit
def _rhs(x, u, d, p):
    dx = np.zeros(NXA)
    g = np.zeros(NDER)
    _eval(x, u, d, p, dx, g)
    return dx


@njit
def _derived(x, u, d, p):
    dx = np.zeros(NXA)
    g = np.zeros(NDER)
    _eval(x, u, d, p, dx, g)
    return g


@njit
def _rk4(x, u, d, p, dt):
    dx = np.zeros(NXA)
    g = np.zeros(NDER)
    k1 = np.zeros(NXA)
    k2 = np.zeros(NXA)
    k3 = np.zeros(NXA)
    k4 = np.zeros(NXA)
    xt = np.empty(NXA)
    _eval(x, u, d, p, k1, g)
    for i in range(NXA):
        xt[i] = x[i] + 0.5 * dt * k1[i]
    _eval(xt, u, d, p, k2, g)
    for i in range(NXA):
        xt[i] = x[i] + 0.5 * dt * k2[i]
    _eval(xt, u, d, p, k3, g)
    for i in range(NXA):
        xt[i] = x[i] + dt * k3[i]
    _eval(xt, u, d, p, k4, g)
    out = np.empty(NXA)
    for i in range(NXA):
        out[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return out


@njit
def _finalize(x):
    """Clamp physical zeros and tie x_O2 to the inventories. Returns clamped mol."""
    clamped = 0.0
    for i in range(4):
        if x[i] < 0.0:
            clamped -= x[i]
            x[i] = 0.0
    if x[I_MTANK] < 0.0:
        x[I_MTANK] = 0.0
    if x[I_MCAOH2] < 0.0:
        x[I_MCAOH2] = 0.0
    if x[I_XI] > 1.0:
        x[I_XI] = 1.0
    n = x[I_NO2] + x[I_NCO2] + x[I_NH2O] + x[I_NN2]
    if n > 0.0:
        x[I_XO2] = x[I_NO2] / n
    return clamped


@njit
def _step(x, u, d, p, dt):
    """RK4 step with up to four halvings on negative inventories.

    Returns (new state, status, clamped moles); status 0 ok, 1 fault.
    """
    tol = 1e-9
    for level in range(5):
        sub = 2 ** level
        h = dt / sub
        y = x.copy()
        ok = True
        for _ in range(sub):
            y = _rk4(y, u, d, p, h)
            for i in range(4):
                if y[i] < -tol * (1.0 + abs(x[i])):
                    ok = False
            if not ok:
                break
            if level > 0:
                _finalize(y)
        if ok:
            c = _finalize(y)
            return y, 0, c
    c = _finalize(y)
    return y, 1, c


@njit
def _step_fast(x, u, d, p, dt):
    y = _rk4(x, u, d, p, dt)
    _finalize(y)
    return y


@njit
def _jac_x(x, u, d, p, dt, rel):
    """Forward-difference Jacobian of the one-step map, each of the 18 states
    perturbed on its own."""
    f0 = _step_fast(x, u, d, p, dt)
    F = np.empty((NX, NX))
    for j in range(NX):
        h = rel * max(abs(x[j]), 1.0)
        xp = x.copy()
        xp[j] += h
        fp = _step_fast(xp, u, d, p, dt)
        for i in range(NX):
            F[i, j] = (fp[i] - f0[i]) / h
    return F, f0


@njit
def _jac_u(x, u, d, p, dt, hu):
    f0 = _step_fast(x, u, d, p, dt)
    G = np.empty((NX, NU))
    for j in range(NU):
        up = u.copy()
        up[j] += hu
        fp = _step_fast(x, up, d, p, dt)
        for i in range(NX):
            G[i, j] = (fp[i] - f0[i]) / hu
    return G, f0


@njit
def _cont_jac(x, u, d, p, rel, hu):
    """Forward-difference Jacobians (A, B) of the continuous RHS and f(x, u)."""
    f0 = _rhs(x, u, d, p)
    A = np.empty((NX, NX))
    B = np.empty((NX, NU))
    for j in range(NX):
        h = rel * max(abs(x[j]), 1.0)
        xp = x.copy()
        xp[j] += h
        fp = _rhs(xp, u, d, p)
        for i in range(NX):
            A[i, j] = (fp[i] - f0[i]) / h
    for j in range(NU):
        up = u.copy()
        up[j] += hu
        fp = _rhs(x, up, d, p)
        for i in range(NX):
            B[i, j] = (fp[i] - f0[i]) / hu
    return A, B, f0


# --- public wrappers -------------------------------------------------------

def _as_arrays(x, u, d):
    xa = x.to_array() if isinstance(x, PlantState) else np.asarray(x, dtype=float)
    if xa.shape[0] == NX:
        xa = np.concatenate([xa, np.zeros(NA)])
    ua = u.to_array() if isinstance(u, ControlInput) else np.asarray(u, dtype=float)
    da = d.to_array() if isinstance(d, Disturbance) else np.asarray(d, dtype=float)
    return xa, ua, da


def plant_rhs(x, u, d, params) -> np.ndarray:
    """Time derivative of the 18 states (plus audit rates when given 24 entries)."""
    p = params.to_vector() if isinstance(params, PlantParams) else params
    xa, ua, da = _as_arrays(x, u, d)
    dx = _rhs(xa, ua, da, p)
    bad = ~np.isfinite(dx)
    if bad.any():
        names = STATE_NAMES + AUDIT_NAMES
        raise PlantFault("non-finite derivative in " + ", ".join(
            names[i] for i in np.flatnonzero(bad)))
    full = not isinstance(x, PlantState) and len(x) == NXA
    return dx if full else dx[:NX]


def derived(x, u, d, params) -> dict:
    """Algebraic outputs (suit pressure, RH, P_iO2, vent rate, ...)."""
    p = params.to_vector() if isinstance(params, PlantParams) else params
    xa, ua, da = _as_arrays(x, u, d)
    g = _derived(xa, ua, da, p)
    return dict(zip(DERIVED_NAMES, g.tolist()))


def rk4_step(x, u, d, dt: float, params) -> np.ndarray:
    """One RK4 step of the full plant; raises PlantFault after four failed halvings."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    p = params.to_vector() if isinstance(params, PlantParams) else params
    xa, ua, da = _as_arrays(x, u, d)
    y, status, _ = _step(xa, ua, da, p, dt)
    if status != 0:
        raise PlantFault("negative species inventory after 4 step halvings")
    if not np.all(np.isfinite(y)):
        raise PlantFault("non-finite state after RK4 step")
    return y


def rk4_generic(f, y, dt: float):
    """Classical RK4 step for an arbitrary RHS ``f(y)``."""
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def fan_flow(omega: float, xi: float, params) -> float:
    p = params.to_vector() if isinstance(params, PlantParams) else params
    return _fan_flow(omega, xi, p)


# --- initial state ---------------------------------------------------------

def initial_state(params: PlantParams = PlantParams(), W0: float = 250.0,
                  n_total: float = 4.0, V_CL: float = 4.5, T0: float = 30.0,
                  T_c0: float = 37.0, tank_kg: float = 3.0, P_a: float = P_ATM,
                  x_co2: float = 4e-4) -> tuple[np.ndarray, PlantParams]:
    """Dry air fill at rest equilibrium; returns the 24-entry state and params
    with the rigid volume set so the ideal-gas law holds at start."""
    n_CO2 = x_co2 * n_total
    n_O2 = 0.21 * n_total
    n_N2 = n_total - n_O2 - n_CO2
    m = params.metabolic
    vo2 = _vo2(W0, m.VO2_rest, m.gamma, m.beta)
    x = np.zeros(NXA)
    x[:NX] = [n_O2, n_CO2, 0.0, n_N2, n_O2 / n_total, V_CL, tank_kg,
              params.scrubber.caoh2_mass_kg, 0.0, 0.0, T0, T0, T0,
              min(m.HR_max, m.HR_rest + m.HR_per_W * W0), T_c0, vo2, W0, 0.0]
    P_s = P_a + params.vent.k_CL * (V_CL - params.vent.V_CL0)
    V_gas = n_total * R_GAS * (T0 + T_ZERO) / P_s * 1000.0
    params = replace(params, V_rigid=V_gas - V_CL)
    return x, params


def state_from_array(x: np.ndarray) -> PlantState:
    return PlantState.from_array(x)
