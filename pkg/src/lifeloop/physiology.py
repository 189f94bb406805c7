"""Metabolic demand, heart rate, core temperature, O2 toxicity dose and risk indices."""

from __future__ import annotations

import math
from dataclasses import dataclass

from ._jit import njit
from .constants import LATENT_WATER, MOLAR_VOLUME_STP, O2_DENSITY_STP, P_ATM

MMHG = 133.322387415  # Pa

# Antoine-type fit log10(p/mmHg) = A - B/(C + T) anchored at 42 mmHg (35 C)
# and 47 mmHg (37 C) with the usual water value of C.
_ANTOINE_C = 233.426
_ANTOINE_B = math.log10(47.0 / 42.0) / (1.0 / (_ANTOINE_C + 35.0) - 1.0 / (_ANTOINE_C + 37.0))
_ANTOINE_A = math.log10(42.0) + _ANTOINE_B / (_ANTOINE_C + 35.0)


@dataclass(frozen=True)
class MetabolicParams:
    VO2_rest: float = 0.25          # L/min STP
    gamma: float = 5.8e-3           # L/min per W
    beta: float = 4.0e-6            # L/min per W^2
    R: float = 0.85                 # respiratory exchange ratio
    tau_W: float = 20.0             # s, work-rate lag
    tau_VO2: float = 40.0           # s, uptake lag
    tau_HR: float = 30.0            # s
    HR_rest: float = 70.0           # bpm
    HR_per_W: float = 0.2           # bpm/W
    HR_max: float = 240.0
    HR_per_RH: float = 0.5          # bpm per % RH above 50
    HR_per_Tc: float = 15.0         # bpm per C core above 37.5
    HR_per_Ttorso: float = 0.5      # bpm per C torso above 35
    HR_hypox_gain: float = 30.0     # bpm at the ramp scale
    x_hypox: float = 0.18           # O2 fraction at which hypoxic drive starts
    x_hypox_scale: float = 0.04
    C_c: float = 2.6e5              # J/K
    G_skin: float = 80.0            # W/K core to torso interior
    resp_sensible: float = 10.0     # W per L/min VO2
    water_per_VO2: float = 0.85     # g exhaled water per L O2
    K_tc: float = 0.0               # torso-temperature correction gain, W/K
    torso_offset: float = 5.0       # C, core minus torso in h(T_c)
    heat_per_VO2: float = 335.0     # W per L/min

    def __post_init__(self):
        if self.VO2_rest <= 0:
            raise ValueError("VO2_rest must be positive")
        if not 0.7 <= self.R <= 1.1:
            raise ValueError("R must lie in [0.7, 1.1]")
        for name in ("tau_W", "tau_VO2", "tau_HR", "C_c"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class PhysioState:
    HR: float
    T_c_hat: float
    W_hat: float
    VO2_hat: float
    UPTD: float


# --- demand ----------------------------------------------------------------

@njit
def _vo2(W, rest, gamma, beta):
    w = W if W > 0.0 else 0.0
    return rest + gamma * w + beta * w * w


def vo2_of_work(W: float, params: MetabolicParams = MetabolicParams()) -> float:
    """O2 uptake at work rate W, L/min STP."""
    return _vo2(W, params.VO2_rest, params.gamma, params.beta)


def o2_mass_rate(vo2_l_min: float) -> float:
    """O2 mass uptake, g/min."""
    return O2_DENSITY_STP * vo2_l_min


def co2_production(VO2: float, R: float = 0.85) -> float:
    """CO2 output, mol/min."""
    if VO2 < 0:
        raise ValueError("VO2 must be non-negative")
    return R * VO2 / MOLAR_VOLUME_STP


def exhaled_water(VO2: float, params: MetabolicParams = MetabolicParams()) -> float:
    """Respiratory water vapour output, g/min."""
    return params.water_per_VO2 * VO2


def metabolic_heat(W_hat: float, params: MetabolicParams = MetabolicParams()) -> float:
    """Heat released by metabolism net of external work, W."""
    return params.heat_per_VO2 * vo2_of_work(W_hat, params) - W_hat


# --- O2 dose and partial pressure -----------------------------------------

@njit
def _uptd_rate(pio2_atm):
    if pio2_atm <= 0.5:
        return 0.0
    return ((pio2_atm - 0.5) / 0.5) ** 0.83 / 60.0


def uptd_rate(P_iO2: float) -> float:
    """Pulmonary toxicity dose accumulation, dose per second."""
    return _uptd_rate(P_iO2)


@njit
def _p_sat(T_celsius):
    return MMHG * 10.0 ** (_ANTOINE_A - _ANTOINE_B / (_ANTOINE_C + T_celsius))


def p_sat(T_celsius: float) -> float:
    """Saturation vapour pressure of water, Pa."""
    return _p_sat(T_celsius)


@njit
def _pio2_wet(P_s, T_bz, RH, x_O2):
    return (P_s - _p_sat(T_bz) * RH / 100.0) * x_O2 / P_ATM


def pio2_wet(P_s: float, T_bz: float, RH: float, x_O2: float) -> float:
    """Inspired O2 partial pressure on a wet-gas basis, atm. RH in percent."""
    if not 0.0 <= RH <= 100.0:
        raise ValueError("RH must lie in [0, 100]")
    return _pio2_wet(P_s, T_bz, RH, x_O2)


# --- heart rate ------------------------------------------------------------

def hr_work(W_hat: float, params: MetabolicParams = MetabolicParams()) -> float:
    return min(params.HR_max, params.HR_rest + params.HR_per_W * max(W_hat, 0.0))


def hr_heat(RH: float, T_torso: float, T_c_hat: float,
            params: MetabolicParams = MetabolicParams()) -> float:
    return (params.HR_per_RH * max(0.0, RH - 50.0)
            + params.HR_per_Ttorso * max(0.0, T_torso - 35.0)
            + params.HR_per_Tc * max(0.0, T_c_hat - 37.5))


def hr_hypox(x_O2: float, params: MetabolicParams = MetabolicParams()) -> float:
    """Quadratic onset below ``x_hypox``; exactly zero above it."""
    s = max(0.0, (params.x_hypox - x_O2) / params.x_hypox_scale)
    return params.HR_hypox_gain * s * s


def hr_steady(W_hat: float, RH: float, T_torso: float, T_c_hat: float, x_O2: float,
              params: MetabolicParams = MetabolicParams()) -> float:
    return (hr_work(W_hat, params) + hr_heat(RH, T_torso, T_c_hat, params)
            + hr_hypox(x_O2, params))


def hr_rhs(HR: float, HR_ss: float, params: MetabolicParams = MetabolicParams()) -> float:
    """First-order lag toward the steady-state rate, bpm/s."""
    return (HR_ss - HR) / params.tau_HR


def metabolic_estimate(HR: float, RH: float, T_torso: float, T_c_hat: float,
                       x_O2: float, params: MetabolicParams = MetabolicParams()) -> float:
    """Work rate from HR after removing the heat and hypoxic components, W."""
    hr_w = HR - hr_heat(RH, T_torso, T_c_hat, params) - hr_hypox(x_O2, params)
    return max(0.0, (hr_w - params.HR_rest) / params.HR_per_W)


# --- core temperature ------------------------------------------------------

def core_temp_rhs(T_c_hat: float, W_hat: float, T_torso_meas: float,
                  params: MetabolicParams = MetabolicParams(),
                  Q_resp: float | None = None, T_torso_model: float | None = None) -> float:
    """Core temperature rate, C/s.

    ``T_torso_model`` is the torso temperature used by the skin path; it
    defaults to the measurement. Respiratory loss defaults to latent plus
    sensible loss at the uptake implied by ``W_hat``.
    """
    vo2 = vo2_of_work(W_hat, params)
    if Q_resp is None:
        Q_resp = respiratory_heat(vo2, params)
    T_t = T_torso_meas if T_torso_model is None else T_torso_model
    q_skin = params.G_skin * (T_c_hat - T_t)
    correction = params.K_tc * (T_torso_meas - (T_c_hat - params.torso_offset))
    return (metabolic_heat(W_hat, params) - Q_resp - q_skin + correction) / params.C_c


def respiratory_heat(vo2: float, params: MetabolicParams = MetabolicParams()) -> float:
    """Latent plus sensible respiratory loss, W."""
    latent = LATENT_WATER * params.water_per_VO2 * vo2 / 60.0
    return latent + params.resp_sensible * vo2


# --- risk ------------------------------------------------------------------

def risk_indices(P_iO2: float, x_CO2: float, co2_production: float = 0.0,
                 co2_removal: float = 0.0) -> tuple[float, float]:
    """Hypoxia and hypercapnia risk in [0, 1].

    Hypoxia rises linearly from 0 at 0.19 atm to 1 at the 0.16 atm floor.
    Hypercapnia rises from 0 at 0.5 % to 1 at 3 %, plus a share for any
    shortfall of removal against production.
    """
    hyp = min(1.0, max(0.0, (0.19 - P_iO2) / 0.03))
    base = (x_CO2 - 0.005) / 0.025
    if co2_production > 0.0:
        base += 0.25 * max(0.0, 1.0 - co2_removal / co2_production)
    hcap = min(1.0, max(0.0, base))
    return hyp, hcap
