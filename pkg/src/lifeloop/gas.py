"""Suit pressure, venting, counter-lung volume and O2 supply hardware."""

from __future__ import annotations

import math
from dataclasses import dataclass

from ._jit import njit
from .constants import M_O2, P_ATM, R_GAS


@dataclass(frozen=True)
class GasInventory:
    """Molar gas-phase inventory of the loop."""

    n_O2: float
    n_CO2: float
    n_H2O: float
    n_N2: float

    def __post_init__(self):
        for name in ("n_O2", "n_CO2", "n_H2O", "n_N2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def n_total(self) -> float:
        return self.n_O2 + self.n_CO2 + self.n_H2O + self.n_N2

    def fractions(self) -> tuple[float, float, float, float]:
        n = self.n_total
        return self.n_O2 / n, self.n_CO2 / n, self.n_H2O / n, self.n_N2 / n

    def mean_molar_mass(self) -> float:
        """kg/mol."""
        x = self.fractions()
        return (x[0] * 32.00 + x[1] * 44.01 + x[2] * 18.015 + x[3] * 28.014) * 1e-3

    def after_cycle(self, n_consumed: float, R: float, n_scrubbed: float,
                    n_injected: float) -> "GasInventory":
        """Apply one metabolic cycle in order: uptake, exhalation, scrub, inject.

        Reaction water is left out; the plant routes it through the water balance.
        """
        if min(n_consumed, R, n_scrubbed, n_injected) < 0:
            raise ValueError("cycle amounts must be non-negative")
        return GasInventory(self.n_O2 - n_consumed + n_injected,
                            self.n_CO2 + R * n_consumed - n_scrubbed,
                            self.n_H2O, self.n_N2)

    def after_vent(self, n_vent: float) -> "GasInventory":
        """Remove ``n_vent`` mol of well-mixed gas."""
        keep = 1.0 - n_vent / self.n_total
        return GasInventory(self.n_O2 * keep, self.n_CO2 * keep,
                            self.n_H2O * keep, self.n_N2 * keep)


@dataclass(frozen=True)
class VentParams:
    """Exhaust valve and counter-lung. ``dP_crack`` is gauge, Pa."""

    C_d: float = 0.6
    A_v: float = 2.0e-5
    dP_crack: float = 500.0
    k_CL: float = 80.0
    V_CL0: float = 3.0
    V_CL_min: float = 1.5

    def __post_init__(self):
        for name in ("C_d", "A_v", "dP_crack", "k_CL", "V_CL0", "V_CL_min"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.V_CL_min >= self.V_CL0:
            raise ValueError("V_CL_min must be below V_CL0")

    def P_crack(self, P_a: float = P_ATM) -> float:
        return P_a + self.dP_crack

    def threshold_volume(self, P_a: float = P_ATM) -> float:
        """Counter-lung volume at which the exhaust valve cracks, L."""
        return self.V_CL0 + (self.P_crack(P_a) - P_a) / self.k_CL


@dataclass(frozen=True)
class O2Tank:
    usable_kg: float = 3.0
    volume_L: float = 11.7
    fill_bar: float = 200.0
    Z: float = 0.95


@dataclass(frozen=True)
class ValveModel:
    """Proportional O2 valve with stiction and a PWM fallback."""

    V_break: float = 1.0
    m_dot_min: float = 0.05
    k_v: float = 0.2
    m_dot_pulse: float = 1.0
    T_PWM: float = 3.0
    hysteresis: float = 0.01
    m_dot_max: float = 1.0

    def __post_init__(self):
        if self.m_dot_min <= 0:
            raise ValueError("m_dot_min must be positive")
        if not 2.0 <= self.T_PWM <= 5.0:
            raise ValueError("T_PWM must lie in [2, 5] s")


@dataclass(frozen=True)
class TidalParams:
    """Tidal counter-lung excursion, linear in estimated work rate."""

    A_rest: float = 1.0
    A_peak: float = 2.5
    f_rest: float = 12.0
    f_peak: float = 40.0
    W_peak: float = 500.0


@dataclass(frozen=True)
class PwmPlan:
    mode: str
    duty: float
    flow: float
    clamped: bool = False


# --- pressure and venting --------------------------------------------------

@njit
def _suit_pressure(V_CL, P_a, k_CL, V_CL0):
    return P_a + k_CL * (V_CL - V_CL0)


def suit_pressure(V_CL: float, P_a: float, params: VentParams = VentParams()) -> float:
    """Suit absolute pressure from counter-lung displacement, Pa."""
    return _suit_pressure(V_CL, P_a, params.k_CL, params.V_CL0)


@njit
def _vent_rate(P_s, P_crack, rho_s, M_bar, C_d, A_v):
    dp = P_s - P_crack
    if dp <= 0.0:
        return 0.0
    return C_d * A_v / M_bar * math.sqrt(2.0 * rho_s * dp)


def vent_rate(P_s: float, rho_s: float, M_bar: float,
              params: VentParams = VentParams(), P_a: float = P_ATM) -> float:
    """Orifice outflow above cracking pressure, mol/s."""
    return _vent_rate(P_s, params.P_crack(P_a), rho_s, M_bar, params.C_d, params.A_v)


def gas_density(P: float, M_bar: float, T_kelvin: float) -> float:
    """Ideal-gas density, kg/m^3."""
    return P * M_bar / (R_GAS * T_kelvin)


def enrichment_rate(x_O2: float, n_vent: float, n_total: float) -> float:
    """O2 fraction rise when venting is replaced by pure O2, per unit time of n_vent."""
    return n_vent / n_total * (1.0 - x_O2)


def enrichment_rate_exact(x_O2: float, n_inject: float, n_consumed: float,
                          n_total: float) -> float:
    """Exact d x_O2/dt with only O2 entering and well-mixed venting."""
    return (1.0 - x_O2) * (n_inject - n_consumed) / n_total


def enrichment_crossing_time(x0: float, x1: float, n_vent: float, n_total: float) -> float:
    """Time for x_O2 to rise from x0 to x1 under pressure-holding replacement."""
    k = n_vent / n_total
    return math.log((1.0 - x0) / (1.0 - x1)) / k


@njit
def _counterlung_rhs(T_suit, P_s, V_gas, n_net, dT_dt, V_breath_dot):
    return R_GAS * T_suit / P_s * n_net * 1000.0 + V_gas / T_suit * dT_dt + V_breath_dot


def counterlung_rhs(T_suit: float, P_s: float, V_gas: float, n_dot_inject: float,
                    n_dot_consumed: float, n_dot_vent: float, dT_dt: float,
                    V_breath_dot: float, n_dot_other: float = 0.0) -> float:
    """Counter-lung volume rate, L/s.

    ``T_suit`` in K, ``V_gas`` in L, molar rates in mol/s. ``n_dot_other``
    carries the remaining gas-phase net change (CO2 and water sources minus
    sinks) so the volume stays consistent with the molar inventory.
    """
    net = n_dot_inject - n_dot_consumed - n_dot_vent + n_dot_other
    return _counterlung_rhs(T_suit, P_s, V_gas, net, dT_dt, V_breath_dot)


def tank_fill_moles(P: float, V: float, Z: float, T: float) -> float:
    """Real-gas cylinder inventory PV/(ZRT), mol."""
    return P * V / (Z * R_GAS * T)


def tank_fill_kg(P: float, V: float, Z: float, T: float) -> float:
    return tank_fill_moles(P, V, Z, T) * M_O2 * 1e-3


# --- valve -----------------------------------------------------------------

def valve_flow(command: float, model: ValveModel = ValveModel()) -> float:
    """Steady flow for a valve command voltage, g/s."""
    if command < model.V_break:
        return 0.0
    return min(model.m_dot_max, model.m_dot_min + model.k_v * (command - model.V_break))


def pwm_plan(desired_flow: float, model: ValveModel = ValveModel(),
             previous_mode: str | None = None) -> PwmPlan:
    """Choose continuous or duty-cycled operation for a desired mean flow."""
    if desired_flow < 0:
        raise ValueError("desired flow must be non-negative")
    clamped = desired_flow > model.m_dot_max
    flow = min(desired_flow, model.m_dot_max)
    upper = model.m_dot_min + model.hysteresis
    lower = model.m_dot_min
    if previous_mode == "continuous":
        continuous = flow >= lower
    else:
        continuous = flow >= upper
    if continuous:
        return PwmPlan("continuous", 1.0, flow, clamped)
    duty = min(1.0, flow / model.m_dot_pulse)
    return PwmPlan("pwm", duty, duty * model.m_dot_pulse, clamped)


def pwm_average_flow(duty: float, model: ValveModel = ValveModel(), steps: int = 3000) -> float:
    """Mean flow of one simulated PWM period, g/s."""
    on = 0.0
    dt = model.T_PWM / steps
    for k in range(steps):
        if (k + 0.5) * dt < duty * model.T_PWM:
            on += model.m_dot_pulse * dt
    return on / model.T_PWM


def bolus_fraction_change(m_dot_pulse: float, duty: float, T_pwm: float,
                          n_total: float, x_O2: float) -> float:
    """Rise in O2 fraction after one pulse of pure O2 mixes into the loop."""
    dn = m_dot_pulse * duty * T_pwm / M_O2
    return dn / (n_total + dn) * (1.0 - x_O2)


# --- breathing -------------------------------------------------------------

def tidal_amplitude(W_hat: float, params: TidalParams = TidalParams()) -> float:
    s = min(max(W_hat / params.W_peak, 0.0), 1.0)
    return params.A_rest + (params.A_peak - params.A_rest) * s


def tidal_frequency(W_hat: float, params: TidalParams = TidalParams()) -> float:
    """Breaths per second."""
    s = min(max(W_hat / params.W_peak, 0.0), 1.0)
    return (params.f_rest + (params.f_peak - params.f_rest) * s) / 60.0
