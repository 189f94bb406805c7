"""Scrubber and desiccant chemistry.

Soda-lime thermochemistry, CO2 uptake kinetics and capacity, the GAB water
isotherm with linear-driving-force uptake, packed-bed pressure drop with a
swelling-dependent void fraction, and the bed energy balance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from ._jit import njit
from .constants import CP_AIR, M_CAOH2, M_CO2, R_GAS, R_LATM


@dataclass(frozen=True)
class ThermoTable:
    """Standard formation enthalpies at 298.15 K, kJ/mol."""

    co2_g: float = -393.5
    caoh2_s: float = -986.1
    caco3_s: float = -1206.9
    h2o_l: float = -285.8


@dataclass(frozen=True)
class ScrubberParams:
    """Soda-lime canister.

    ``k_ov_as_v`` lumps k_ov * a_s * V_bed (mol s^-1 Pa^-1) at the reference
    circulation ``q_ref`` (L/min).
    """

    k_ov_as_v: float = 5.6e-6
    q_ref: float = 200.0
    f_dry: float = 0.82
    f_caoh2: float = 0.77
    eps0: float = 0.40
    chi_w: float = 0.4
    d_p: float = 3.0e-3
    L_bed: float = 0.15
    rho_cp: float = 1.0e6
    V_bed: float = 1.5e-3
    UA_wall: float = 0.5
    mass_kg: float = 1.0
    eta_exponent: float = 1.5

    def __post_init__(self):
        if not 0.0 <= self.chi_w <= 1.0:
            raise ValueError("chi_w must lie in [0, 1]")
        if not 0.0 < self.eps0 < 1.0:
            raise ValueError("eps0 must lie in (0, 1)")
        for name in ("k_ov_as_v", "q_ref", "d_p", "L_bed", "rho_cp", "V_bed",
                     "UA_wall", "mass_kg", "eta_exponent"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")

    @property
    def caoh2_mass_kg(self) -> float:
        return self.f_dry * self.f_caoh2 * self.mass_kg


@dataclass(frozen=True)
class DesiccantParams:
    """Silica-gel canister; GAB constants are referenced to 25 C."""

    q_m: float = 0.10
    C_G: float = 40.0
    K_G: float = 0.85
    k_ldf: float = 1.0e-3
    dry_mass: float = 1.0
    capacity_fraction: float = 0.35
    dH_ads: float = 2550.0
    E_q: float = 16.37e3

    def __post_init__(self):
        if not 0.0 < self.K_G < 1.0:
            raise ValueError("K_G must lie in (0, 1)")
        if self.q_m <= 0 or self.C_G <= 0 or self.k_ldf <= 0 or self.dry_mass <= 0:
            raise ValueError("desiccant parameters must be positive")

    @property
    def M_water_max(self) -> float:
        return self.capacity_fraction * self.dry_mass


# --- thermochemistry -------------------------------------------------------

def reaction_enthalpy(table: ThermoTable = ThermoTable()) -> float:
    """Ca(OH)2 + CO2 -> CaCO3 + H2O(l), kJ per mol CO2 (Hess's law)."""
    products = table.caco3_s + table.h2o_l
    reactants = table.caoh2_s + table.co2_g
    return products - reactants


def scrub_capacity(mass_kg: float, f_dry: float, f_caoh2: float) -> float:
    """Maximum CO2 uptake of a soda-lime charge, grams."""
    if mass_kg < 0:
        raise ValueError("mass must be non-negative")
    if not (0.0 <= f_dry <= 1.0 and 0.0 <= f_caoh2 <= 1.0):
        raise ValueError("fractions must lie in [0, 1]")
    return f_dry * f_caoh2 * mass_kg * 1000.0 / M_CAOH2 * M_CO2


def scrub_heat(rate_mol_s: float, table: ThermoTable = ThermoTable()) -> float:
    """Heat released by scrubbing at ``rate_mol_s``, W."""
    return -reaction_enthalpy(table) * 1e3 * rate_mol_s


# --- kinetics --------------------------------------------------------------

@njit
def _effectiveness(xi, exponent):
    if xi <= 0.0:
        return 1.0
    if xi >= 1.0:
        return 0.0
    return (1.0 - xi) ** exponent


def effectiveness(xi: float, exponent: float = 1.5) -> float:
    """Shrinking-core effectiveness (1 - xi)^p of a partially converted bed."""
    if not 0.0 <= xi <= 1.0:
        raise ValueError("conversion xi must lie in [0, 1]")
    return _effectiveness(xi, exponent)


def scrub_rate(p_co2: float, p_co2_eq: float, eta: float,
               params: ScrubberParams | float, phi_bypass: float) -> float:
    """Volumetric CO2 removal, mol/s.

    ``params`` may be a ScrubberParams or the lumped k_ov*a_s*V_bed directly.
    """
    kav = params.k_ov_as_v if isinstance(params, ScrubberParams) else float(params)
    return (1.0 - phi_bypass) * kav * max(0.0, p_co2 - p_co2_eq) * eta


# --- desiccant -------------------------------------------------------------

@njit
def _gab(a_w, q_m, c_g, k_g):
    ka = k_g * a_w
    return q_m * c_g * ka / ((1.0 - ka) * (1.0 - ka + c_g * ka))


@njit
def _q_m_at(q_m25, e_q, T_kelvin):
    return q_m25 * math.exp(e_q / R_GAS * (1.0 / T_kelvin - 1.0 / 298.15))


def q_m_at(T_celsius: float, params: DesiccantParams = DesiccantParams()) -> float:
    """GAB monolayer capacity at temperature, Arrhenius-scaled from 25 C."""
    return _q_m_at(params.q_m, params.E_q, T_celsius + 273.15)


def gab_loading(a_w: float, params: DesiccantParams = DesiccantParams(),
                T_celsius: float | None = None) -> float:
    """Equilibrium loading, kg water per kg dry gel."""
    if a_w < 0:
        raise ValueError("water activity must be non-negative")
    if a_w * params.K_G >= 1.0:
        raise ValueError("water activity at or beyond 1/K_G")
    q_m = params.q_m if T_celsius is None else q_m_at(T_celsius, params)
    return _gab(a_w, q_m, params.C_G, params.K_G)


def ldf_rate(q_bar: float, q_e: float, k_ldf: float) -> float:
    """Linear-driving-force uptake rate, loading per second."""
    return k_ldf * (q_e - q_bar)


def adsorption_heat(rate_kg_s: float, dH_ads_kj_kg: float = 2550.0) -> float:
    """Heat released by water uptake, W."""
    return dH_ads_kj_kg * 1e3 * rate_kg_s


# --- packed bed ------------------------------------------------------------

def ergun_dp_per_length(mu: float, eps: float, d_p: float, v_s: float,
                        rho: float) -> float:
    """Ergun pressure gradient, Pa/m."""
    if not 0.0 < eps < 1.0:
        raise ValueError("void fraction must lie in (0, 1)")
    if d_p <= 0:
        raise ValueError("granule diameter must be positive")
    e3 = eps ** 3
    viscous = 150.0 * mu * (1.0 - eps) ** 2 / (e3 * d_p ** 2) * v_s
    inertial = 1.75 * rho * (1.0 - eps) / (e3 * d_p) * v_s * v_s
    return viscous + inertial


def swelling_ratio(chi_w: float) -> float:
    """Product-to-reactant solid volume ratio with retained water fraction chi_w."""
    return (36.9 + 18.0 * chi_w) / 33.0


@njit
def _void_fraction(xi, eps0, sigma):
    eps = 1.0 - (1.0 - eps0) * (1.0 + xi * (sigma - 1.0))
    return eps if eps > 0.0 else 0.0


def void_fraction(xi: float, eps0: float, sigma: float) -> float:
    """Bed void fraction after conversion xi in a fixed-volume canister."""
    return _void_fraction(xi, eps0, sigma)


@njit
def _viscous_factor(eps):
    return (1.0 - eps) ** 2 / eps ** 3


def viscous_ratio(eps: float, eps_ref: float) -> float:
    """Ratio of Ergun viscous terms at ``eps`` versus ``eps_ref``."""
    return _viscous_factor(eps) / _viscous_factor(eps_ref)


# --- bed energy ------------------------------------------------------------

def bed_temp_rhs(T_bed: float, Q_scrub: float, m_dot_air: float, T_air_in: float,
                 params: ScrubberParams = ScrubberParams(),
                 T_wall: float | None = None) -> float:
    """Lumped bed temperature derivative, K/s. ``T_wall`` defaults to the inlet."""
    if T_wall is None:
        T_wall = T_air_in
    gain = (Q_scrub - m_dot_air * CP_AIR * (T_bed - T_air_in)
            - params.UA_wall * (T_bed - T_wall))
    return gain / (params.rho_cp * params.V_bed)


# --- sizing checks ---------------------------------------------------------

def ntu_required(p_in: float, p_out: float, p_eq: float = 0.0) -> float:
    """Transfer units needed to bring inlet CO2 partial pressure to ``p_out``."""
    if p_out <= p_eq or p_in < p_out:
        raise ValueError("need p_in >= p_out > p_eq")
    return math.log((p_in - p_eq) / (p_out - p_eq))


def min_circulation(n_dot_co2_mol_min: float, T_kelvin: float, p_co2_max_atm: float,
                    p_co2_out_atm: float = 0.0) -> float:
    """Well-mixed lower bound on loop circulation, L/min."""
    if p_co2_max_atm <= p_co2_out_atm:
        raise ValueError("p_co2_max must exceed the outlet partial pressure")
    return n_dot_co2_mol_min * R_LATM * T_kelvin / (p_co2_max_atm - p_co2_out_atm)
