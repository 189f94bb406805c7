"""Physical constants shared across the loop model."""

R_GAS = 8.314462618          # J/(mol K)
R_LATM = 0.08206             # L atm/(mol K)
P_ATM = 101325.0             # Pa
T_ZERO = 273.15              # K
MOLAR_VOLUME_STP = 22.414    # L/mol

M_CAOH2 = 74.09              # g/mol
M_CO2 = 44.01
M_H2O = 18.015
M_O2 = 32.00
M_N2 = 28.014

O2_DENSITY_STP = 1.43        # g/L, mass conversion for VO2
CP_AIR = 1005.0              # J/(kg K)
LATENT_WATER = 2430.0        # J/g, evaporation near skin temperature
