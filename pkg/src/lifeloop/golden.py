"""Desk-constant goldens: closed-form checks of the sizing numbers."""

from __future__ import annotations

from dataclasses import dataclass

from . import chem, gas
from .constants import P_ATM
from .physiology import pio2_wet


@dataclass(frozen=True)
class GoldenCheck:
    criterion: int
    name: str
    value: float
    lo: float
    hi: float

    @property
    def passed(self) -> bool:
        return self.lo <= self.value <= self.hi

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.criterion:>2} {self.name}: {self.value:.6g} in [{self.lo:.6g}, {self.hi:.6g}]"


def _near(criterion, name, value, target, tol):
    return GoldenCheck(criterion, name, float(value), target - tol, target + tol)


def golden_checks() -> list[GoldenCheck]:
    out = [
        _near(1, "reaction enthalpy [kJ/mol]", chem.reaction_enthalpy(), -113.1, 0.05),
        _near(2, "scrub capacity 1 kg [g]", chem.scrub_capacity(1.0, 0.82, 0.77), 375.0, 0.5),
        _near(3, "tank fill [kg]", gas.tank_fill_kg(200e5, 11.7e-3, 0.95, 300.0), 3.16, 0.02),
        _near(4, "min circulation [L/min]", chem.min_circulation(0.068, 308.0, 0.005), 344.0, 1.0),
        _near(5, "enrichment rate [1/min]", gas.enrichment_rate(0.21, 0.05, 4.0), 0.0099, 0.0002),
        _near(5, "enrichment crossing to 0.235 [min]",
              gas.enrichment_crossing_time(0.21, 0.235, 0.05, 4.0), 2.5, 0.1),
    ]
    eps_targets = ((0.0, 1.12, 0.328), (0.5, 1.39, 0.166), (1.0, 1.66, None))
    for chi, sig_t, eps_t in eps_targets:
        sig = chem.swelling_ratio(chi)
        out.append(_near(6, f"swelling ratio chi_w={chi}", sig, sig_t, 0.005))
        eps = chem.void_fraction(1.0, 0.40, sig)
        if eps_t is None:
            out.append(GoldenCheck(6, f"void fraction xi=1 chi_w={chi}", eps, 0.0, 0.005))
        else:
            out.append(_near(6, f"void fraction xi=1 chi_w={chi}", eps, eps_t, 0.005))
    out += [
        _near(6, "viscous ratio eps 0.33/0.40", chem.viscous_ratio(0.33, 0.40), 2.2, 0.1),
        _near(6, "viscous ratio eps 0.166/0.40", chem.viscous_ratio(0.166, 0.40), 27.0, 1.0),
        GoldenCheck(7, "GAB loading a_w=0.8", chem.gab_loading(0.8, chem.DesiccantParams(
            q_m=0.10, C_G=40.0, K_G=0.85)), 0.30, 0.35),
        _near(8, "worst-case bolus [%]",
              100 * gas.bolus_fraction_change(1.0, 1.0, 5.0, 4.0, 0.21), 3.0, 0.1),
        _near(8, "bolus delta=0.3 T=3 s [%]",
              100 * gas.bolus_fraction_change(1.0, 0.3, 3.0, 4.0, 0.21), 0.6, 0.05),
        _near(9, "Q_scrub heavy exertion [W]", chem.scrub_heat(0.068 / 60.0), 128.0, 2.0),
        _near(9, "Q_ads peak load [W]", chem.adsorption_heat(4.2e-3 / 60.0), 179.0, 3.0),
    ]
    dry = P_ATM * 0.21 / P_ATM
    for rh, target in ((60.0, 3.0), (100.0, 5.5)):
        red = 100.0 * (1.0 - pio2_wet(P_ATM, 35.0, rh, 0.21) / dry)
        out.append(_near(10, f"wet P_iO2 reduction RH={rh:g}% 35 C [%]", red, target, 0.3))
    return out


def golden_report() -> tuple[bool, str]:
    checks = golden_checks()
    lines = [c.line() for c in checks]
    ok = all(c.passed for c in checks)
    lines.append(f"{sum(c.passed for c in checks)}/{len(checks)} desk constants pass")
    return ok, "\n".join(lines)
