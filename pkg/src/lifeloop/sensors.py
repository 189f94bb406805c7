"""Sensor frame synthesis and triple-cell O2 voting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import plant as pl

# channel: (sigma, quantum); sigma in channel units
SENSOR_TABLE = {
    "x_CO2": (1e-4, 1e-4),          # NDIR, +/-0.01 %
    "x_O2": (1e-3, 1e-3),           # each galvanic cell, +/-0.1 %
    "RH": (1.5, 0.1),               # %
    "T_bz": (0.5, 0.1),             # C
    "T_torso": (0.5, 0.1),
    "T_bed": (1.0, 0.1),
    "dP": (10.0, 1.0),              # Pa, +/-0.1 mbar
    "Q_circ": (0.02, 0.0),          # relative, +/-2 %
    "V_CL": (0.05, 0.01),           # L
    "HR": (1.0, 1.0),               # bpm
    "T_ext": (2.0, 1.0),
    "P_a": (50.0, 10.0),            # Pa
    "q_rad": (0.5, 0.1),            # kW/m^2
    "toxic": (0.1, 0.0),            # relative, semi-quantitative
}


@dataclass(frozen=True)
class SensorConfig:
    noise: bool = True
    quantize: bool = True
    table: dict = field(default_factory=lambda: dict(SENSOR_TABLE))
    # O2 cell fault injection: index of drifting cell (-1 none), onset s, drift per s
    cell_fault: int = -1
    cell_fault_onset: float = 0.0
    cell_fault_rate: float = 0.0


@dataclass(frozen=True)
class SensorFrame:
    t: float
    x_CO2: float
    x_O2_cells: tuple
    RH: float
    T_bz: float
    T_torso: float
    T_bed: float
    dP: float
    Q_circ: float
    V_CL: float
    HR: float
    HRV: float
    acc_torso: float
    acc_wrist: float
    q_rad: float
    T_ext: float
    toxic: float
    P_a: float


@dataclass(frozen=True)
class VoteResult:
    value: float
    rejected: tuple
    fault: bool


def median_vote(r1: float, r2: float, r3: float, threshold: float = 2.0) -> VoteResult:
    """Median of three cells; readings farther than ``threshold`` (percentage
    points) from the median are rejected. Two rejections raise a fault."""
    vals = (r1, r2, r3)
    if not all(np.isfinite(v) for v in vals):
        raise ValueError("readings must be finite")
    med = sorted(vals)[1]
    rejected = tuple(abs(v - med) > threshold for v in vals)
    return VoteResult(med, rejected, sum(rejected) >= 2)


def _q(v: float, quantum: float, enabled: bool) -> float:
    if not enabled or quantum <= 0.0:
        return v
    return round(float(v) / quantum) * quantum


def sense(x: np.ndarray, u: np.ndarray, d: np.ndarray, p: np.ndarray, t: float,
          rng: np.random.Generator, config: SensorConfig = SensorConfig()) -> SensorFrame:
    """Noisy, quantized readings of the true plant. Draw order is fixed."""
    g = pl._derived(np.asarray(x, dtype=float), u, d, p)
    tab = config.table
    z = rng.standard_normal(19)
    k = 1.0 if config.noise else 0.0
    qz = config.quantize

    def ch(name, true, i, relative=False):
        sig, quantum = tab[name]
        s = sig * abs(true) if relative else sig
        return _q(true + k * s * z[i], quantum, qz)

    n = g[pl.G_NTOT]
    x_o2 = x[pl.I_NO2] / n
    cells = []
    for c in range(3):
        v = x_o2 + k * tab["x_O2"][0] * z[1 + c]
        if c == config.cell_fault and t >= config.cell_fault_onset:
            v += config.cell_fault_rate * (t - config.cell_fault_onset)
        cells.append(_q(v * 100.0, tab["x_O2"][1] * 100.0, qz))
    hr = x[pl.I_HR]
    w = d[pl.D_W]
    return SensorFrame(
        t=t,
        x_CO2=ch("x_CO2", g[pl.G_XCO2], 0),
        x_O2_cells=tuple(cells),
        RH=ch("RH", g[pl.G_RH], 4),
        T_bz=ch("T_bz", x[pl.I_TBZ], 5),
        T_torso=ch("T_torso", x[pl.I_TTORSO], 6),
        T_bed=ch("T_bed", x[pl.I_TBED], 7),
        dP=ch("dP", g[pl.G_PS] - d[pl.D_PA], 8),
        Q_circ=ch("Q_circ", g[pl.G_Q], 9, relative=True),
        V_CL=ch("V_CL", x[pl.I_VCL], 10),
        HR=ch("HR", hr, 11),
        HRV=max(5.0, 60.0 - 0.3 * (hr - 60.0)) + k * 3.0 * z[12],
        acc_torso=w / 250.0 + k * 0.05 * z[13],
        acc_wrist=w / 300.0 + k * 0.08 * z[14],
        q_rad=ch("q_rad", d[pl.D_QRAD], 15),
        T_ext=ch("T_ext", d[pl.D_TEXT], 16),
        toxic=ch("toxic", d[pl.D_TOXIC], 17, relative=True),
        P_a=ch("P_a", d[pl.D_PA], 18),
    )
