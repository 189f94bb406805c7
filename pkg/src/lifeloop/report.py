"""Persistence and reporting: trace CSV, summary tables, plot data and figures."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import statistics
from pathlib import Path

import numpy as np

from .harness import CON_COLUMNS, STRING_COLUMNS, TRACE_VERSION, MissionSummary, MissionTrace

PLOT_COLUMNS = (("t_min[min]", None), ("m_O2_tank[kg]", "m_O2_tank[kg]"),
                ("x_O2[-]", "x_O2[-]"), ("x_CO2[-]", "x_CO2[-]"), ("T_c[C]", "T_c[C]"))
SUMMARY_FIELDS = ("scenario", "controller", "seed", "duration_min", "t_emergency_min",
                  "t_depletion_min", "endurance_min", "o2_used_kg", "peak_x_CO2_pct",
                  "peak_T_c", "peak_T_c_hat", "vent_total_mol", "vent_O2_mol",
                  "normal_hard_violations", "mode_timeline", "fault")
COMPARE_METRICS = (("endurance_min", True), ("t_emergency_min", True),
                   ("peak_x_CO2_pct", False), ("peak_T_c_hat", False), ("vent_total_mol", False))


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    return "%.17g" % float(v)


def _open_write(path: Path):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return open(path, "w", newline="")
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc


def write_trace_csv(trace: MissionTrace, path) -> Path:
    """Versioned header comment, then one row per tick with 17 significant digits."""
    path = Path(path)
    meta = {k: trace.meta[k] for k in sorted(trace.meta)}
    meta["fault"] = trace.fault
    with _open_write(path) as fh:
        fh.write(f"# lifeloop trace v{TRACE_VERSION} {json.dumps(meta, sort_keys=True)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace.columns)
        cols = [trace.data[c] for c in trace.columns]
        for i in range(len(trace)):
            w.writerow([_fmt(col[i]) for col in cols])
    return path


def read_trace_csv(path) -> MissionTrace:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            first = fh.readline()
            prefix = "# lifeloop trace v"
            if not first.startswith(prefix):
                raise ValueError(f"{path}: missing trace header")
            version, _, meta_json = first[len(prefix):].partition(" ")
            if int(version) != TRACE_VERSION:
                raise ValueError(f"{path}: unsupported trace version {version}")
            meta = json.loads(meta_json)
            reader = csv.reader(fh)
            columns = tuple(next(reader))
            rows = list(reader)
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc
    fault = meta.pop("fault", None)
    data = {}
    for j, c in enumerate(columns):
        vals = [r[j] for r in rows]
        data[c] = vals if c in STRING_COLUMNS else np.array([float(v) for v in vals])
    return MissionTrace(columns, data, meta, fault)


def summary_record(s: MissionSummary) -> dict:
    rec = {}
    for f in SUMMARY_FIELDS:
        v = getattr(s, f)
        if f == "mode_timeline":
            v = ";".join(f"{t:.2f}:{m}" for t, m in v)
        elif v is None:
            v = ""
        rec[f] = v
    for c in CON_COLUMNS:
        n, depth = s.violations.get(c, (0, 0.0))
        base = c.split("[")[0]
        rec[f"{base}_violations"] = n
        rec[f"{base}_max_depth"] = depth
    return rec


def write_summary_csv(summaries, path) -> Path:
    path = Path(path)
    records = [summary_record(s) for s in summaries]
    fields = list(records[0]) if records else list(SUMMARY_FIELDS)
    with _open_write(path) as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in records:
            w.writerow({k: (v if isinstance(v, str) else _fmt(v)) for k, v in r.items()})
    return path


def format_summary(s: MissionSummary) -> str:
    lines = [f"Mission {s.scenario} / {s.controller} / seed {s.seed}",
             f"  duration              {s.duration_min:9.2f} min",
             f"  10 % floor crossing   {s.t_emergency_min:9.2f} min",
             f"  O2 depletion          {s.t_depletion_min:9.2f} min",
             f"  O2 used               {s.o2_used_kg:9.3f} kg",
             f"  peak x_CO2            {s.peak_x_CO2_pct:9.3f} %",
             f"  peak T_c (truth/est)  {s.peak_T_c:9.3f} / {s.peak_T_c_hat:.3f} C",
             f"  vented (total/O2)     {s.vent_total_mol:9.2f} / {s.vent_O2_mol:.2f} mol",
             f"  normal-mode hard violations {s.normal_hard_violations}",
             "  constraint violations (ticks, max depth):"]
    for c in CON_COLUMNS:
        n, depth = s.violations.get(c, (0, 0.0))
        lines.append(f"    {c:<20} {n:6d}  {depth:.4g}")
    lines.append("  modes: " + ", ".join(f"{m} @ {t:.1f} min" for t, m in s.mode_timeline))
    if s.fault:
        lines.append(f"  FAULT: {s.fault}")
    return "\n".join(lines)


def improvement_pct(mpc: float, pid: float, higher_is_better: bool = True) -> float:
    """Relative gain of the MPC value over the PID value, percent."""
    if not (math.isfinite(mpc) and math.isfinite(pid)) or pid == 0.0:
        return float("nan")
    gain = (mpc - pid) if higher_is_better else (pid - mpc)
    return 100.0 * gain / abs(pid)


def compare_summaries(mpc: MissionSummary, pid: MissionSummary) -> dict:
    """Side-by-side metrics with the MPC improvement in percent."""
    out = {}
    for name, higher in COMPARE_METRICS:
        a, b = getattr(mpc, name), getattr(pid, name)
        out[name] = (a, b, improvement_pct(a, b, higher))
    return out


def format_comparison(mpc: MissionSummary, pid: MissionSummary) -> str:
    lines = [f"{'metric':<18}{'MPC':>12}{'PID':>12}{'gain %':>10}"]
    for name, (a, b, g) in compare_summaries(mpc, pid).items():
        lines.append(f"{name:<18}{a:12.3f}{b:12.3f}{g:10.2f}")
    return "\n".join(lines)


def aggregate_table(pairs) -> tuple[list[dict], str]:
    """Rows per (scenario, seed) pair and a text table with per-scenario medians.

    ``pairs`` holds (mpc_summary, pid_summary) tuples from the same seed.
    """
    rows = []
    for m, p in pairs:
        rows.append(dict(
            scenario=m.scenario, seed=m.seed,
            mpc_endurance_min=m.endurance_min, pid_endurance_min=p.endurance_min,
            endurance_gain_pct=improvement_pct(m.endurance_min, p.endurance_min),
            mpc_peak_CO2_pct=m.peak_x_CO2_pct, pid_peak_CO2_pct=p.peak_x_CO2_pct,
            mpc_peak_Tc_hat=m.peak_T_c_hat, pid_peak_Tc_hat=p.peak_T_c_hat,
            mpc_normal_hard=m.normal_hard_violations,
            flagged=int(m.flagged or p.flagged)))
    head = (f"{'scen':<5}{'seed':>5}{'MPC min':>10}{'PID min':>10}{'gain %':>8}"
            f"{'MPC CO2%':>10}{'PID CO2%':>10}{'MPC Tc^':>9}{'PID Tc^':>9}{'hard':>5}")
    lines = [head]
    for r in rows:
        lines.append(f"{r['scenario']:<5}{r['seed']:>5}{r['mpc_endurance_min']:10.2f}"
                     f"{r['pid_endurance_min']:10.2f}{r['endurance_gain_pct']:8.2f}"
                     f"{r['mpc_peak_CO2_pct']:10.3f}{r['pid_peak_CO2_pct']:10.3f}"
                     f"{r['mpc_peak_Tc_hat']:9.3f}{r['pid_peak_Tc_hat']:9.3f}"
                     f"{r['mpc_normal_hard']:5d}" + ("  FLAGGED" if r["flagged"] else ""))
    for scen in sorted({r["scenario"] for r in rows}):
        gains = [r["endurance_gain_pct"] for r in rows if r["scenario"] == scen]
        lines.append(f"{scen}: median endurance gain {statistics.median(gains):.2f} %")
    return rows, "\n".join(lines)


def write_rows_csv(rows, path) -> Path:
    path = Path(path)
    with _open_write(path) as fh:
        if rows:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: (v if isinstance(v, str) else _fmt(v)) for k, v in r.items()})
    return path


def write_plot_data(trace: MissionTrace, path) -> Path:
    """Time in minutes against tank mass, x_O2, x_CO2 and core temperature."""
    path = Path(path)
    with _open_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([c for c, _ in PLOT_COLUMNS])
        if len(trace):
            t = trace.col("t[s]") / 60.0
            cols = [t] + [trace.col(src) for _, src in PLOT_COLUMNS[1:]]
            for i in range(len(t)):
                w.writerow([_fmt(c[i]) for c in cols])
    return path


def render_figures(traces, out_dir, stem: str = "mission") -> list[Path]:
    """One PNG per plotted quantity, overlaying the given traces."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for col, label, scale in (("m_O2_tank[kg]", "O2 tank [kg]", 1.0),
                              ("x_O2[-]", "x_O2 [%]", 100.0),
                              ("x_CO2[-]", "x_CO2 [%]", 100.0),
                              ("T_c[C]", "core temperature [C]", 1.0)):
        fig, ax = plt.subplots(figsize=(6.4, 3.6))
        for tr in traces:
            if len(tr):
                ax.plot(tr.col("t[s]") / 60.0, tr.col(col) * scale, lw=1.0,
                        label=tr.meta.get("controller", ""))
        if col == "m_O2_tank[kg]" and traces and len(traces[0]):
            ax.axhline(0.1 * traces[0].col(col)[0], color="0.5", ls="--", lw=0.8,
                       label="10 % floor")
        ax.set_xlabel("time [min]")
        ax.set_ylabel(label)
        ax.legend(frameon=False)
        fig.tight_layout()
        p = out_dir / f"{stem}_{col.split('[')[0]}.png"
        try:
            fig.savefig(p, dpi=120)
        except OSError as exc:
            raise OSError(f"{p}: {exc.strerror or exc}") from exc
        finally:
            plt.close(fig)
        paths.append(p)
    return paths


def emit_outputs(trace: MissionTrace, summary: MissionSummary, out_dir,
                 figures: bool = True) -> list[Path]:
    """Trace CSV, summary CSV and text, plot data and optional figures."""
    out_dir = Path(out_dir)
    stem = f"{summary.scenario}_{summary.controller}_s{summary.seed}"
    paths = [write_trace_csv(trace, out_dir / f"{stem}_trace.csv"),
             write_summary_csv([summary], out_dir / f"{stem}_summary.csv")]
    txt = out_dir / f"{stem}_summary.txt"
    try:
        txt.write_text(format_summary(summary) + "\n")
    except OSError as exc:
        raise OSError(f"{txt}: {exc.strerror or exc}") from exc
    paths.append(txt)
    paths.append(write_plot_data(trace, out_dir / f"{stem}_plot.csv"))
    if figures:
        paths += render_figures([trace], out_dir, stem)
    return paths


def summary_equal(a: MissionSummary, b: MissionSummary) -> bool:
    """Field-wise equality treating nan as equal to nan."""
    for f in dataclasses.fields(MissionSummary):
        x, y = getattr(a, f.name), getattr(b, f.name)
        if isinstance(x, float) and isinstance(y, float) and math.isnan(x) and math.isnan(y):
            continue
        if x != y:
            return False
    return True
