"""CSV tables and matplotlib figures for evaluation, calibration, and
training outputs. Figures render to files next to the delimited data."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Dict, List, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .runner import RunResult  # noqa: E402

METRIC_COLUMNS = [
    "scenario", "demand_level", "incident", "strategy", "replications",
    "travel_time_min", "mean_stops", "emission_g_per_km", "fuel_g_per_km",
    "onramp_queue_m", "arterial_queue_m", "flagged_runs",
    "travel_time_min_improvement_pct", "mean_stops_improvement_pct",
    "emission_g_per_km_improvement_pct", "arterial_queue_m_improvement_pct",
]

STRATEGY_TITLES = {
    "none": "No freeway control",
    "feedback": "Decentralized feedback control",
    "ql_uncoordinated": "QL without coordination",
    "ql_coordinated": "QL with coordination",
}


def write_csv(rows: List[dict], path, columns: Optional[List[str]] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if columns is None:
        columns = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def write_metrics_csv(rows: List[dict], path) -> None:
    write_csv(rows, path, METRIC_COLUMNS)


def _bracketed(value: float, pct: float, digits: int = 1) -> str:
    if math.isnan(value):
        return "n/a"
    text = f"{value:.{digits}f}"
    if not math.isnan(pct) and abs(pct) > 1e-9:
        text += f" ({pct:.0f}%)"
    return text


def write_summary_table_csv(rows: List[dict], path) -> None:
    """Paper-shaped table: one block per scenario, improvement percentages in
    brackets next to travel time, stops, and emission."""
    out = []
    for row in rows:
        out.append({
            "scenario": row["scenario"],
            "strategy": STRATEGY_TITLES.get(row["strategy"], row["strategy"]),
            "travel_time_min": _bracketed(
                row["travel_time_min"],
                row.get("travel_time_min_improvement_pct", math.nan)),
            "stops": _bracketed(
                row["mean_stops"],
                row.get("mean_stops_improvement_pct", math.nan)),
            "emission_g_per_km": _bracketed(
                row["emission_g_per_km"],
                row.get("emission_g_per_km_improvement_pct", math.nan)),
            "onramp_queue_m": f"{row['onramp_queue_m']:.1f}",
            "arterial_queue_m": f"{row['arterial_queue_m']:.1f}",
        })
    write_csv(out, path)


def write_trace_csv(result: RunResult, path) -> None:
    """Per-tick section state: time, density, rho_star plus speed and closure
    columns. Requires the run to have been executed with tracing enabled."""
    rows = [{"time": t, "section": sec, "density": rho, "rho_star": rho_star,
             "speed_kmh": speed, "closed_lanes": closed}
            for (t, sec, rho, rho_star, speed, closed)
            in result.sim.trace_rows]
    write_csv(rows, path,
              ["time", "section", "density", "rho_star", "speed_kmh",
               "closed_lanes"])


def write_density_profile_csv(result: RunResult, section: int, path) -> None:
    """Per-cycle density series of one section with the desired-density
    reference column."""
    rows = [{"time": t, "density": rho, "rho_star": star}
            for t, rho, star in zip(result.times_s,
                                    result.density_series[section],
                                    result.rho_star_series)]
    write_csv(rows, path, ["time", "density", "rho_star"])


def density_profile_figure(traces: Dict[str, RunResult], section: int,
                           title: str, path) -> None:
    """Overlay the strategies' density profiles for one section, with the
    desired density as a dashed reference."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7, 4))
    rho_star = None
    for name, result in traces.items():
        minutes = [t / 60.0 for t in result.times_s]
        ax.plot(minutes, result.density_series[section],
                label=STRATEGY_TITLES.get(name, name), linewidth=1.2)
        rho_star = result.rho_star_series
    if rho_star is not None:
        minutes = [t / 60.0 for t in list(traces.values())[0].times_s]
        ax.plot(minutes, rho_star, "--", color="purple", linewidth=1.0,
                label="desired density")
    ax.set_xlabel("time (min)")
    ax.set_ylabel(f"section {section} density (veh/km)")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def calibration_figure(samples, alpha1: float, alpha2: float,
                       r_squared: float, lost_time_s: float, path) -> None:
    """Best-performance cycles against ln(T_l/(1-Y)) with the fitted line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    groups: Dict[tuple, list] = {}
    for s in samples:
        groups.setdefault((s.demand_veh_h, s.iteration), []).append(s)
    xs, ys = [], []
    for _, group in sorted(groups.items()):
        y_sum = group[0].flow_ratio_sum
        if y_sum >= 1.0:
            continue
        best = min(group, key=lambda s: (s.performance, -s.cycle_s))
        xs.append(math.log(lost_time_s / (1.0 - y_sum)))
        ys.append(best.cycle_s)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter(xs, ys, s=18, label="best-index cycles")
    if xs:
        lo, hi = min(xs), max(xs)
        ax.plot([lo, hi], [alpha1 * lo + alpha2, alpha1 * hi + alpha2], "r-",
                label=f"fit: {alpha1:.1f} ln(T_l/(1-Y)) {alpha2:+.1f} "
                      f"(R^2={r_squared:.2f})")
    ax.set_xlabel("ln(T_l / (1 - Y))")
    ax.set_ylabel("best cycle (s)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def training_curve_figure(log_rows: List[dict], path,
                          x_key: str = "episode") -> None:
    """Reward and update-magnitude traces from a training log."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not log_rows:
        return
    xs = [row[x_key] for row in log_rows]
    fig, axes = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    if "mean_reward" in log_rows[0]:
        axes[0].plot(xs, [row["mean_reward"] for row in log_rows])
        axes[0].set_ylabel("mean episode reward")
    elif "travel_time_min" in log_rows[0]:
        axes[0].plot(xs, [row["travel_time_min"] for row in log_rows])
        axes[0].set_ylabel("travel time (min)")
    key = "window_max_delta" if "window_max_delta" in log_rows[0] else "queue_m"
    axes[1].plot(xs, [row[key] for row in log_rows])
    axes[1].set_ylabel(key)
    axes[1].set_xlabel(x_key)
    if key == "window_max_delta":
        axes[1].set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
