"""Traffic-responsive arterial signal control.

Covers the classic Webster cycle formula, the log-linear modified cycle model
with regression calibration, corridor-wide demand estimation from entrance
counts and turning ratios, phase flow ratios, green splits, and the dominant
phase exposed to the freeway control agent.

The fixed five-phase scheme serves, in order:
  1 southbound (all movements), 2 south+north through/right, 3 northbound
  (all movements), 4 east+west through/right, 5 east+west left turns.
Offsets are always 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from .network import DIRECTIONS, TurnRatios

PHASE_MOVEMENTS = (
    (("S", "l"), ("S", "t"), ("S", "r")),
    (("S", "t"), ("S", "r"), ("N", "t"), ("N", "r")),
    (("N", "l"), ("N", "t"), ("N", "r")),
    (("E", "t"), ("E", "r"), ("W", "t"), ("W", "r")),
    (("E", "l"), ("W", "l")),
)
NUM_PHASES = len(PHASE_MOVEMENTS)


@dataclass(frozen=True)
class CycleModel:
    """Log-linear cycle-length model T_c = a1*ln(T_l/(1-Y)) + a2 on a discrete
    cycle grid."""

    alpha1: float = 136.8
    alpha2: float = -357.7
    lost_time_s: float = 16.0
    cycle_min_s: float = 40.0
    cycle_max_s: float = 180.0
    cycle_step_s: float = 10.0

    def __post_init__(self) -> None:
        if self.alpha1 <= 0:
            raise ValueError("alpha1 must be positive")
        if self.cycle_step_s <= 0 or self.cycle_min_s >= self.cycle_max_s:
            raise ValueError("cycle space must be an ascending grid")

    @property
    def cycle_space(self) -> tuple:
        n = int(round((self.cycle_max_s - self.cycle_min_s) / self.cycle_step_s)) + 1
        return tuple(self.cycle_min_s + i * self.cycle_step_s for i in range(n))


@dataclass(frozen=True)
class FlowRatios:
    """Per-phase flow ratios Y_1..Y_5 and their sum Y."""

    per_phase: tuple

    def __post_init__(self) -> None:
        if len(self.per_phase) != NUM_PHASES:
            raise ValueError(f"expected {NUM_PHASES} phase ratios")
        if any(y < 0 for y in self.per_phase):
            raise ValueError("flow ratios must be nonnegative")

    @property
    def total(self) -> float:
        return sum(self.per_phase)


@dataclass(frozen=True)
class SignalPlan:
    """Cycle length, five green times, and a fixed zero offset."""

    cycle_s: float
    greens_s: tuple
    lost_time_s: float = 16.0
    offset_s: float = 0.0

    def __post_init__(self) -> None:
        if len(self.greens_s) != NUM_PHASES:
            raise ValueError(f"expected {NUM_PHASES} green times")
        if self.offset_s != 0.0:
            raise ValueError("offsets are fixed at 0")
        if abs(sum(self.greens_s) - (self.cycle_s - self.lost_time_s)) > 1e-9:
            raise ValueError("green times must sum to cycle minus lost time")


@dataclass(frozen=True)
class DemandEstimate:
    """Estimated approach demands (veh/h) at one intersection."""

    east: float
    south: float
    west: float
    north: float

    def get(self, direction: str) -> float:
        return {"E": self.east, "S": self.south,
                "W": self.west, "N": self.north}[direction]


@dataclass(frozen=True)
class CalibrationSample:
    """One calibration run: demand level, tried cycle, measured performance.

    Base values come from the 60 s cycle run at the same demand level and
    iteration. ``flow_ratio_sum`` carries the level's Y for the regression
    abscissa ln(T_l / (1 - Y)).
    """

    demand_veh_h: float
    cycle_s: float
    travel_time_s: float
    fuel: float
    emission: float
    base_travel_time_s: float
    base_fuel: float
    base_emission: float
    performance: float
    flow_ratio_sum: float
    iteration: int = 0


def webster_cycle(lost_time_s: float, flow_ratio_sum: float) -> float:
    """Webster's delay-minimizing cycle (1.5*T_l + 5) / (1 - Y)."""
    if not 0 <= flow_ratio_sum < 1:
        raise ValueError(f"flow ratio sum {flow_ratio_sum} outside [0, 1)")
    return (1.5 * lost_time_s + 5.0) / (1.0 - flow_ratio_sum)


def modified_cycle(model: CycleModel, flow_ratio_sum: float) -> float:
    """Log-linear cycle model snapped to the cycle grid, ties to the larger
    value, clamped into [cycle_min, cycle_max]."""
    if not 0 < flow_ratio_sum < 1:
        raise ValueError(f"flow ratio sum {flow_ratio_sum} outside (0, 1)")
    raw = model.alpha1 * math.log(model.lost_time_s / (1.0 - flow_ratio_sum)) \
        + model.alpha2
    step = model.cycle_step_s
    snapped = math.floor(raw / step + 0.5) * step  # half-up: midpoints go larger
    return min(model.cycle_max_s, max(model.cycle_min_s, snapped))


def performance_index(travel_time: float, fuel: float, emission: float,
                      base_travel_time: float, base_fuel: float,
                      base_emission: float) -> float:
    """Weighted relative cost 0.4*T_t/T_t0 + 0.3*F/F0 + 0.3*E/E0."""
    if min(base_travel_time, base_fuel, base_emission) <= 0:
        raise ValueError("base-case values must be positive")
    return (0.4 * travel_time / base_travel_time
            + 0.3 * fuel / base_fuel
            + 0.3 * emission / base_emission)


def calibrate_cycle_model(samples: Sequence[CalibrationSample],
                          lost_time_s: float = 16.0) -> tuple:
    """Fit (alpha1, alpha2) by OLS on best-performance cycles.

    Per (demand level, iteration) group, the cycle with minimal performance
    index is selected (ties go to the larger cycle); the regression maps
    ln(T_l / (1 - Y)) to that best cycle. Returns (alpha1, alpha2, r_squared).
    Groups with Y >= 1 have no abscissa and are skipped.
    """
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
    if len(set(xs)) < 2:
        raise ValueError("need at least two distinct abscissae to fit the model")
    x = np.asarray(xs)
    y = np.asarray(ys)
    design = np.column_stack([x, np.ones_like(x)])
    (alpha1, alpha2), *_ = np.linalg.lstsq(design, y, rcond=None)
    fitted = design @ np.array([alpha1, alpha2])
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r_squared = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(alpha1), float(alpha2), r_squared


def estimate_turn_ratios(mean_left: float, mean_through: float,
                         mean_right: float) -> tuple:
    """Turning ratios from flow-distribution means: y_m = mu_m / sum(mu)."""
    total = mean_left + mean_through + mean_right
    if total <= 0:
        raise ValueError("flow means must not all be zero")
    return (mean_left / total, mean_through / total, mean_right / total)


def estimate_demands(west_inputs: Sequence[float], east_inputs: Sequence[float],
                     south_input: float, north_input: float,
                     turn_ratios: Sequence[Dict[str, TurnRatios]],
                     offramp_means: Sequence[float]) -> list:
    """Approach demand estimates for every intersection of the corridor.

    Westbound adds the historical off-ramp mean; southbound propagates forward
    from intersection k-1 and northbound backward from k+1, through the left /
    right / through shares that feed each approach. Boundary intersections use
    the measured main-street inputs.
    """
    k_count = len(west_inputs)
    if k_count == 0:
        raise ValueError("corridor must contain at least one intersection")
    if not (len(east_inputs) == len(turn_ratios) == len(offramp_means) == k_count):
        raise ValueError("corridor arrays must have one entry per intersection")

    west = [west_inputs[k] + offramp_means[k] for k in range(k_count)]
    east = list(east_inputs)
    south = [0.0] * k_count
    north = [0.0] * k_count

    south[0] = south_input
    for k in range(1, k_count):
        r = turn_ratios[k - 1]
        south[k] = (r["W"].left * west[k - 1]
                    + r["E"].right * east[k - 1]
                    + r["S"].through * south[k - 1])
    north[k_count - 1] = north_input
    for k in range(k_count - 2, -1, -1):
        r = turn_ratios[k + 1]
        north[k] = (r["W"].right * west[k + 1]
                    + r["E"].left * east[k + 1]
                    + r["N"].through * north[k + 1])
    return [DemandEstimate(east=east[k], south=south[k],
                           west=west[k], north=north[k])
            for k in range(k_count)]


def flow_ratios(estimate: DemandEstimate, turn_ratios: Dict[str, TurnRatios],
                saturation_veh_h) -> FlowRatios:
    """Per-phase flow ratios for the five-phase scheme.

    ``saturation_veh_h`` may be a scalar or a direction -> value mapping.
    """
    if isinstance(saturation_veh_h, dict):
        qs = saturation_veh_h
    else:
        qs = {d: saturation_veh_h for d in DIRECTIONS}
    if any(qs[d] <= 0 for d in DIRECTIONS):
        raise ValueError("saturation flows must be positive")

    d = {name: estimate.get(name) for name in DIRECTIONS}
    r = turn_ratios
    y1 = d["S"] / qs["S"]
    y2 = ((r["S"].right + r["S"].through) * d["S"] / qs["S"]
          + (r["N"].right + r["N"].through) * d["N"] / qs["N"])
    y3 = d["N"] / qs["N"]
    y4 = ((r["W"].right + r["W"].through) * d["W"] / qs["W"]
          + (r["E"].right + r["E"].through) * d["E"] / qs["E"])
    y5 = r["W"].left * d["W"] / qs["W"] + r["E"].left * d["E"] / qs["E"]
    return FlowRatios((y1, y2, y3, y4, y5))


def green_splits(cycle_s: float, lost_time_s: float,
                 ratios: FlowRatios) -> tuple:
    """Green times proportional to the phase flow ratios; with no demand at all
    the available green is split equally."""
    if cycle_s <= lost_time_s:
        raise ValueError("cycle must exceed the lost time")
    available = cycle_s - lost_time_s
    total = ratios.total
    if total == 0:
        return tuple(available / NUM_PHASES for _ in range(NUM_PHASES))
    return tuple(available * y / total for y in ratios.per_phase)


def dominant_phase(plan: SignalPlan) -> int:
    """1-based index of the phase with the largest green; ties break low."""
    best = max(plan.greens_s)
    return plan.greens_s.index(best) + 1


def responsive_plan(estimate: DemandEstimate,
                    turn_ratios: Dict[str, TurnRatios],
                    saturation_veh_h, model: CycleModel) -> SignalPlan:
    """Signal plan from demand estimates via the modified cycle model.

    Oversaturated intersections (Y >= 1) fall back to the maximum cycle, and a
    fully idle one to the minimum cycle with equal splits; the model itself is
    only defined on Y in (0, 1).
    """
    ratios = flow_ratios(estimate, turn_ratios, saturation_veh_h)
    if ratios.total <= 0:
        cycle = model.cycle_min_s
    elif ratios.total >= 1:
        cycle = model.cycle_max_s
    else:
        cycle = modified_cycle(model, ratios.total)
    greens = green_splits(cycle, model.lost_time_s, ratios)
    return SignalPlan(cycle_s=cycle, greens_s=greens,
                      lost_time_s=model.lost_time_s)
