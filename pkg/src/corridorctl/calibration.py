"""Calibration of the cycle-length model on the isolated-intersection scene.

Sweeps the demand grid {400..2000} veh/h against the cycle grid {40..180} s,
twice, scoring each run with the weighted travel-time/fuel/emission index
against the 60 s base cycle of the same demand level, then fits the
log-linear cycle model through the best-performing cycles. Demand levels that
saturate the intersection (Y >= 1) are swept but carry no regression
abscissa.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

from .mesosim import ControlVector, CorridorSimulation
from .network import (DIRECTIONS, NetworkParams, ScenarioConfig,
                      isolated_intersection_network)
from .signal_control import (CalibrationSample, CycleModel, DemandEstimate,
                             SignalPlan, calibrate_cycle_model, flow_ratios,
                             green_splits, performance_index)


@dataclass(frozen=True)
class CalibrationSettings:
    demand_grid: tuple = tuple(range(400, 2001, 100))
    iterations: int = 2
    base_cycle_s: float = 60.0
    run_duration_s: float = 900.0
    warmup_s: float = 180.0
    dt_s: float = 1.0
    turn_ratios: tuple = (0.25, 0.5, 0.25)
    approach_transit_s: float = 79.2  # 1.1 km of approach at 50 km/h
    demand_std_frac: float = 0.05


@dataclass
class CalibrationResult:
    samples: List[CalibrationSample]
    alpha1: float
    alpha2: float
    r_squared: float
    model: CycleModel


def _isolated_case(demand_veh_h: float, cycle_s: float, seed: int,
                   settings: CalibrationSettings,
                   params: NetworkParams) -> tuple:
    """One isolated-intersection run; returns (travel_time_s, fuel, emission,
    flow_ratio_sum)."""
    network = isolated_intersection_network(
        demand_veh_h, params, settings.turn_ratios, settings.demand_std_frac)
    inter = network.intersection(1)
    estimate = DemandEstimate(east=demand_veh_h, south=demand_veh_h,
                              west=demand_veh_h, north=demand_veh_h)
    ratios = flow_ratios(estimate, inter.turn_ratios, inter.saturation_veh_h)
    model = CycleModel()
    greens = green_splits(cycle_s, model.lost_time_s, ratios)
    plan = SignalPlan(cycle_s=cycle_s, greens_s=greens,
                      lost_time_s=model.lost_time_s)
    scenario = ScenarioConfig(
        demand_level="moderate", duration_s=settings.run_duration_s,
        warmup_s=settings.warmup_s, dt_s=settings.dt_s, seed=seed,
        stochastic_demand=True, network=params)
    sim = CorridorSimulation(network, scenario)
    controls = ControlVector(upstream_speed_kmh=network.fd.free_flow_kmh,
                             sections={}, plans={1: plan},
                             advisories_enabled=False)
    warmup_ticks = int(settings.warmup_s / settings.dt_s)
    total_ticks = int(settings.run_duration_s / settings.dt_s)
    for _ in range(warmup_ticks):
        sim.step(controls)
    inter_state = sim.intersections[1]
    served_before = sum(inter_state.served.values())
    for _ in range(total_ticks - warmup_ticks):
        sim.step(controls)
    served = sum(inter_state.served.values()) - served_before

    queue_integral_veh_s = (sum(sim.approach_queue_integral.values())
                            / network.vehicle_spacing_m)
    mean_wait_s = queue_integral_veh_s / served if served > 0 else \
        settings.run_duration_s
    travel_time_s = mean_wait_s + settings.approach_transit_s
    speed_kmh = 1.1 / (travel_time_s / 3600.0)
    emission = (90.0 * speed_kmh + 5000.0 + 0.012 * speed_kmh ** 3) / speed_kmh
    fuel = emission / 14.0
    return travel_time_s, fuel, emission, ratios.total


def calibrate_tsc(settings: CalibrationSettings = CalibrationSettings(),
                  params: NetworkParams = NetworkParams(),
                  seed: int = 0) -> CalibrationResult:
    """Run the full calibration sweep and fit the cycle model."""
    base_model = CycleModel()
    cycles = base_model.cycle_space
    if settings.base_cycle_s not in cycles:
        raise ValueError("base cycle must be on the cycle grid")
    samples: List[CalibrationSample] = []
    for iteration in range(settings.iterations):
        for demand in settings.demand_grid:
            # one seed per (iteration, demand): cycles compare on paired demand
            case_seed = seed + iteration * 1000003 + int(demand)
            results = {}
            for cycle in cycles:
                results[cycle] = _isolated_case(
                    demand, cycle, case_seed, settings, params)
            base_tt, base_f, base_e, _ = results[settings.base_cycle_s]
            for cycle in cycles:
                tt, f, e, y_sum = results[cycle]
                samples.append(CalibrationSample(
                    demand_veh_h=demand, cycle_s=cycle,
                    travel_time_s=tt, fuel=f, emission=e,
                    base_travel_time_s=base_tt, base_fuel=base_f,
                    base_emission=base_e,
                    performance=performance_index(tt, f, e, base_tt,
                                                  base_f, base_e),
                    flow_ratio_sum=y_sum, iteration=iteration))
    alpha1, alpha2, r_squared = calibrate_cycle_model(
        samples, base_model.lost_time_s)
    fitted = CycleModel(alpha1=alpha1, alpha2=alpha2,
                        lost_time_s=base_model.lost_time_s)
    return CalibrationResult(samples=samples, alpha1=alpha1, alpha2=alpha2,
                             r_squared=r_squared, model=fitted)
