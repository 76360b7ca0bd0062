"""Drives one simulation run: the traffic-responsive signal controller, the
freeway control strategy, the upstream VSL policy, and the engine tick loop.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Dict, List, Optional

from .freeway_agent import upstream_vsl_command
from .mesosim import ControlVector, CorridorSimulation
from .network import NetworkTopology, ScenarioConfig
from .signal_control import CycleModel, SignalPlan, responsive_plan


@dataclass
class RunResult:
    sim: CorridorSimulation
    scenario: ScenarioConfig
    density_series: Dict[int, List[float]]  # section -> per-cycle densities
    rho_star_series: List[float]
    times_s: List[float]


def _tsc_plans(sim: CorridorSimulation, model: CycleModel) -> Dict[int, SignalPlan]:
    estimates = sim.demand_estimates()
    plans = {}
    for inter in sim.net.intersections:
        plans[inter.index] = responsive_plan(
            estimates[inter.index - 1], inter.turn_ratios,
            inter.saturation_veh_h, model)
    return plans


def _upstream_speed(sim: CorridorSimulation, strategy) -> float:
    fd = sim.net.fd
    if not getattr(strategy, "uses_upstream_vsl", False):
        return fd.free_flow_kmh
    if not sim.incident_active():
        return fd.free_flow_kmh
    bottleneck = sim.current_bottleneck_capacity()
    cell = sim._cell_of_section(sim.scenario.incident.section)
    congested = sim.density(cell) > fd.critical_veh_km
    mode = "bottleneck_with_drop" if congested else "bottleneck"
    return upstream_vsl_command(mode, fd, bottleneck)


def run_corridor(network: NetworkTopology, scenario: ScenarioConfig, strategy,
                 learn: bool = False, trace: bool = False,
                 cycle_model: CycleModel = CycleModel()) -> RunResult:
    """Run one scenario under the given strategy; returns the finished engine
    plus per-cycle density series for reporting."""
    sim = CorridorSimulation(network, scenario, trace=trace)
    rng = random.Random(scenario.seed ^ 0x5EED)
    section_indices = [s.index for s in network.sections]
    strategy.reset(section_indices)

    cycle_ticks = int(round(scenario.control_cycle_s / scenario.dt_s))
    n_cycles = int(scenario.duration_s / scenario.control_cycle_s)
    density_series: Dict[int, List[float]] = {i: [] for i in section_indices}
    rho_star_series: List[float] = []
    times: List[float] = []

    for _ in range(n_cycles):
        meas = sim.cycle_measurements()
        learning_now = learn and sim.t_s >= scenario.warmup_s
        section_controls = strategy.controls(meas, rng, learn=learning_now)
        controls = ControlVector(
            upstream_speed_kmh=_upstream_speed(sim, strategy),
            sections=section_controls,
            plans=_tsc_plans(sim, cycle_model),
            advisories_enabled=getattr(strategy, "advisories", True),
        )
        times.append(sim.t_s)
        rho_star_series.append(sim.desired_density_now())
        for i in section_indices:
            density_series[i].append(sim.density(sim._cell_of_section(i)))
        for _ in range(cycle_ticks):
            sim.step(controls)

    if learn:
        # close out the last cycle so its outcome is learned from
        strategy.controls(sim.cycle_measurements(), rng, learn=True)

    return RunResult(sim=sim, scenario=scenario,
                     density_series=density_series,
                     rho_star_series=rho_star_series, times_s=times)
