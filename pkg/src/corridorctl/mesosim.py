"""Discrete-time mesoscopic corridor dynamics.

Freeway sections evolve by a first-order cell-transmission update with a
capacity-dropping incident bottleneck; on-ramps and arterial approaches are
point queues; arterial links are fixed-delay pipelines; probe vehicles ride
the section speed field to reconstruct travel times and stops.

The engine is strictly sequential and deterministic for a fixed seed. All
per-tick arithmetic happens in vehicles (not rates) so that the conservation
identity entered - exited - stored holds to float accuracy.

Layout conventions:

* Cells are indexed 0..N, cell 0 being the upstream VSL zone (when present)
  and cells 1..N the controlled freeway sections.
* Intersections sit on a north-south arterial main street; intersection k+1
  is downstream of k in the freeway travel direction. Off-ramps feed the
  Westbound approach of the paired intersection; a configurable share of each
  east-leg discharge feeds the paired on-ramp. A full on-ramp blocks east-leg
  service until space opens up (queue spillback surrogate).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .freeway_agent import FtcAction, desired_density
from .network import (DIRECTIONS, MOVEMENTS, DemandProfile, NetworkTopology,
                      ScenarioConfig, fd_receiving_flow, fd_sending_flow,
                      speed_limited_capacity)
from .signal_control import (NUM_PHASES, PHASE_MOVEMENTS, SignalPlan,
                             estimate_demands, dominant_phase)

METERING_RATES_VEH_H = {0.0: 1800.0, 0.5: 1029.0, 1.0: 900.0, 1.5: 800.0,
                        2.0: 720.0, 3.0: 600.0, 4.0: 514.0, 6.0: 400.0}

STOP_ENTER_KMH = 5.0
STOP_CLEAR_KMH = 10.0
DEMAND_REFRESH_S = 300.0
ESTIMATE_WINDOW_S = 300.0


def metering_rate(red_s: float) -> float:
    """On-ramp admission rate for a red phase duration (fixed 3 s green):
    roughly one vehicle per 3+red seconds, with red 0 meaning unmetered."""
    try:
        return METERING_RATES_VEH_H[float(red_s)]
    except KeyError:
        raise ValueError(
            f"red duration {red_s} not in {sorted(METERING_RATES_VEH_H)}"
        ) from None


def bottleneck_capacity(capacity_veh_h: float, lane_count: int,
                        closed_lanes: int, congested: bool, lc_active: bool,
                        drop_frac: float, lc_drop_frac: float) -> float:
    """Discharge cap of a section: full capacity without closures, the
    lane-reduced capacity C_b while uncongested, and (1-eps)*C_b once
    congestion has formed, with the smaller lane-change drop factor when
    advisories cover the approach."""
    if closed_lanes <= 0:
        return capacity_veh_h
    reduced = capacity_veh_h * (lane_count - closed_lanes) / lane_count
    if not congested:
        return reduced
    eps = lc_drop_frac if lc_active else drop_frac
    return (1.0 - eps) * reduced


class DemandSampler:
    """Poisson-thinned arrivals whose hourly rate is a truncated-normal draw
    refreshed every five minutes; optionally fluid (deterministic) arrivals."""

    def __init__(self, profile: DemandProfile, multiplier: float, dt_s: float,
                 stochastic: bool, rng: np.random.Generator):
        self.profile = profile
        self.multiplier = multiplier
        self.dt_s = dt_s
        self.stochastic = stochastic
        self.rng = rng
        self.block_ticks = max(1, int(round(DEMAND_REFRESH_S / dt_s)))
        self.rate_veh_h = 0.0
        self._block: Optional[np.ndarray] = None
        self._cursor = 0

    def _refresh(self) -> None:
        mu = self.profile.mean_veh_h * self.multiplier
        sigma = self.profile.std_veh_h * self.multiplier
        if self.stochastic and sigma > 0:
            rate = self.rng.normal(mu, sigma)
        else:
            rate = mu
        self.rate_veh_h = max(0.0, rate)
        lam = self.rate_veh_h * self.dt_s / 3600.0
        if self.stochastic:
            self._block = self.rng.poisson(lam, size=self.block_ticks).astype(float)
        else:
            self._block = np.full(self.block_ticks, lam)
        self._cursor = 0

    def arrivals_veh(self) -> float:
        """Arrivals for the next tick (advances the sampler)."""
        if self._block is None or self._cursor >= self.block_ticks:
            self._refresh()
        value = float(self._block[self._cursor])
        self._cursor += 1
        return value


# ---------------------------------------------------------------------------
# Probe vehicles
# ---------------------------------------------------------------------------

@dataclass
class ProbeVehicle:
    """Virtual trajectory used for travel-time, stop, and emission metrics."""

    spawn_t_s: float
    release_veh: float  # cumulative entrance discharge that frees this probe
    enter_t_s: Optional[float] = None
    exit_t_s: Optional[float] = None
    position_km: float = 0.0
    cell: int = 0
    cell_enter_t_s: float = 0.0
    speed_kmh: float = 0.0
    stops: int = 0
    moving: bool = False
    emission_g: float = 0.0
    distance_km: float = 0.0


def emission_rate_g_h(speed_kmh: float) -> float:
    """Speed-based CO2 proxy, integrated along trajectories: 90*v + 5000
    + 0.012*v^3 g/h (equivalently 90 + 5000/v + 0.012*v^2 g/km)."""
    return 90.0 * speed_kmh + 5000.0 + 0.012 * speed_kmh ** 3


def advance_probe(probe: ProbeVehicle, cell_speeds_kmh: Sequence[float],
                  boundaries_km: Sequence[float], now_s: float, dt_s: float,
                  transits: Optional[list] = None) -> None:
    """Move an active probe one tick through a piecewise-constant speed field.

    ``boundaries_km`` holds each cell's downstream end; crossing times are
    interpolated within the tick. A stop is recorded when speed falls below
    5 km/h after having exceeded 10 km/h. Section transits are appended to
    ``transits`` as (cell, seconds) pairs.
    """
    remaining_s = dt_s
    while remaining_s > 0 and probe.exit_t_s is None:
        v = cell_speeds_kmh[probe.cell]
        if v > STOP_CLEAR_KMH:
            probe.moving = True
        elif probe.moving and v < STOP_ENTER_KMH:
            probe.stops += 1
            probe.moving = False
        if v <= 0:
            probe.speed_kmh = 0.0
            return
        end = boundaries_km[probe.cell]
        time_to_end_s = (end - probe.position_km) / v * 3600.0
        hop_s = min(remaining_s, time_to_end_s)
        probe.position_km += v * hop_s / 3600.0
        probe.emission_g += emission_rate_g_h(v) * hop_s / 3600.0
        probe.distance_km += v * hop_s / 3600.0
        probe.speed_kmh = v
        t_now = now_s + (dt_s - remaining_s) + hop_s
        remaining_s -= hop_s
        if hop_s == time_to_end_s:
            if transits is not None:
                transits.append((probe.cell, t_now - probe.cell_enter_t_s))
            probe.position_km = end
            if probe.cell + 1 >= len(boundaries_km):
                probe.exit_t_s = t_now
            else:
                probe.cell += 1
                probe.cell_enter_t_s = t_now


# ---------------------------------------------------------------------------
# Control vector and cycle measurements
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ControlVector:
    """Everything the engine needs for one tick: the upstream zone speed, one
    coordinated action per section, one signal plan per intersection, and
    whether lane-drop advisories are in force at all."""

    upstream_speed_kmh: float
    sections: Dict[int, FtcAction]
    plans: Dict[int, SignalPlan]
    advisories_enabled: bool = True


@dataclass
class SectionMeasurement:
    """Aggregates one section's last control cycle for the control agents."""

    density_veh_km: float
    net_flow_veh_h: float
    queue_m: float
    closed_lanes: int
    dominant_phase: int
    demand_e_veh_h: float
    demand_s_veh_h: float
    demand_w_veh_h: float
    demand_n_veh_h: float
    travel_time_min: float
    speed_kmh: float
    length_km: float
    has_onramp: bool
    occupancy: float


@dataclass
class CycleMeasurements:
    t_s: float
    sections: Dict[int, SectionMeasurement]
    desired_density_veh_km: float
    free_flow_kmh: float
    bottleneck_capacity_veh_h: float
    incident_active: bool
    occupancy_setpoint: float = 0.2  # occupancy at critical density


_LEG_FOR_MOVEMENT = {
    ("S", "t"): "south", ("S", "l"): "east", ("S", "r"): "west",
    ("N", "t"): "north", ("N", "l"): "west", ("N", "r"): "east",
    ("E", "t"): "east", ("E", "l"): "north", ("E", "r"): "south",
    ("W", "t"): "west", ("W", "l"): "south", ("W", "r"): "north",
}


class _IntersectionState:
    def __init__(self, index: int, is_first: bool, is_last: bool,
                 ramp_section: Optional[int]):
        self.index = index
        self.is_first = is_first
        self.is_last = is_last
        self.ramp_section = ramp_section
        self.plan: Optional[SignalPlan] = None
        self.clock_s = 0.0
        self.queues = {(d, m): 0.0 for d in DIRECTIONS for m in MOVEMENTS}
        self.served = {(d, m): 0.0 for d in DIRECTIONS for m in MOVEMENTS}
        self._intervals: List[tuple] = []

    def set_plan(self, plan: SignalPlan) -> None:
        self.plan = plan
        self._intervals = []
        start = 0.0
        slack = plan.lost_time_s / NUM_PHASES
        for phase, movements in enumerate(PHASE_MOVEMENTS):
            end = start + plan.greens_s[phase]
            if end > start:
                self._intervals.append((start, end, movements))
            start = end + slack

    def green_overlap_s(self, dt_s: float) -> Dict[tuple, float]:
        """Seconds of green each movement receives during [clock, clock+dt)."""
        out: Dict[tuple, float] = {}
        t0, t1 = self.clock_s, self.clock_s + dt_s
        for start, end, movements in self._intervals:
            overlap = min(t1, end) - max(t0, start)
            if overlap > 0:
                for mv in movements:
                    out[mv] = out.get(mv, 0.0) + overlap
        return out

    def advance_clock(self, dt_s: float, next_plan: SignalPlan) -> None:
        self.clock_s += dt_s
        if self.plan is None or self.clock_s >= self.plan.cycle_s - 1e-9:
            self.clock_s = 0.0
            self.set_plan(next_plan)


class CorridorSimulation:
    """The discrete-time engine for one scenario run."""

    def __init__(self, network: NetworkTopology, scenario: ScenarioConfig,
                 trace: bool = False):
        self.net = network
        self.scenario = scenario
        self.dt_s = scenario.dt_s
        self.dt_h = scenario.dt_s / 3600.0
        self.t_s = 0.0
        self.trace_enabled = trace

        rng = np.random.default_rng(scenario.seed)
        self._rng = rng

        # Freeway cells: 0 = upstream zone (if any), 1..N = sections
        self.has_zone = network.upstream_zone_km > 0
        self.cell_lengths = []
        if self.has_zone:
            self.cell_lengths.append(network.upstream_zone_km)
        self.cell_lengths += [s.length_km for s in network.sections]
        self.num_cells = len(self.cell_lengths)
        self.cell_veh = [0.0] * self.num_cells
        self.cell_speed_kmh = [network.fd.free_flow_kmh] * self.num_cells
        self.closed_lanes = [0] * self.num_cells
        self.boundaries_km = list(np.cumsum(self.cell_lengths)) if self.num_cells \
            else []
        self.corridor_km = self.boundaries_km[-1] if self.num_cells else 0.0

        self.entrance_queue_veh = 0.0
        self.entrance_discharge_veh = 0.0
        self.entered_veh = 0.0
        self.exited_veh = 0.0

        mult = scenario.demand_multiplier
        self.mainline_sampler = DemandSampler(
            network.mainline_demand, mult, self.dt_s,
            scenario.stochastic_demand, rng)
        self.entrance_samplers = {
            key: DemandSampler(profile, mult, self.dt_s,
                               scenario.stochastic_demand, rng)
            for key, profile in sorted(network.arterial_demands.items())
        }

        spacing = network.vehicle_spacing_m
        self.veh_spacing_m = spacing
        self.ramp_queue_veh = {}
        self.ramp_storage_veh = {}
        self.offramp_sections = []
        for sec in network.sections:
            if sec.onramp is not None:
                self.ramp_queue_veh[sec.index] = 0.0
                self.ramp_storage_veh[sec.index] = sec.onramp.storage_m / spacing
            if sec.offramp is not None:
                self.offramp_sections.append(sec.index)
        self.section_by_intersection = {
            sec.paired_intersection: sec.index
            for sec in network.sections if sec.paired_intersection is not None
        }
        ramp_by_intersection = {
            sec.onramp.connecting_intersection: sec.index
            for sec in network.sections if sec.onramp is not None
        }

        k_count = network.num_intersections
        self.intersections = {
            inter.index: _IntersectionState(
                inter.index, inter.index == 1, inter.index == k_count,
                ramp_by_intersection.get(inter.index))
            for inter in network.intersections
        }

        # Fixed-delay pipelines between neighbouring intersections
        self.links: Dict[tuple, deque] = {}
        self._pipe_inbox: Dict[tuple, float] = {}
        for inter in network.intersections:
            delay = max(1, int(round(
                inter.link_m / 1000.0 / network.arterial_speed_kmh * 3600.0
                / self.dt_s)))
            if inter.index < k_count:
                self.links[(inter.index, "south")] = deque([0.0] * delay)
            if inter.index > 1:
                self.links[(inter.index, "north")] = deque([0.0] * delay)

        # Trailing windows of entrance arrivals for demand estimation
        self._window_ticks = max(1, int(round(ESTIMATE_WINDOW_S / self.dt_s)))
        self._entrance_windows = {
            key: deque([0.0] * self._window_ticks)
            for key in self.entrance_samplers
        }
        self._entrance_sums = {key: 0.0 for key in self.entrance_samplers}

        self.probes: List[ProbeVehicle] = []
        self._pending_probes: deque = deque()
        self.completed_probes: List[ProbeVehicle] = []
        self._probe_every = max(1, int(round(scenario.probe_period_s / self.dt_s)))
        self._tick = 0

        # Per-control-cycle accumulators (vehicles)
        self._cycle_in = [0.0] * self.num_cells
        self._cycle_out = [0.0] * self.num_cells
        self._cycle_ramp = [0.0] * self.num_cells
        self._cycle_off = [0.0] * self.num_cells
        self._cycle_transits: Dict[int, list] = {i: [] for i in range(self.num_cells)}
        self._cycle_start_s = 0.0

        # Post-warm-up metric accumulators
        self.ramp_queue_integral = {i: 0.0 for i in self.ramp_queue_veh}
        self.approach_queue_integral = {
            (k, d): 0.0 for k in self.intersections for d in DIRECTIONS}
        self.metric_time_s = 0.0

        self.trace_rows: List[tuple] = []
        self._controls: Optional[ControlVector] = None

    # -- helpers ----------------------------------------------------------

    @property
    def section_cells(self) -> range:
        start = 1 if self.has_zone else 0
        return range(start, self.num_cells)

    def _cell_of_section(self, section_index: int) -> int:
        return section_index if self.has_zone else section_index - 1

    def density(self, cell: int) -> float:
        return self.cell_veh[cell] / self.cell_lengths[cell]

    def incident_active(self) -> bool:
        inc = self.scenario.incident
        return (inc.enabled and inc.start_s <= self.t_s < inc.clear_s)

    def current_bottleneck_capacity(self) -> float:
        """Capacity of the incident bottleneck if one is active, else C."""
        fd = self.net.fd
        if not self.incident_active():
            return fd.capacity_veh_h
        sec = self.net.section(self.scenario.incident.section)
        return fd.capacity_veh_h * (sec.lane_count - 1) / sec.lane_count

    def desired_density_now(self) -> float:
        demand = (self.net.mainline_demand.mean_veh_h
                  * self.scenario.demand_multiplier)
        return desired_density(demand, self.current_bottleneck_capacity(),
                               self.net.fd.free_flow_kmh)

    def _validate_controls(self, controls: ControlVector) -> None:
        want_sections = {s.index for s in self.net.sections}
        if set(controls.sections) != want_sections:
            raise ValueError(
                f"control vector covers sections {sorted(controls.sections)}, "
                f"need {sorted(want_sections)}")
        want_k = set(self.intersections)
        if set(controls.plans) != want_k:
            raise ValueError(
                f"control vector covers intersections {sorted(controls.plans)}, "
                f"need {sorted(want_k)}")

    def measured_entrance_rates(self) -> Dict[tuple, float]:
        """Trailing five-minute entrance flows (veh/h); profile means before
        any traffic has been observed."""
        elapsed_s = min(self.t_s, ESTIMATE_WINDOW_S)
        rates = {}
        for key, total in self._entrance_sums.items():
            if elapsed_s < self.dt_s:
                rates[key] = (self.entrance_samplers[key].profile.mean_veh_h
                              * self.scenario.demand_multiplier)
            else:
                rates[key] = total / (elapsed_s / 3600.0)
        return rates

    def demand_estimates(self) -> list:
        """Per-intersection approach demand estimates from measured entrances,
        turning ratios, and historical off-ramp means."""
        rates = self.measured_entrance_rates()
        k_count = self.net.num_intersections
        offramp_means = [0.0] * k_count
        for sec in self.net.sections:
            if sec.offramp is not None:
                offramp_means[sec.offramp.connecting_intersection - 1] = \
                    sec.offramp.mean_offramp_flow_veh_h
        return estimate_demands(
            west_inputs=[rates.get((k, "W"), 0.0) for k in range(1, k_count + 1)],
            east_inputs=[rates.get((k, "E"), 0.0) for k in range(1, k_count + 1)],
            south_input=rates.get((1, "S"), 0.0),
            north_input=rates.get((k_count, "N"), 0.0),
            turn_ratios=[inter.turn_ratios for inter in self.net.intersections],
            offramp_means=offramp_means,
        )

    # -- main tick ---------------------------------------------------------

    def step(self, controls: ControlVector) -> None:
        self._validate_controls(controls)
        self._controls = controls
        inc = self.scenario.incident

        # incident lifecycle
        for i in self.section_cells:
            self.closed_lanes[i] = 0
        if self.incident_active():
            self.closed_lanes[self._cell_of_section(inc.section)] = 1

        # demand arrivals
        self.entrance_queue_veh += self._arrive_mainline()
        self._arrive_arterial()

        # arterial signal service (also feeds on-ramps)
        self._serve_intersections(controls)

        # freeway fluxes, all from the state at the start of the tick
        speeds = self._freeway_fluxes(controls)
        self.cell_speed_kmh = speeds

        # probes
        self._spawn_and_advance_probes(speeds)

        # metric integrals past warm-up
        if self.t_s >= self.scenario.warmup_s:
            self.metric_time_s += self.dt_s
            spacing = self.veh_spacing_m
            for i, q in self.ramp_queue_veh.items():
                self.ramp_queue_integral[i] += q * spacing * self.dt_s
            for k, inter in self.intersections.items():
                for d in DIRECTIONS:
                    meters = sum(inter.queues[(d, m)] for m in MOVEMENTS) * spacing
                    self.approach_queue_integral[(k, d)] += meters * self.dt_s

        if self.trace_enabled:
            rho_star = self.desired_density_now()
            for i in range(self.num_cells):
                self.trace_rows.append((
                    self.t_s, i if self.has_zone else i + 1, self.density(i),
                    rho_star, self.cell_speed_kmh[i], self.closed_lanes[i]))

        self._tick += 1
        self.t_s += self.dt_s

    def _arrive_mainline(self) -> float:
        arrivals = self.mainline_sampler.arrivals_veh()
        self.entered_veh += arrivals
        return arrivals

    def _arrive_arterial(self) -> None:
        for key, sampler in self.entrance_samplers.items():
            arrivals = sampler.arrivals_veh()
            self.entered_veh += arrivals
            k, direction = key
            ratios = self.net.intersection(k).turn_ratios[direction]
            queues = self.intersections[k].queues
            for m in MOVEMENTS:
                queues[(direction, m)] += arrivals * ratios.share(m)
            window = self._entrance_windows[key]
            self._entrance_sums[key] += arrivals - window[0]
            window.popleft()
            window.append(arrivals)

    def _serve_intersections(self, controls: ControlVector) -> None:
        for k, inter in self.intersections.items():
            if inter.plan is None:
                inter.set_plan(controls.plans[k])
            net_inter = self.net.intersection(k)
            overlaps = inter.green_overlap_s(self.dt_s)

            ramp_space = math.inf
            share = self.net.ramp_share_of_east_leg
            if inter.ramp_section is not None and share > 0:
                ramp_space = max(0.0, self.ramp_storage_veh[inter.ramp_section]
                                 - self.ramp_queue_veh[inter.ramp_section])

            for (d, m), green_s in overlaps.items():
                queue = inter.queues[(d, m)]
                if queue <= 0:
                    continue
                rate = net_inter.movement_rate_veh_h(m)
                served = min(queue, rate * green_s / 3600.0)
                leg = _LEG_FOR_MOVEMENT[(d, m)]
                if leg == "east" and inter.ramp_section is not None and share > 0:
                    served = min(served, ramp_space / share)
                    if served <= 0:
                        continue
                    ramp_space -= served * share
                inter.queues[(d, m)] = queue - served
                inter.served[(d, m)] += served
                self._route_leg(inter, leg, served)

            inter.advance_clock(self.dt_s, controls.plans[k])

        # move pipeline traffic one tick and deliver what arrives
        for (k, leg), pipe in self.links.items():
            arrived = pipe.popleft()
            pipe.append(self._pipe_inbox.pop((k, leg), 0.0))
            if arrived > 0:
                if leg == "south":
                    dest_k, approach = k + 1, "S"
                else:
                    dest_k, approach = k - 1, "N"
                ratios = self.net.intersection(dest_k).turn_ratios[approach]
                queues = self.intersections[dest_k].queues
                for m in MOVEMENTS:
                    queues[(approach, m)] += arrived * ratios.share(m)

    def _route_leg(self, inter: _IntersectionState, leg: str, veh: float) -> None:
        if leg == "west":
            self.exited_veh += veh
            return
        if leg == "east":
            share = self.net.ramp_share_of_east_leg
            if inter.ramp_section is not None and share > 0:
                self.ramp_queue_veh[inter.ramp_section] += veh * share
                self.exited_veh += veh * (1.0 - share)
            else:
                self.exited_veh += veh
            return
        if leg == "south":
            if inter.is_last:
                self.exited_veh += veh
            else:
                self._pipe_push((inter.index, "south"), veh)
            return
        if leg == "north":
            if inter.is_first:
                self.exited_veh += veh
            else:
                self._pipe_push((inter.index, "north"), veh)
            return
        raise AssertionError(f"unknown leg {leg}")

    def _pipe_push(self, key: tuple, veh: float) -> None:
        self._pipe_inbox[key] = self._pipe_inbox.get(key, 0.0) + veh

    def _freeway_fluxes(self, controls: ControlVector) -> List[float]:
        if self.num_cells == 0:
            return []
        dt_h = self.dt_h
        fd = self.net.fd
        params = self.scenario.network
        rho_c = fd.critical_veh_km

        limits = [0.0] * self.num_cells
        if self.has_zone:
            limits[0] = controls.upstream_speed_kmh
        for sec in self.net.sections:
            limits[self._cell_of_section(sec.index)] = \
                float(controls.sections[sec.index].speed_kmh)

        sending_veh = [0.0] * self.num_cells
        offramp_veh = [0.0] * self.num_cells
        room_veh = [0.0] * self.num_cells
        exit_ratio = [0.0] * self.num_cells
        merge_boost = [1.0] * self.num_cells
        for sec in self.net.sections:
            i = self._cell_of_section(sec.index)
            if sec.offramp is not None:
                exit_ratio[i] = sec.offramp.exit_ratio
            if sec.onramp is not None and controls.sections[sec.index].lc_merge:
                merge_boost[i] = 1.0 + params.lc_merge_gain

        for i in range(self.num_cells):
            rho = self.density(i)
            send = fd_sending_flow(fd, rho, limits[i])
            if self.closed_lanes[i] > 0:
                lane_count = params.lane_count
                cap = bottleneck_capacity(
                    fd.capacity_veh_h, lane_count, self.closed_lanes[i],
                    congested=rho > rho_c,
                    lc_active=controls.advisories_enabled,
                    drop_frac=fd.capacity_drop_frac,
                    lc_drop_frac=params.lc_drop_frac)
                send = min(send, cap)
            sending_veh[i] = min(send * dt_h, self.cell_veh[i])
            offramp_veh[i] = exit_ratio[i] * sending_veh[i]
            receive = fd_receiving_flow(fd, rho) * merge_boost[i]
            jam_room = fd.jam_veh_km * self.cell_lengths[i] - self.cell_veh[i]
            room_veh[i] = min(receive * dt_h, max(0.0, jam_room))

        inflow_veh = [0.0] * self.num_cells
        outflow_veh = [0.0] * self.num_cells

        # corridor entrance: admission limited by the first cell's speed limit
        admit_cap_veh = speed_limited_capacity(fd, limits[0]) * dt_h
        q0 = min(self.entrance_queue_veh, room_veh[0], admit_cap_veh)
        self.entrance_queue_veh -= q0
        self.entrance_discharge_veh += q0
        inflow_veh[0] += q0
        room_veh[0] -= q0

        # mainline cell-to-cell fluxes
        for i in range(self.num_cells - 1):
            mainline = sending_veh[i] - offramp_veh[i]
            flux = min(mainline, room_veh[i + 1])
            outflow_veh[i] += flux + offramp_veh[i]
            inflow_veh[i + 1] += flux
            room_veh[i + 1] -= flux
        last = self.num_cells - 1
        outflow_veh[last] += sending_veh[last]
        self.exited_veh += sending_veh[last] - offramp_veh[last]

        # on-ramp discharges, after mainline has taken its share of the room
        for sec in self.net.sections:
            if sec.onramp is None:
                continue
            i = self._cell_of_section(sec.index)
            red = controls.sections[sec.index].red_s
            rate_veh = metering_rate(red) * dt_h
            r = min(rate_veh, self.ramp_queue_veh[sec.index], room_veh[i])
            self.ramp_queue_veh[sec.index] -= r
            inflow_veh[i] += r
            room_veh[i] -= r
            self._cycle_ramp[i] += r

        # off-ramp traffic joins the Westbound approach of the paired crossing
        for idx in self.offramp_sections:
            i = self._cell_of_section(idx)
            veh = offramp_veh[i]
            if veh <= 0:
                continue
            k = self.net.section(idx).offramp.connecting_intersection
            ratios = self.net.intersection(k).turn_ratios["W"]
            queues = self.intersections[k].queues
            for m in MOVEMENTS:
                queues[("W", m)] += veh * ratios.share(m)
            self._cycle_off[i] += veh

        speeds = [0.0] * self.num_cells
        for i in range(self.num_cells):
            rho = self.density(i)
            if rho > 1e-9:
                speeds[i] = min(limits[i], (outflow_veh[i] / dt_h) / rho)
            else:
                speeds[i] = limits[i]
            self.cell_veh[i] += inflow_veh[i] - outflow_veh[i]
            self._cycle_in[i] += inflow_veh[i]
            self._cycle_out[i] += outflow_veh[i]
        return speeds

    def _spawn_and_advance_probes(self, speeds: List[float]) -> None:
        if self.num_cells == 0:
            return
        if self._tick % self._probe_every == 0:
            self._pending_probes.append(ProbeVehicle(
                spawn_t_s=self.t_s,
                release_veh=self.entrance_discharge_veh + self.entrance_queue_veh))
        while (self._pending_probes
               and self._pending_probes[0].release_veh
               <= self.entrance_discharge_veh + 1e-9):
            probe = self._pending_probes.popleft()
            probe.enter_t_s = self.t_s
            probe.cell_enter_t_s = self.t_s
            self.probes.append(probe)
        still_running = []
        for probe in self.probes:
            transits: list = []
            advance_probe(probe, speeds, self.boundaries_km, self.t_s,
                          self.dt_s, transits)
            for cell, seconds in transits:
                self._cycle_transits[cell].append(seconds)
            if probe.exit_t_s is None:
                still_running.append(probe)
            else:
                self.completed_probes.append(probe)
        self.probes = still_running

    # -- per-cycle aggregation for the control agents -----------------------

    def cycle_measurements(self) -> CycleMeasurements:
        """Summarize the elapsed control cycle and reset its accumulators."""
        fd = self.net.fd
        cycle_h = max(self.t_s - self._cycle_start_s, self.dt_s) / 3600.0
        estimates = self.demand_estimates()
        sections = {}
        for sec in self.net.sections:
            i = self._cell_of_section(sec.index)
            rho = self.density(i)
            net_veh = (self._cycle_in[i] - self._cycle_out[i])
            transits = self._cycle_transits[i]
            speed = self.cell_speed_kmh[i]
            if transits:
                tt_min = sum(transits) / len(transits) / 60.0
            elif speed > 1e-6:
                tt_min = sec.length_km / speed * 60.0
            else:
                tt_min = sec.length_km / 1.0 * 60.0  # near-standstill fallback
            tt_min = max(tt_min, sec.length_km / fd.free_flow_kmh * 60.0)
            queue_m = (self.ramp_queue_veh.get(sec.index, 0.0)
                       * self.veh_spacing_m)
            k = sec.paired_intersection
            if k is not None:
                plan = self.intersections[k].plan
                n_p = dominant_phase(plan) if plan is not None else 1
                est = estimates[k - 1]
                demand_e, demand_s = est.east, est.south
                demand_w, demand_n = est.west, est.north
            else:
                n_p = 1
                demand_e = demand_s = demand_w = demand_n = 0.0
            sections[sec.index] = SectionMeasurement(
                density_veh_km=rho,
                net_flow_veh_h=net_veh / cycle_h,
                queue_m=queue_m,
                closed_lanes=self.closed_lanes[i],
                dominant_phase=n_p,
                demand_e_veh_h=demand_e,
                demand_s_veh_h=demand_s,
                demand_w_veh_h=demand_w,
                demand_n_veh_h=demand_n,
                travel_time_min=tt_min,
                speed_kmh=speed,
                length_km=sec.length_km,
                has_onramp=sec.onramp is not None,
                occupancy=rho / fd.jam_veh_km,
            )
        self._cycle_in = [0.0] * self.num_cells
        self._cycle_out = [0.0] * self.num_cells
        self._cycle_ramp = [0.0] * self.num_cells
        self._cycle_off = [0.0] * self.num_cells
        self._cycle_transits = {i: [] for i in range(self.num_cells)}
        self._cycle_start_s = self.t_s
        return CycleMeasurements(
            t_s=self.t_s,
            sections=sections,
            desired_density_veh_km=self.desired_density_now(),
            free_flow_kmh=fd.free_flow_kmh,
            bottleneck_capacity_veh_h=self.current_bottleneck_capacity(),
            incident_active=self.incident_active(),
            occupancy_setpoint=fd.critical_veh_km / fd.jam_veh_km,
        )

    # -- conservation and metric outputs ------------------------------------

    def stored_veh(self) -> float:
        total = sum(self.cell_veh) + self.entrance_queue_veh
        total += sum(self.ramp_queue_veh.values())
        for inter in self.intersections.values():
            total += sum(inter.queues.values())
        for pipe in self.links.values():
            total += sum(pipe)
        total += sum(self._pipe_inbox.values())
        return total

    def conservation_error_veh(self) -> float:
        return self.entered_veh - self.exited_veh - self.stored_veh()

    def ramp_queue_time_means_m(self) -> Dict[int, float]:
        if self.metric_time_s <= 0:
            return {i: 0.0 for i in self.ramp_queue_integral}
        return {i: v / self.metric_time_s
                for i, v in self.ramp_queue_integral.items()}

    def approach_queue_time_means_m(self) -> Dict[tuple, float]:
        if self.metric_time_s <= 0:
            return {k: 0.0 for k in self.approach_queue_integral}
        return {k: v / self.metric_time_s
                for k, v in self.approach_queue_integral.items()}
