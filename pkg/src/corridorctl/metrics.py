"""Run-level performance metrics: freeway travel time, stops, the speed-based
CO2/fuel proxy, and ramp/arterial queue lengths.

All metrics exclude the warm-up: only probes entering the corridor after the
warm-up qualify, and queue means integrate from the end of the warm-up. Probes
enter at the mainline entrance only, so ramp-entering or -exiting vehicles
never contaminate the freeway averages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional

from .mesosim import CorridorSimulation, ProbeVehicle, emission_rate_g_h

FUEL_PER_EMISSION = 1.0 / 14.0  # folded CO2-per-fuel constant, proxy only


def qualifying_probes(probes: Iterable[ProbeVehicle],
                      warmup_s: float) -> List[ProbeVehicle]:
    """Completed mainline probes that entered after the warm-up."""
    return [p for p in probes
            if p.exit_t_s is not None and p.enter_t_s is not None
            and p.enter_t_s > warmup_s]


def travel_time(probes: Iterable[ProbeVehicle],
                warmup_s: float) -> Optional[float]:
    """Mean corridor transit time in minutes; None when no probe qualifies."""
    done = qualifying_probes(probes, warmup_s)
    if not done:
        return None
    return sum((p.exit_t_s - p.enter_t_s) for p in done) / len(done) / 60.0


def mean_stops(probes: Iterable[ProbeVehicle],
               warmup_s: float) -> Optional[float]:
    done = qualifying_probes(probes, warmup_s)
    if not done:
        return None
    return sum(p.stops for p in done) / len(done)


def emission_rate(probes: Iterable[ProbeVehicle],
                  warmup_s: float) -> tuple:
    """(E, F): CO2 proxy in g/veh/km over qualifying probe trajectories and
    the derived fuel proxy; (None, None) when no probe qualifies."""
    done = qualifying_probes(probes, warmup_s)
    total_g = sum(p.emission_g for p in done)
    total_km = sum(p.distance_km for p in done)
    if not done or total_km <= 0:
        return None, None
    e = total_g / total_km
    return e, e * FUEL_PER_EMISSION


def emission_per_km(speed_kmh: float) -> float:
    """The proxy in per-kilometre form, 90 + 5000/v + 0.012*v^2 g/km."""
    if speed_kmh <= 0:
        raise ValueError("per-km emission is undefined at standstill")
    return emission_rate_g_h(speed_kmh) / speed_kmh


def onramp_queue_metric(ramp_time_means_m: Dict[int, float]) -> float:
    """Mean of the per-ramp time-mean queue lengths (m); 0 without ramps."""
    if not ramp_time_means_m:
        return 0.0
    return sum(ramp_time_means_m.values()) / len(ramp_time_means_m)


def arterial_queue_metric(approach_time_means_m: Dict[tuple, float]) -> float:
    """Time-mean approach queues averaged over all 4K approaches (m)."""
    if not approach_time_means_m:
        return 0.0
    return sum(approach_time_means_m.values()) / len(approach_time_means_m)


def improvement_pct(base: float, value: float) -> float:
    """Percent improvement versus the base case; reductions are positive."""
    if base == 0:
        return 0.0
    return (base - value) / base * 100.0


@dataclass
class RunMetrics:
    travel_time_min: Optional[float]
    mean_stops: Optional[float]
    emission_g_per_km: Optional[float]
    fuel_g_per_km: Optional[float]
    onramp_queue_m: float
    arterial_queue_m: float
    qualifying_probes: int
    flagged: bool  # true when no probe qualified

    def as_row(self) -> dict:
        def v(x):
            return math.nan if x is None else x
        return {
            "travel_time_min": v(self.travel_time_min),
            "mean_stops": v(self.mean_stops),
            "emission_g_per_km": v(self.emission_g_per_km),
            "fuel_g_per_km": v(self.fuel_g_per_km),
            "onramp_queue_m": self.onramp_queue_m,
            "arterial_queue_m": self.arterial_queue_m,
            "qualifying_probes": self.qualifying_probes,
            "flagged": self.flagged,
        }


def compute_run_metrics(sim: CorridorSimulation) -> RunMetrics:
    warmup = sim.scenario.warmup_s
    probes = sim.completed_probes
    tt = travel_time(probes, warmup)
    stops = mean_stops(probes, warmup)
    e, f = emission_rate(probes, warmup)
    return RunMetrics(
        travel_time_min=tt,
        mean_stops=stops,
        emission_g_per_km=e,
        fuel_g_per_km=f,
        onramp_queue_m=onramp_queue_metric(sim.ramp_queue_time_means_m()),
        arterial_queue_m=arterial_queue_metric(sim.approach_queue_time_means_m()),
        qualifying_probes=len(qualifying_probes(probes, warmup)),
        flagged=tt is None,
    )
