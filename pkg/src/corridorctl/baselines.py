"""Comparison freeway control strategies: no control, a reconstructed
decentralized feedback controller, and uncoordinated Q-learning with three
independently trained single-actuator sub-agents.

The feedback baseline stands in for an external design the source material
does not detail: rate-limited proportional speed control, occupancy-feedback
ramp metering with a queue override, and rule-based lane-change advisories.
Comparisons against it are directional only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

from .freeway_agent import (FtcAction, FtcRawState, RED_DURATIONS_S,
                            RewardParams, candidate_speeds, compute_reward,
                            discretize_state, enumerate_actions)
from .mesosim import METERING_RATES_VEH_H
from .qlearn import QTable, q_update, select_action


class NoControlStrategy:
    """Inactive VSL, LC, and RM: full speed, unmetered ramps, no advisories."""

    name = "none"
    uses_upstream_vsl = False
    advisories = False

    def reset(self, section_indices: Sequence[int]) -> None:
        self._sections = list(section_indices)

    def controls(self, meas, rng, learn: bool = False) -> dict:
        return {i: FtcAction(speed_kmh=100, red_s=0.0, lc_merge=False)
                for i in self._sections}


@dataclass(frozen=True)
class FeedbackGains:
    """Gains of the reconstructed decentralized feedback controller."""

    vsl_gain: float = 0.5  # (km/h) per (veh/km) of density error
    rm_gain_per_unit_occupancy: float = 7000.0  # veh/h per unit occupancy error
    reference_queue_m: float = 300.0

    def __post_init__(self) -> None:
        if self.vsl_gain <= 0 or self.rm_gain_per_unit_occupancy <= 0:
            raise ValueError("feedback gains must be positive")


_RATES_DESC = sorted(METERING_RATES_VEH_H.values(), reverse=True)
_RED_FOR_RATE = {rate: red for red, rate in METERING_RATES_VEH_H.items()}


def _snap_rate(rate_veh_h: float) -> float:
    # nearest admissible metering rate, ties toward the larger (less
    # restrictive) one
    return min(_RATES_DESC, key=lambda r: (abs(r - rate_veh_h), -r))


def feedback_step(prev_speed_kmh: int, prev_rate_veh_h: float,
                  density_veh_km: float, occupancy: float, queue_m: float,
                  closed_lanes: int, desired_density_veh_km: float,
                  occupancy_setpoint: float,
                  gains: FeedbackGains = FeedbackGains()) -> tuple:
    """One decentralized feedback update for a section.

    Returns (speed_kmh, red_s, lc_active). The speed limit moves at most one
    10 km/h notch per cycle inside [60, 100]; the metering rate follows the
    occupancy error, snapped onto the admissible rate set, and is forced fully
    open once the ramp queue reaches the reference value; advisories activate
    only while a lane is closed.
    """
    delta_v = gains.vsl_gain * (desired_density_veh_km - density_veh_km)
    delta_v = max(-10.0, min(10.0, delta_v))
    speed = max(60.0, min(100.0, prev_speed_kmh + delta_v))
    speed = int(10 * round(speed / 10.0))
    speed = max(60, min(100, speed))
    if abs(speed - prev_speed_kmh) > 10:
        speed = prev_speed_kmh + (10 if speed > prev_speed_kmh else -10)

    if queue_m >= gains.reference_queue_m:
        rate = 1800.0
    else:
        rate = prev_rate_veh_h + gains.rm_gain_per_unit_occupancy \
            * (occupancy_setpoint - occupancy)
        rate = max(400.0, min(1800.0, rate))
        rate = _snap_rate(rate)
    return speed, _RED_FOR_RATE[rate], closed_lanes >= 1


class FeedbackStrategy:
    """Per-section feedback VSL + RM + rule-based LC under the same action
    bounds as the learning agents."""

    name = "feedback"
    uses_upstream_vsl = True
    advisories = True

    def __init__(self, gains: FeedbackGains = FeedbackGains()):
        self.gains = gains
        self._speeds: Dict[int, int] = {}
        self._rates: Dict[int, float] = {}

    def reset(self, section_indices: Sequence[int]) -> None:
        self._speeds = {i: 100 for i in section_indices}
        self._rates = {i: 1800.0 for i in section_indices}

    def controls(self, meas, rng, learn: bool = False) -> dict:
        out = {}
        for i, sec in sorted(meas.sections.items()):
            speed, red, lc = feedback_step(
                self._speeds[i], self._rates[i], sec.density_veh_km,
                sec.occupancy, sec.queue_m, sec.closed_lanes,
                meas.desired_density_veh_km,
                occupancy_setpoint=meas.occupancy_setpoint,
                gains=self.gains)
            self._speeds[i] = speed
            self._rates[i] = METERING_RATES_VEH_H[red]
            out[i] = FtcAction(speed_kmh=speed, red_s=red, lc_merge=lc)
        return out


# ---------------------------------------------------------------------------
# Uncoordinated Q-learning: three single-actuator sub-agents
# ---------------------------------------------------------------------------

@dataclass
class SubAgentSpec:
    """One uncoordinated sub-agent: which state slice it sees and which action
    component it owns. Arterial variables are excluded by construction."""

    kind: str  # "VSL" | "RM" | "LC"
    state_components: tuple
    table: QTable = field(default_factory=lambda: QTable(gamma=0.9))

    def state_key(self, full_key: tuple) -> tuple:
        # full FTC key layout: (rho, q_net, w_o, n_c, n_p, dE, dS, dW, dN)
        index = {"rho": 0, "q_net": 1, "w_o": 2, "n_c": 3}
        return tuple(full_key[index[name]] for name in self.state_components)

    def action_keys(self, previous_speed_kmh: int) -> list:
        if self.kind == "VSL":
            return [(100 - v,) for v in candidate_speeds(previous_speed_kmh)]
        if self.kind == "RM":
            return [(int(r * 10),) for r in RED_DURATIONS_S]
        if self.kind == "LC":
            return [(0,), (1,)]
        raise ValueError(f"unknown sub-agent kind {self.kind!r}")


def build_uncoordinated_agents(gamma: float = 0.9) -> tuple:
    """The three sub-agents: VSL on (rho, q_net, n_c), RM on (rho, w_o), LC on
    (rho, n_c); none of them sees the arterial state variables."""
    return (
        SubAgentSpec("VSL", ("rho", "q_net", "n_c"), QTable(gamma)),
        SubAgentSpec("RM", ("rho", "w_o"), QTable(gamma)),
        SubAgentSpec("LC", ("rho", "n_c"), QTable(gamma)),
    )


class UncoordinatedQlStrategy:
    """Drives the three sub-agents side by side; they share the reward signal
    but neither state nor value estimates."""

    name = "ql_uncoordinated"
    uses_upstream_vsl = True
    advisories = True

    def __init__(self, agents: tuple, mode: str = "greedy",
                 reference_queue_m: float = 300.0):
        if mode not in ("train", "greedy"):
            raise ValueError(f"unknown mode {mode!r}")
        self.agents = agents
        self.mode = mode
        self.reference_queue_m = reference_queue_m
        self.deltas: list = []
        self._speeds: Dict[int, int] = {}
        self._pending: Dict[tuple, tuple] = {}

    def reset(self, section_indices: Sequence[int]) -> None:
        self._speeds = {i: 100 for i in section_indices}
        self._pending = {}

    def controls(self, meas, rng, learn: bool = False) -> dict:
        out = {}
        for i, sec in sorted(meas.sections.items()):
            full_key = discretize_state(FtcRawState(
                density_veh_km=sec.density_veh_km,
                net_flow_veh_h=sec.net_flow_veh_h,
                queue_m=sec.queue_m,
                closed_lanes=sec.closed_lanes,
                dominant_phase=sec.dominant_phase,
                demand_e_veh_h=sec.demand_e_veh_h,
                demand_s_veh_h=sec.demand_s_veh_h,
                demand_w_veh_h=sec.demand_w_veh_h,
                demand_n_veh_h=sec.demand_n_veh_h,
            ))
            params = RewardParams(
                reference_queue_m=self.reference_queue_m,
                desired_density_veh_km=meas.desired_density_veh_km,
                length_km=sec.length_km,
                free_flow_kmh=meas.free_flow_kmh)
            reward = compute_reward(sec.travel_time_min, sec.queue_m,
                                    sec.density_veh_km, params)
            chosen = {}
            for agent in self.agents:
                state = agent.state_key(full_key)
                actions = agent.action_keys(self._speeds[i])
                if learn and (agent.kind, i) in self._pending:
                    prev_state, prev_action = self._pending[(agent.kind, i)]
                    delta = q_update(agent.table, prev_state, prev_action,
                                     reward, state, actions)
                    self.deltas.append(delta)
                mode = self.mode if learn else "greedy"
                action = select_action(agent.table, state, actions, rng,
                                       mode=mode)
                if learn:
                    self._pending[(agent.kind, i)] = (state, action)
                chosen[agent.kind] = action
            speed = 100 - chosen["VSL"][0]
            out[i] = FtcAction(speed_kmh=speed,
                               red_s=chosen["RM"][0] / 10.0,
                               lc_merge=bool(chosen["LC"][0]))
            self._speeds[i] = speed
        return out
