"""The integrated freeway control agent: state discretization, the coordinated
speed-limit / ramp-metering / lane-change action space, the reward function,
desired-density and upstream speed-command formulas, and advisory-zone
semantics.

One agent instance serves every freeway section and shares a single Q-table;
the sections are homogeneous, so experience transfers across them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .network import FreewaySection, FundamentalDiagram
from .qlearn import QTable, q_update, select_action

SPEED_LIMITS_KMH = (60, 70, 80, 90, 100)
RED_DURATIONS_S = (0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0)
LC_ZONE_KM = 0.8

DENSITY_BINS = tuple(range(20, 151, 10))  # veh/km
FLOW_BIN_MAX = 4000.0  # veh/h, bins every 100
QUEUE_BIN_MAX = 500.0  # m, bins every 50


@dataclass(frozen=True)
class FtcRawState:
    """Continuous per-section observations before discretization."""

    density_veh_km: float
    net_flow_veh_h: float  # q_in - q_out + r - s, may be negative
    queue_m: float
    closed_lanes: int
    dominant_phase: int
    demand_e_veh_h: float
    demand_s_veh_h: float
    demand_w_veh_h: float
    demand_n_veh_h: float


@dataclass(frozen=True, order=True)
class FtcAction:
    """One coordinated action: section speed limit, ramp red time, merge-zone
    lane-change advisories on or off."""

    speed_kmh: int
    red_s: float
    lc_merge: bool

    def __post_init__(self) -> None:
        if self.speed_kmh not in SPEED_LIMITS_KMH:
            raise ValueError(f"speed limit {self.speed_kmh} not in "
                             f"{SPEED_LIMITS_KMH}")
        if self.red_s not in RED_DURATIONS_S:
            raise ValueError(f"red duration {self.red_s} not in {RED_DURATIONS_S}")

    @property
    def key(self) -> tuple:
        # Speed is encoded descending so that the deterministic lowest-key
        # tie-break in greedy selection falls back to the least restrictive
        # action (full speed, no metering, no advisories) in unseen states.
        return (100 - self.speed_kmh, int(self.red_s * 10), int(self.lc_merge))

    @classmethod
    def from_key(cls, key: tuple) -> "FtcAction":
        return cls(speed_kmh=100 - key[0], red_s=key[1] / 10.0,
                   lc_merge=bool(key[2]))


def _snap(value: float, lo: float, hi: float, step: float) -> int:
    clamped = min(hi, max(lo, value))
    return int(lo + step * math.floor((clamped - lo) / step + 0.5))


def discretize_state(raw: FtcRawState) -> tuple:
    """Deterministic state key: density to 10 veh/km bins on [20, 150], flows
    to 100 veh/h bins on [0, 4000], queue to 50 m bins on [0, 500]; rounding
    is half-up, and out-of-range values clamp to the edge bins."""
    return (
        _snap(raw.density_veh_km, 20, 150, 10),
        _snap(raw.net_flow_veh_h, 0, FLOW_BIN_MAX, 100),
        _snap(raw.queue_m, 0, QUEUE_BIN_MAX, 50),
        int(raw.closed_lanes),
        int(raw.dominant_phase),
        _snap(raw.demand_e_veh_h, 0, FLOW_BIN_MAX, 100),
        _snap(raw.demand_s_veh_h, 0, FLOW_BIN_MAX, 100),
        _snap(raw.demand_w_veh_h, 0, FLOW_BIN_MAX, 100),
        _snap(raw.demand_n_veh_h, 0, FLOW_BIN_MAX, 100),
    )


def candidate_speeds(previous_kmh: int) -> tuple:
    """Speed limits reachable in one control cycle: at most 10 km/h up or down,
    bounded to [60, 100], deduplicated at the range edges."""
    if previous_kmh not in SPEED_LIMITS_KMH:
        raise ValueError(f"previous speed {previous_kmh} not in {SPEED_LIMITS_KMH}")
    seen = []
    for v in (max(60, previous_kmh - 10), previous_kmh, min(100, previous_kmh + 10)):
        if v not in seen:
            seen.append(v)
    return tuple(seen)


def enumerate_actions(previous_kmh: int) -> tuple:
    """All coordinated actions available after the given previous speed limit."""
    return tuple(
        FtcAction(speed_kmh=v, red_s=red, lc_merge=lc)
        for v in candidate_speeds(previous_kmh)
        for red in RED_DURATIONS_S
        for lc in (False, True)
    )


@dataclass(frozen=True)
class RewardParams:
    """Inputs the per-section reward is scored against."""

    reference_queue_m: float
    desired_density_veh_km: float
    length_km: float
    free_flow_kmh: float

    def __post_init__(self) -> None:
        if self.reference_queue_m <= 0 or self.desired_density_veh_km <= 0:
            raise ValueError("reference queue and desired density must be positive")


def compute_reward(travel_time_min: float, queue_m: float,
                   density_veh_km: float, params: RewardParams) -> float:
    """Reward in [0, 1]: free-flow transit with no ramp queue at the desired
    density scores 1; a queue at or past the reference value scores 0.

    R = max{0, (1 - w/w_r) * L / (T_t * v_f) - (rho/rho* - 1)^2}, capped at 1
    (short transit-time measurements can push the raw value above 1).
    """
    if travel_time_min <= 0:
        raise ValueError("travel time must be positive")
    tt_h = travel_time_min / 60.0
    raw = ((1.0 - queue_m / params.reference_queue_m)
           * params.length_km / (tt_h * params.free_flow_kmh)
           - (density_veh_km / params.desired_density_veh_km - 1.0) ** 2)
    return min(1.0, max(0.0, raw))


def desired_density(demand_veh_h: float, bottleneck_capacity_veh_h: float,
                    free_flow_kmh: float) -> float:
    """Density target min(d, 0.95*C_b) / v_f; the 0.95 margin keeps a
    disturbance from tipping the bottleneck into its capacity-drop regime."""
    if min(demand_veh_h, bottleneck_capacity_veh_h, free_flow_kmh) <= 0:
        raise ValueError("inputs must be positive")
    return min(demand_veh_h, 0.95 * bottleneck_capacity_veh_h) / free_flow_kmh


def upstream_vsl_command(mode: str, fd: FundamentalDiagram,
                         bottleneck_capacity_veh_h: float) -> float:
    """Speed command for the most upstream VSL sign, rounded to 5 km/h.

    The admitted flow under speed v is v*w*rho_jam/(v+w); solving it for the
    target throughput gives v = w*C_target/(w*rho_jam - C_target), where the
    target is C_b without capacity drop and (1-eps0)*C_b with it.
    """
    if mode == "none":
        return fd.free_flow_kmh
    if mode not in ("bottleneck", "bottleneck_with_drop"):
        raise ValueError(f"unknown upstream VSL mode {mode!r}")
    if bottleneck_capacity_veh_h > fd.capacity_veh_h:
        raise ValueError("bottleneck capacity exceeds section capacity")
    target = bottleneck_capacity_veh_h
    if mode == "bottleneck_with_drop":
        target *= (1.0 - fd.capacity_drop_frac)
    denom = fd.backwave_kmh * fd.jam_veh_km - target
    if denom <= 0:
        raise ValueError("no speed limit can admit this flow on the given FD")
    v = fd.backwave_kmh * target / denom
    return 5.0 * math.floor(v / 5.0 + 0.5)


def upstream_vsl_location(mean_density_veh_km: float, zone_density_veh_km: float,
                          bottleneck_distance_km: float, command_kmh: float,
                          fd: FundamentalDiagram,
                          bottleneck_capacity_veh_h: float,
                          safety_factor: float = 1.1) -> float:
    """Minimal distance (km) of the upstream VSL sign from the corridor start
    so congestion backing up from the bottleneck is absorbed within the zone.

    Lower bound ((v_f*rho_mean - (1-eps0)*C_b) * v0 * L_b)
    / (((1-eps0)*C_b - v0*rho0) * v_f), scaled by the safety factor and clamped
    at 0. A nonpositive denominator means the zone cannot protect the
    bottleneck at this admission rate.
    """
    dropped = (1.0 - fd.capacity_drop_frac) * bottleneck_capacity_veh_h
    denom = (dropped - command_kmh * zone_density_veh_km) * fd.free_flow_kmh
    if denom <= 0:
        raise ValueError("VSL zone cannot protect the bottleneck: admitted flow "
                         "reaches the dropped bottleneck capacity")
    bound = ((fd.free_flow_kmh * mean_density_veh_km - dropped)
             * command_kmh * bottleneck_distance_km) / denom
    return max(0.0, safety_factor * bound)


def lc_zone(section: FreewaySection, target: str, closed_lanes: int = 0,
            lc_flag: bool = False) -> Optional[tuple]:
    """Advisory zone of LC_ZONE_KM upstream of a bottleneck, in km relative to
    the section start (negative start reaches into the upstream section).

    The lane-drop zone is active whenever a lane is closed; the on-ramp merge
    zone only when the agent's lane-change flag is set. Returns None when the
    zone is inactive.
    """
    if target == "lane_drop":
        if closed_lanes < 1:
            return None
        return (section.length_km - LC_ZONE_KM, section.length_km)
    if target == "onramp_merge":
        if section.onramp is None:
            raise ValueError(f"section {section.index} has no on-ramp")
        if not lc_flag:
            return None
        return (-LC_ZONE_KM, 0.0)
    raise ValueError(f"unknown LC target {target!r}")


# ---------------------------------------------------------------------------
# Coordinated Q-learning strategy
# ---------------------------------------------------------------------------

class CoordinatedQlStrategy:
    """Drives every freeway section from one shared Q-table.

    In train mode the strategy performs one Q backup per section per control
    cycle using the previous cycle's action and outcome; in greedy mode the
    table is frozen and actions are pure argmax.
    """

    name = "ql_coordinated"

    def __init__(self, table: QTable, mode: str = "greedy",
                 reference_queue_m: float = 300.0):
        if mode not in ("train", "greedy"):
            raise ValueError(f"unknown mode {mode!r}")
        self.table = table
        self.mode = mode
        self.reference_queue_m = reference_queue_m
        self.deltas: list = []
        self.rewards: list = []
        self._speeds: dict = {}
        self._pending: dict = {}  # section -> (state_key, FtcAction)

    def reset(self, section_indices: Sequence[int]) -> None:
        self._speeds = {i: 100 for i in section_indices}
        self._pending = {}

    def _raw_state(self, meas, i: int) -> FtcRawState:
        sec = meas.sections[i]
        return FtcRawState(
            density_veh_km=sec.density_veh_km,
            net_flow_veh_h=sec.net_flow_veh_h,
            queue_m=sec.queue_m,
            closed_lanes=sec.closed_lanes,
            dominant_phase=sec.dominant_phase,
            demand_e_veh_h=sec.demand_e_veh_h,
            demand_s_veh_h=sec.demand_s_veh_h,
            demand_w_veh_h=sec.demand_w_veh_h,
            demand_n_veh_h=sec.demand_n_veh_h,
        )

    def _reward(self, meas, i: int) -> float:
        sec = meas.sections[i]
        params = RewardParams(
            reference_queue_m=self.reference_queue_m,
            desired_density_veh_km=meas.desired_density_veh_km,
            length_km=sec.length_km,
            free_flow_kmh=meas.free_flow_kmh,
        )
        return compute_reward(sec.travel_time_min, sec.queue_m,
                              sec.density_veh_km, params)

    def controls(self, meas, rng, learn: bool = False) -> dict:
        """Per-section (speed, red, lc) choices for the next control cycle."""
        out = {}
        for i in sorted(meas.sections):
            state = discretize_state(self._raw_state(meas, i))
            actions = enumerate_actions(self._speeds[i])
            keys = [a.key for a in actions]
            if learn and i in self._pending:
                prev_state, prev_action = self._pending[i]
                reward = self._reward(meas, i)
                delta = q_update(self.table, prev_state, prev_action.key,
                                 reward, state, keys)
                self.deltas.append(delta)
                self.rewards.append(reward)
            mode = self.mode if learn else "greedy"
            chosen = FtcAction.from_key(
                select_action(self.table, state, keys, rng, mode=mode))
            self._speeds[i] = chosen.speed_kmh
            if learn:
                self._pending[i] = (state, chosen)
            out[i] = chosen
        return out
