"""Road network model: fundamental diagram, corridor topology, demand profiles,
and scenario configuration.

Unit conventions, used consistently and spelled out in serialized field names:

* flows: veh/h
* densities: veh/km
* speeds: km/h
* section / link lengths: km
* ramp storage and queue lengths: m
* times: s

Everything in this module is immutable after construction and can be shared
freely between concurrent simulation runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional

import yaml

DIRECTIONS = ("E", "S", "W", "N")
MOVEMENTS = ("l", "t", "r")

# Relative tolerance for the triangular/trapezoidal FD consistency identity.
_FD_RTOL = 1e-9


@dataclass(frozen=True)
class FundamentalDiagram:
    """Trapezoidal flow-density law for one freeway section (all lanes combined).

    The three characteristic speeds and densities must satisfy
    v_f * rho_c = w * (rho_jam - rho_c) = w_out * (rho_out_jam - rho_c) = C.
    """

    capacity_veh_h: float
    free_flow_kmh: float
    backwave_kmh: float
    outflow_wave_kmh: float
    critical_veh_km: float
    jam_veh_km: float
    outflow_jam_veh_km: float
    capacity_drop_frac: float

    def __post_init__(self) -> None:
        if min(self.capacity_veh_h, self.free_flow_kmh, self.backwave_kmh,
               self.outflow_wave_kmh) <= 0:
            raise ValueError("FD flows and speeds must be positive")
        if not 0.0 < self.capacity_drop_frac < 1.0:
            raise ValueError("capacity_drop_frac must lie in (0, 1)")
        if not (self.critical_veh_km < self.jam_veh_km
                and self.critical_veh_km < self.outflow_jam_veh_km):
            raise ValueError("critical density must be below both jam densities")
        c = self.capacity_veh_h
        for value in (
            self.free_flow_kmh * self.critical_veh_km,
            self.backwave_kmh * (self.jam_veh_km - self.critical_veh_km),
            self.outflow_wave_kmh * (self.outflow_jam_veh_km - self.critical_veh_km),
        ):
            if abs(value - c) > _FD_RTOL * c:
                raise ValueError(
                    f"inconsistent FD: branch capacity {value:.6f} != {c:.6f}"
                )

    @classmethod
    def from_speeds(cls, capacity_veh_h: float, free_flow_kmh: float,
                    backwave_kmh: float, outflow_wave_kmh: float,
                    capacity_drop_frac: float) -> "FundamentalDiagram":
        """Build a consistent FD from capacity, the three speeds, and the drop factor."""
        rho_c = capacity_veh_h / free_flow_kmh
        return cls(
            capacity_veh_h=capacity_veh_h,
            free_flow_kmh=free_flow_kmh,
            backwave_kmh=backwave_kmh,
            outflow_wave_kmh=outflow_wave_kmh,
            critical_veh_km=rho_c,
            jam_veh_km=rho_c + capacity_veh_h / backwave_kmh,
            outflow_jam_veh_km=rho_c + capacity_veh_h / outflow_wave_kmh,
            capacity_drop_frac=capacity_drop_frac,
        )


def speed_limited_capacity(fd: FundamentalDiagram, speed_limit_kmh: float) -> float:
    """Maximum flow a section can pass under a speed limit v: v*w*rho_jam/(v+w)."""
    return (speed_limit_kmh * fd.backwave_kmh * fd.jam_veh_km
            / (speed_limit_kmh + fd.backwave_kmh))


def fd_sending_flow(fd: FundamentalDiagram, density_veh_km: float,
                    speed_limit_kmh: float) -> float:
    """Flow a section offers downstream at the given density and speed limit.

    min(v*rho, capacity under v, w_out*(rho_out_jam - rho)), clamped at 0.
    """
    if density_veh_km < 0:
        raise ValueError(f"negative density {density_veh_km}")
    if not 0 < speed_limit_kmh <= fd.free_flow_kmh:
        raise ValueError(
            f"speed limit {speed_limit_kmh} outside (0, {fd.free_flow_kmh}]"
        )
    flow = min(
        speed_limit_kmh * density_veh_km,
        speed_limited_capacity(fd, speed_limit_kmh),
        fd.outflow_wave_kmh * (fd.outflow_jam_veh_km - density_veh_km),
    )
    return max(0.0, flow)


def fd_receiving_flow(fd: FundamentalDiagram, density_veh_km: float) -> float:
    """Flow a section can accept: min(C, w*(rho_jam - rho)), clamped at 0."""
    return max(0.0, min(fd.capacity_veh_h,
                        fd.backwave_kmh * (fd.jam_veh_km - density_veh_km)))


@dataclass(frozen=True)
class RampSpec:
    """On- or off-ramp attached to a freeway section."""

    kind: str  # "on" | "off"
    connecting_intersection: int
    storage_m: float = 300.0  # on-ramps: queue capacity before arterial blockage
    mean_offramp_flow_veh_h: float = 0.0  # off-ramps: historical mean, TSC input
    exit_ratio: float = 0.0  # off-ramps: share of sending flow leaving mainline

    def __post_init__(self) -> None:
        if self.kind not in ("on", "off"):
            raise ValueError(f"ramp kind must be 'on' or 'off', got {self.kind!r}")
        if self.kind == "on" and self.storage_m <= 0:
            raise ValueError("on-ramp storage must be positive")
        if self.kind == "off" and not 0 <= self.exit_ratio < 1:
            raise ValueError("off-ramp exit ratio must lie in [0, 1)")


@dataclass(frozen=True)
class TurnRatios:
    """Left/through/right shares for one approach; must sum to 1."""

    left: float
    through: float
    right: float

    def __post_init__(self) -> None:
        for v in (self.left, self.through, self.right):
            if not 0 <= v <= 1:
                raise ValueError("turn ratios must lie in [0, 1]")
        if abs(self.left + self.through + self.right - 1.0) > 1e-9:
            raise ValueError("turn ratios must sum to 1")

    def share(self, movement: str) -> float:
        return {"l": self.left, "t": self.through, "r": self.right}[movement]


@dataclass(frozen=True)
class FreewaySection:
    """One freeway section; index follows the travel direction starting at 1."""

    index: int
    length_km: float
    lane_count: int
    fd: FundamentalDiagram
    onramp: Optional[RampSpec] = None
    offramp: Optional[RampSpec] = None
    paired_intersection: Optional[int] = None

    def __post_init__(self) -> None:
        if self.length_km <= 0:
            raise ValueError("section length must be positive")
        if self.lane_count < 2:
            raise ValueError("sections need at least 2 lanes")


@dataclass(frozen=True)
class Intersection:
    """Signalized arterial intersection with four approaches (E, S, W, N).

    Each approach is four lanes wide: one left lane, a double through, one
    right lane; their saturation rates sum to ``saturation_veh_h``.
    """

    index: int
    saturation_veh_h: float = 7200.0
    turn_ratios: dict = field(default_factory=dict)  # direction -> TurnRatios
    link_m: float = 1600.0  # distance to the neighbouring intersections

    def __post_init__(self) -> None:
        if self.saturation_veh_h <= 0:
            raise ValueError("saturation flow must be positive")
        if set(self.turn_ratios) != set(DIRECTIONS):
            raise ValueError("turn ratios required for all four approaches")

    def movement_rate_veh_h(self, movement: str) -> float:
        # lane split 1 / 2 / 1 over the four approach lanes
        share = {"l": 0.25, "t": 0.5, "r": 0.25}[movement]
        return self.saturation_veh_h * share


@dataclass(frozen=True)
class DemandProfile:
    """Normal distribution of an entrance flow rate; draws are truncated at 0."""

    mean_veh_h: float
    std_veh_h: float = 0.0

    def __post_init__(self) -> None:
        if self.mean_veh_h < 0 or self.std_veh_h < 0:
            raise ValueError("demand mean and std must be nonnegative")


@dataclass(frozen=True)
class NetworkTopology:
    """The full corridor: upstream VSL zone, freeway sections, intersections,
    entrance demand profiles, and the arterial coupling constants."""

    fd: FundamentalDiagram
    upstream_zone_km: float
    sections: tuple  # FreewaySection, indices 1..N
    intersections: tuple  # Intersection, indices 1..K
    mainline_demand: DemandProfile
    arterial_demands: dict  # (intersection, direction) -> DemandProfile
    ramp_share_of_east_leg: float = 0.6
    arterial_speed_kmh: float = 50.0
    vehicle_spacing_m: float = 7.5

    @property
    def num_sections(self) -> int:
        return len(self.sections)

    @property
    def num_intersections(self) -> int:
        return len(self.intersections)

    def section(self, index: int) -> FreewaySection:
        return self.sections[index - 1]

    def intersection(self, index: int) -> Intersection:
        return self.intersections[index - 1]


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_topology(net: NetworkTopology) -> ValidationReport:
    """Collect every violated structural invariant; empty report means well-formed."""
    bad = []
    fd = net.fd
    c = fd.capacity_veh_h
    checks = {
        "v_f*rho_c": fd.free_flow_kmh * fd.critical_veh_km,
        "w*(rho_jam-rho_c)": fd.backwave_kmh * (fd.jam_veh_km - fd.critical_veh_km),
        "w_out*(rho_out_jam-rho_c)":
            fd.outflow_wave_kmh * (fd.outflow_jam_veh_km - fd.critical_veh_km),
    }
    for name, value in checks.items():
        if abs(value - c) > _FD_RTOL * c:
            bad.append(f"FD inconsistency: {name}={value:.6f} != C={c:.6f}")
    if not 0 < fd.capacity_drop_frac < 1:
        bad.append("capacity drop factor outside (0, 1)")

    k_known = {x.index for x in net.intersections}
    for sec in net.sections:
        if sec.length_km <= 0:
            bad.append(f"section {sec.index}: nonpositive length")
        if sec.lane_count < 2:
            bad.append(f"section {sec.index}: fewer than 2 lanes")
        for ramp in (sec.onramp, sec.offramp):
            if ramp is not None and ramp.connecting_intersection not in k_known:
                bad.append(
                    f"section {sec.index}: {ramp.kind}-ramp references missing "
                    f"intersection {ramp.connecting_intersection}"
                )
        if sec.paired_intersection is not None and sec.paired_intersection not in k_known:
            bad.append(f"section {sec.index}: paired intersection "
                       f"{sec.paired_intersection} does not exist")
    for inter in net.intersections:
        for direction, ratios in inter.turn_ratios.items():
            total = ratios.left + ratios.through + ratios.right
            if abs(total - 1.0) > 1e-9:
                bad.append(f"intersection {inter.index} approach {direction}: "
                           f"turn ratios sum to {total}")
    return ValidationReport(tuple(bad))


# ---------------------------------------------------------------------------
# Default network builders
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NetworkParams:
    """Knobs for the default corridor; all overridable from a scenario file."""

    capacity_veh_h: float = 10000.0
    free_flow_kmh: float = 100.0
    backwave_kmh: float = 25.0
    outflow_wave_kmh: float = 30.0
    capacity_drop_frac: float = 0.15
    lc_drop_frac: float = 0.05  # residual drop with lane-change advisories active
    lc_merge_gain: float = 0.10  # receiving-capacity gain with merge advisories
    num_sections: int = 6
    section_length_km: float = 1.6
    upstream_zone_km: float = 4.0
    lane_count: int = 5
    onramp_sections: tuple = (2, 3, 4, 5, 6)
    offramp_sections: tuple = (1, 2, 3, 4, 5, 6)
    offramp_exit_ratio: float = 0.10
    offramp_mean_veh_h: float = 400.0
    onramp_storage_m: float = 300.0
    num_intersections: int = 7
    saturation_veh_h: float = 7200.0
    ns_turn_ratios: tuple = (0.20, 0.60, 0.20)
    ew_turn_ratios: tuple = (0.05, 0.85, 0.10)
    mainline_demand_veh_h: float = 7000.0
    arterial_demand_veh_h: float = 600.0
    demand_std_frac: float = 0.10
    ramp_share_of_east_leg: float = 0.6
    arterial_speed_kmh: float = 50.0
    vehicle_spacing_m: float = 7.5

    def make_fd(self) -> FundamentalDiagram:
        return FundamentalDiagram.from_speeds(
            self.capacity_veh_h, self.free_flow_kmh, self.backwave_kmh,
            self.outflow_wave_kmh, self.capacity_drop_frac)


def _intersections(params: NetworkParams, count: int) -> tuple:
    ns = TurnRatios(*params.ns_turn_ratios)
    ew = TurnRatios(*params.ew_turn_ratios)
    ratios = {"E": ew, "W": ew, "S": ns, "N": ns}
    return tuple(
        Intersection(index=k, saturation_veh_h=params.saturation_veh_h,
                     turn_ratios=ratios,
                     link_m=params.section_length_km * 1000.0)
        for k in range(1, count + 1)
    )


def _arterial_demands(params: NetworkParams, count: int,
                      std_frac: Optional[float] = None) -> dict:
    frac = params.demand_std_frac if std_frac is None else std_frac
    mu = params.arterial_demand_veh_h
    profile = DemandProfile(mu, frac * mu)
    demands = {}
    for k in range(1, count + 1):
        demands[(k, "E")] = profile
        demands[(k, "W")] = profile
    demands[(1, "S")] = profile  # north end of the arterial main street
    demands[(count, "N")] = profile  # south end
    return demands


def default_corridor(params: NetworkParams = NetworkParams()) -> NetworkTopology:
    """Six-section, five-lane freeway with an upstream VSL zone and seven
    parallel arterial intersections; section i pairs with intersection i."""
    fd = params.make_fd()
    sections = []
    for i in range(1, params.num_sections + 1):
        onramp = (RampSpec("on", connecting_intersection=i,
                           storage_m=params.onramp_storage_m)
                  if i in params.onramp_sections else None)
        offramp = (RampSpec("off", connecting_intersection=i,
                            mean_offramp_flow_veh_h=params.offramp_mean_veh_h,
                            exit_ratio=params.offramp_exit_ratio)
                   if i in params.offramp_sections else None)
        sections.append(FreewaySection(
            index=i, length_km=params.section_length_km,
            lane_count=params.lane_count, fd=fd,
            onramp=onramp, offramp=offramp, paired_intersection=i))
    return NetworkTopology(
        fd=fd,
        upstream_zone_km=params.upstream_zone_km,
        sections=tuple(sections),
        intersections=_intersections(params, params.num_intersections),
        mainline_demand=DemandProfile(
            params.mainline_demand_veh_h,
            params.demand_std_frac * params.mainline_demand_veh_h),
        arterial_demands=_arterial_demands(params, params.num_intersections),
        ramp_share_of_east_leg=params.ramp_share_of_east_leg,
        arterial_speed_kmh=params.arterial_speed_kmh,
        vehicle_spacing_m=params.vehicle_spacing_m,
    )


def single_section_network(params: NetworkParams = NetworkParams()) -> NetworkTopology:
    """Offline-training scene: one section with on- and off-ramp, one
    intersection, no upstream VSL zone."""
    fd = params.make_fd()
    section = FreewaySection(
        index=1, length_km=params.section_length_km, lane_count=params.lane_count,
        fd=fd,
        onramp=RampSpec("on", connecting_intersection=1,
                        storage_m=params.onramp_storage_m),
        offramp=RampSpec("off", connecting_intersection=1,
                         mean_offramp_flow_veh_h=params.offramp_mean_veh_h,
                         exit_ratio=params.offramp_exit_ratio),
        paired_intersection=1)
    return NetworkTopology(
        fd=fd,
        upstream_zone_km=0.0,
        sections=(section,),
        intersections=_intersections(params, 1),
        mainline_demand=DemandProfile(
            params.mainline_demand_veh_h,
            params.demand_std_frac * params.mainline_demand_veh_h),
        arterial_demands=_arterial_demands(params, 1),
        ramp_share_of_east_leg=params.ramp_share_of_east_leg,
        arterial_speed_kmh=params.arterial_speed_kmh,
        vehicle_spacing_m=params.vehicle_spacing_m,
    )


def isolated_intersection_network(demand_veh_h: float,
                                  params: NetworkParams = NetworkParams(),
                                  turn_ratios: tuple = (0.25, 0.5, 0.25),
                                  std_frac: float = 0.05) -> NetworkTopology:
    """Calibration scene: a single intersection fed on all four approaches,
    no freeway at all."""
    ratios = TurnRatios(*turn_ratios)
    inter = Intersection(index=1, saturation_veh_h=params.saturation_veh_h,
                         turn_ratios={d: ratios for d in DIRECTIONS},
                         link_m=1000.0)
    profile = DemandProfile(demand_veh_h, std_frac * demand_veh_h)
    demands = {(1, d): profile for d in DIRECTIONS}
    return NetworkTopology(
        fd=params.make_fd(),
        upstream_zone_km=0.0,
        sections=(),
        intersections=(inter,),
        mainline_demand=DemandProfile(0.0, 0.0),
        arterial_demands=demands,
        ramp_share_of_east_leg=0.0,
        arterial_speed_kmh=params.arterial_speed_kmh,
        vehicle_spacing_m=params.vehicle_spacing_m,
    )


# ---------------------------------------------------------------------------
# Scenario configuration
# ---------------------------------------------------------------------------

DEMAND_MULTIPLIERS = {"moderate": 1.0, "high": 1.4}


@dataclass(frozen=True)
class IncidentSpec:
    enabled: bool = False
    section: int = 4
    start_s: float = 600.0
    clear_s: float = 1800.0


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation run: demand level, incident, timing, and RNG seed."""

    demand_level: str = "moderate"
    incident: IncidentSpec = IncidentSpec()
    duration_s: float = 2400.0
    warmup_s: float = 600.0
    control_cycle_s: float = 30.0
    dt_s: float = 1.0
    seed: int = 0
    stochastic_demand: bool = True
    probe_period_s: float = 10.0
    network: NetworkParams = NetworkParams()

    def __post_init__(self) -> None:
        if self.demand_level not in DEMAND_MULTIPLIERS:
            raise ValueError(f"unknown demand level {self.demand_level!r}")
        if self.control_cycle_s <= 0:
            raise ValueError("control cycle must be positive")
        if self.dt_s <= 0 or abs(self.control_cycle_s / self.dt_s
                                 - round(self.control_cycle_s / self.dt_s)) > 1e-9:
            raise ValueError("dt must be positive and divide the control cycle")
        if not self.warmup_s < self.duration_s:
            raise ValueError("warm-up must be shorter than the run")
        if self.incident.enabled:
            if not (0 <= self.incident.start_s < self.incident.clear_s
                    <= self.duration_s):
                raise ValueError("incident interval must lie within the run")

    @property
    def demand_multiplier(self) -> float:
        return DEMAND_MULTIPLIERS[self.demand_level]


class ScenarioError(ValueError):
    """Raised when a scenario document cannot be parsed or is inconsistent."""


def _scenario_to_dict(config: ScenarioConfig) -> dict:
    return {
        "demand_level": config.demand_level,
        "incident": asdict(config.incident),
        "run": {
            "duration_s": config.duration_s,
            "warmup_s": config.warmup_s,
            "control_cycle_s": config.control_cycle_s,
            "dt_s": config.dt_s,
            "seed": config.seed,
            "stochastic_demand": config.stochastic_demand,
            "probe_period_s": config.probe_period_s,
        },
        "network": asdict(config.network),
    }


def save_scenario(config: ScenarioConfig) -> str:
    """Serialize a scenario to the structured text format (YAML)."""
    return yaml.safe_dump(_scenario_to_dict(config), sort_keys=False)


def load_scenario(text: str) -> ScenarioConfig:
    """Parse a scenario document, applying documented defaults for absent keys.

    Raises ScenarioError with the offending line/field on malformed input;
    semantic invariants (warm-up vs duration, incident window) are also
    enforced here.
    """
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"scenario parse error: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ScenarioError("scenario document must be a mapping")

    known = {"demand_level", "incident", "run", "network"}
    unknown = set(raw) - known
    if unknown:
        raise ScenarioError(f"unknown scenario fields: {sorted(unknown)}")

    run = raw.get("run") or {}
    incident = raw.get("incident") or {}
    net = raw.get("network") or {}
    for name, section, template in (
        ("run", run, {"duration_s", "warmup_s", "control_cycle_s", "dt_s",
                      "seed", "stochastic_demand", "probe_period_s"}),
        ("incident", incident, {"enabled", "section", "start_s", "clear_s"}),
    ):
        bad = set(section) - template
        if bad:
            raise ScenarioError(f"unknown field(s) in '{name}': {sorted(bad)}")
    try:
        net_params = NetworkParams(**{k: tuple(v) if isinstance(v, list) else v
                                      for k, v in net.items()})
    except TypeError as exc:
        raise ScenarioError(f"unknown field in 'network': {exc}") from exc

    try:
        return ScenarioConfig(
            demand_level=raw.get("demand_level", "moderate"),
            incident=IncidentSpec(**incident),
            duration_s=float(run.get("duration_s", 2400.0)),
            warmup_s=float(run.get("warmup_s", 600.0)),
            control_cycle_s=float(run.get("control_cycle_s", 30.0)),
            dt_s=float(run.get("dt_s", 1.0)),
            seed=int(run.get("seed", 0)),
            stochastic_demand=bool(run.get("stochastic_demand", True)),
            probe_period_s=float(run.get("probe_period_s", 10.0)),
            network=net_params,
        )
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
