"""Multi-replication evaluation of the four control strategies over the
scenario matrix, with improvement percentages against the no-control row."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .baselines import (FeedbackStrategy, NoControlStrategy,
                        UncoordinatedQlStrategy, build_uncoordinated_agents)
from .freeway_agent import CoordinatedQlStrategy
from .metrics import RunMetrics, compute_run_metrics, improvement_pct
from .network import IncidentSpec, NetworkParams, ScenarioConfig, default_corridor
from .qlearn import QTable
from .runner import RunResult, run_corridor

STRATEGY_ORDER = ("none", "feedback", "ql_uncoordinated", "ql_coordinated")


@dataclass(frozen=True)
class ExperimentPlan:
    demand_levels: tuple = ("moderate", "high")
    incidents: tuple = (False, True)
    strategies: tuple = STRATEGY_ORDER
    replications: int = 10
    seed_base: int = 20240501
    duration_s: float = 2400.0
    warmup_s: float = 600.0
    dt_s: float = 1.0
    incident_section: int = 4
    incident_start_s: float = 600.0
    incident_clear_s: float = 1800.0

    def scenario_cells(self) -> list:
        return [(level, inc) for level in self.demand_levels
                for inc in self.incidents]


def scenario_label(level: str, incident: bool) -> str:
    return f"{level}_{'incident' if incident else 'no_incident'}"


def make_strategy(name: str, artifacts: Dict[str, QTable]):
    """Instantiate a frozen evaluation strategy; learning strategies require
    their trained tables in ``artifacts``."""
    if name == "none":
        return NoControlStrategy()
    if name == "feedback":
        return FeedbackStrategy()
    if name == "ql_coordinated":
        if "coordinated" not in artifacts:
            raise ValueError("missing artifact: coordinated Q-table")
        return CoordinatedQlStrategy(artifacts["coordinated"], mode="greedy")
    if name == "ql_uncoordinated":
        agents = build_uncoordinated_agents()
        for agent in agents:
            key = f"sub_{agent.kind.lower()}"
            if key not in artifacts:
                raise ValueError(f"missing artifact: {key} Q-table")
            agent.table = artifacts[key]
        return UncoordinatedQlStrategy(agents, mode="greedy")
    raise ValueError(f"unknown strategy {name!r}")


@dataclass
class EvaluationResult:
    rows: List[dict]
    traces: Dict[tuple, RunResult]  # (scenario_label, strategy) -> rep-0 run
    seeds: Dict[tuple, list]


def _nanmean(values: list) -> float:
    good = [v for v in values if v is not None and not math.isnan(v)]
    return sum(good) / len(good) if good else math.nan


def evaluate(plan: ExperimentPlan, params: NetworkParams,
             artifacts: Dict[str, QTable],
             progress=None) -> EvaluationResult:
    """Run the full matrix and aggregate replication means per cell.

    Row order within each scenario follows STRATEGY_ORDER; improvement
    percentages are computed against the no-control row of the same scenario
    (reductions positive, matching the bracket convention)."""
    network = default_corridor(params)
    rows: List[dict] = []
    traces: Dict[tuple, RunResult] = {}
    seeds: Dict[tuple, list] = {}

    for s_idx, (level, incident) in enumerate(plan.scenario_cells()):
        label = scenario_label(level, incident)
        cell_rows = []
        for st_idx, name in enumerate(plan.strategies):
            per_rep: List[RunMetrics] = []
            rep_seeds = []
            for rep in range(plan.replications):
                seed = plan.seed_base + 1000 * s_idx + 100 * st_idx + rep
                rep_seeds.append(seed)
                scenario = ScenarioConfig(
                    demand_level=level,
                    incident=IncidentSpec(
                        enabled=incident, section=plan.incident_section,
                        start_s=plan.incident_start_s,
                        clear_s=plan.incident_clear_s),
                    duration_s=plan.duration_s, warmup_s=plan.warmup_s,
                    dt_s=plan.dt_s, seed=seed, network=params)
                strategy = make_strategy(name, artifacts)
                result = run_corridor(network, scenario, strategy,
                                      trace=(rep == 0))
                per_rep.append(compute_run_metrics(result.sim))
                if rep == 0:
                    traces[(label, name)] = result
                if progress is not None:
                    progress(label, name, rep)
            seeds[(label, name)] = rep_seeds
            row = {
                "scenario": label,
                "demand_level": level,
                "incident": int(incident),
                "strategy": name,
                "replications": plan.replications,
                "travel_time_min": _nanmean(
                    [m.travel_time_min for m in per_rep]),
                "mean_stops": _nanmean([m.mean_stops for m in per_rep]),
                "emission_g_per_km": _nanmean(
                    [m.emission_g_per_km for m in per_rep]),
                "fuel_g_per_km": _nanmean([m.fuel_g_per_km for m in per_rep]),
                "onramp_queue_m": _nanmean([m.onramp_queue_m for m in per_rep]),
                "arterial_queue_m": _nanmean(
                    [m.arterial_queue_m for m in per_rep]),
                "flagged_runs": sum(m.flagged for m in per_rep),
            }
            cell_rows.append(row)
        base = next(r for r in cell_rows if r["strategy"] == "none") \
            if any(r["strategy"] == "none" for r in cell_rows) else None
        for row in cell_rows:
            for metric in ("travel_time_min", "mean_stops",
                           "emission_g_per_km", "arterial_queue_m"):
                if base is not None and not math.isnan(base[metric]) \
                        and not math.isnan(row[metric]):
                    row[f"{metric}_improvement_pct"] = improvement_pct(
                        base[metric], row[metric])
                else:
                    row[f"{metric}_improvement_pct"] = math.nan
        rows.extend(cell_rows)
    return EvaluationResult(rows=rows, traces=traces, seeds=seeds)
