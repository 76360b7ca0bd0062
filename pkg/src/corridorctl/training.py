"""Offline and online training protocols for the freeway control agents.

Offline training loops 30-minute episodes (60 control steps, 5-minute
warm-up) on the single-section network, drawing the demand level per episode
and an incident with probability 0.2 after the warm-up, until the sliding
window of Q updates has converged. The offline environment runs fluid
(deterministic) demand at a coarser tick so the visited state support stays
compact; stochastic arrivals return in the online phase.

Online training then alternates learning passes over the four corridor
scenarios with frozen-policy evaluations, stopping once travel time and queue
lengths each change by less than 1% across three consecutive iterations.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

from .baselines import UncoordinatedQlStrategy, build_uncoordinated_agents
from .freeway_agent import CoordinatedQlStrategy
from .metrics import compute_run_metrics
from .network import (IncidentSpec, NetworkParams, ScenarioConfig,
                      default_corridor, single_section_network)
from .qlearn import QTable, has_converged
from .runner import run_corridor

SCENARIO_CELLS = (("moderate", False), ("moderate", True),
                  ("high", False), ("high", True))


@dataclass(frozen=True)
class OfflineSettings:
    max_episodes: int = 200000
    window: int = 10000
    threshold: float = 0.01
    episode_duration_s: float = 1800.0
    episode_warmup_s: float = 300.0
    control_cycle_s: float = 30.0
    dt_s: float = 5.0
    incident_prob: float = 0.2
    demand_levels: tuple = ("moderate", "high")
    gamma: float = 0.9
    log_every: int = 500


def draw_incident(rng: random.Random, prob: float = 0.2) -> bool:
    """Per-episode incident draw used by the offline protocol."""
    return rng.random() < prob


@dataclass
class TrainingResult:
    tables: Dict[str, QTable]
    log_rows: List[dict]
    converged: bool
    episodes: int
    stopped_reason: str = ""


def _offline_scenario(level: str, incident: bool, seed: int,
                      settings: OfflineSettings) -> ScenarioConfig:
    return ScenarioConfig(
        demand_level=level,
        incident=IncidentSpec(enabled=incident, section=1,
                              start_s=settings.episode_warmup_s,
                              clear_s=settings.episode_duration_s),
        duration_s=settings.episode_duration_s,
        warmup_s=settings.episode_warmup_s,
        control_cycle_s=settings.control_cycle_s,
        dt_s=settings.dt_s,
        seed=seed,
        stochastic_demand=False,
        probe_period_s=30.0,
    )


def train_offline(strategy_kind: str, params: NetworkParams, seed: int,
                  settings: OfflineSettings = OfflineSettings()) -> TrainingResult:
    """Train the coordinated agent or the three uncoordinated sub-agents on
    the single-section network until the Q updates converge."""
    if strategy_kind == "coordinated":
        strategy = CoordinatedQlStrategy(QTable(settings.gamma), mode="train")
        tables = {"coordinated": strategy.table}
    elif strategy_kind == "uncoordinated":
        agents = build_uncoordinated_agents(settings.gamma)
        strategy = UncoordinatedQlStrategy(agents, mode="train")
        tables = {f"sub_{a.kind.lower()}": a.table for a in agents}
    else:
        raise ValueError(f"unknown strategy kind {strategy_kind!r}")

    network = single_section_network(params)
    protocol_rng = random.Random(seed)
    window: deque = deque(maxlen=settings.window)
    log_rows: List[dict] = []
    converged = False
    episode = 0
    while episode < settings.max_episodes:
        episode += 1
        level = settings.demand_levels[
            protocol_rng.randrange(len(settings.demand_levels))]
        incident = draw_incident(protocol_rng, settings.incident_prob)
        scenario = _offline_scenario(level, incident, seed + episode, settings)
        run_corridor(network, scenario, strategy, learn=True)
        window.extend(strategy.deltas)
        updates = len(strategy.deltas)
        mean_reward = (sum(strategy.rewards) / len(strategy.rewards)
                       if strategy.rewards else 0.0)
        strategy.deltas.clear()
        strategy.rewards.clear()
        converged = has_converged(window, settings.window, settings.threshold)
        if episode % settings.log_every == 0 or converged \
                or episode == settings.max_episodes:
            log_rows.append({
                "episode": episode,
                "demand_level": level,
                "incident": int(incident),
                "updates": updates,
                "mean_reward": mean_reward,
                "window_max_delta": max(window) if window else 0.0,
                "table_entries": sum(len(t.values) for t in tables.values()),
                "converged": int(converged),
            })
        if converged:
            break
    reason = "converged" if converged else "episode cap reached"
    return TrainingResult(tables=tables, log_rows=log_rows, converged=converged,
                          episodes=episode, stopped_reason=reason)


# ---------------------------------------------------------------------------
# Online refinement on the corridor
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OnlineSettings:
    max_iterations: int = 50
    improvement_threshold: float = 0.01
    consecutive_required: int = 3
    duration_s: float = 2400.0
    warmup_s: float = 600.0
    control_cycle_s: float = 30.0
    dt_s: float = 1.0
    incident_section: int = 4
    incident_start_s: float = 600.0
    incident_clear_s: float = 1800.0


def _corridor_scenario(level: str, incident: bool, seed: int,
                       settings: OnlineSettings) -> ScenarioConfig:
    return ScenarioConfig(
        demand_level=level,
        incident=IncidentSpec(enabled=incident,
                              section=settings.incident_section,
                              start_s=settings.incident_start_s,
                              clear_s=settings.incident_clear_s),
        duration_s=settings.duration_s,
        warmup_s=settings.warmup_s,
        control_cycle_s=settings.control_cycle_s,
        dt_s=settings.dt_s,
        seed=seed,
        stochastic_demand=True,
    )


def relative_change(previous: float, current: float) -> float:
    """|current - previous| / previous, treating a 0 -> 0 move as no change."""
    if previous <= 0:
        return 0.0 if current <= 0 else 1.0
    return abs(previous - current) / previous


def online_stopping(changes: List[tuple], threshold: float = 0.01,
                    needed: int = 3) -> Optional[int]:
    """Index (0-based) of the iteration after which training stops: the end of
    the first run of ``needed`` consecutive iterations whose travel-time and
    queue changes both stay below the threshold; None if never reached."""
    streak = 0
    for idx, (tt_change, queue_change) in enumerate(changes):
        if tt_change < threshold and queue_change < threshold:
            streak += 1
            if streak >= needed:
                return idx
        else:
            streak = 0
    return None


def _evaluate_policy(strategy, params: NetworkParams, seed: int,
                     settings: OnlineSettings) -> tuple:
    """Frozen-policy pass over the four scenarios; returns mean travel time
    (min) and mean queue length (m, ramps and approaches pooled)."""
    network = default_corridor(params)
    tts, queues = [], []
    for idx, (level, incident) in enumerate(SCENARIO_CELLS):
        scenario = _corridor_scenario(level, incident, seed + idx, settings)
        result = run_corridor(network, scenario, strategy, learn=False)
        m = compute_run_metrics(result.sim)
        if m.travel_time_min is not None:
            tts.append(m.travel_time_min)
        queues.append(0.5 * (m.onramp_queue_m + m.arterial_queue_m))
    tt = sum(tts) / len(tts) if tts else float("nan")
    return tt, sum(queues) / len(queues)


def train_online(strategy, params: NetworkParams, seed: int,
                 settings: OnlineSettings = OnlineSettings()) -> TrainingResult:
    """Refine an offline-trained strategy on the corridor until the <1%-over-3
    stopping rule fires. Evaluation seeds are fixed across iterations so the
    improvements measure policy change, not sampling noise."""
    network = default_corridor(params)
    eval_seed = seed + 900000
    log_rows: List[dict] = []

    prev_tt, prev_queue = _evaluate_policy(strategy, params, eval_seed, settings)
    log_rows.append({"iteration": 0, "travel_time_min": prev_tt,
                     "queue_m": prev_queue, "tt_change": float("nan"),
                     "queue_change": float("nan"), "streak": 0})

    changes: List[tuple] = []
    stopped_at = None
    for iteration in range(1, settings.max_iterations + 1):
        for idx, (level, incident) in enumerate(SCENARIO_CELLS):
            scenario = _corridor_scenario(
                level, incident, seed + iteration * 100 + idx, settings)
            run_corridor(network, scenario, strategy, learn=True)
        strategy.deltas.clear()
        tt, queue = _evaluate_policy(strategy, params, eval_seed, settings)
        changes.append((relative_change(prev_tt, tt),
                        relative_change(prev_queue, queue)))
        stopped_at = online_stopping(changes, settings.improvement_threshold,
                                     settings.consecutive_required)
        streak = 0
        for c in reversed(changes):
            if c[0] < settings.improvement_threshold \
                    and c[1] < settings.improvement_threshold:
                streak += 1
            else:
                break
        log_rows.append({"iteration": iteration, "travel_time_min": tt,
                         "queue_m": queue, "tt_change": changes[-1][0],
                         "queue_change": changes[-1][1], "streak": streak})
        prev_tt, prev_queue = tt, queue
        if stopped_at is not None:
            break

    converged = stopped_at is not None
    tables = getattr(strategy, "table", None)
    if tables is not None:
        table_map = {"coordinated": tables}
    else:
        table_map = {f"sub_{a.kind.lower()}": a.table for a in strategy.agents}
    return TrainingResult(
        tables=table_map, log_rows=log_rows, converged=converged,
        episodes=len(changes),
        stopped_reason="improvement rule" if converged else "iteration cap")
