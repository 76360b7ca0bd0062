"""Sparse tabular Q-learning: value store, update rule, visit-count schedules,
adaptive epsilon-greedy selection, convergence check, and persistence.

State and action keys are tuples of ints. Unvisited pairs read as Q = 0 with
zero visits, so the full discretized state space is never materialized.
"""

from __future__ import annotations

import json
from typing import Iterable, Optional, Sequence

StateKey = tuple
ActionKey = tuple

TABLE_FORMAT = "corridorctl-qtable"
TABLE_VERSION = 1


class QTable:
    """Sparse (state, action) -> Q mapping with per-pair and per-state visit counts."""

    def __init__(self, gamma: float = 0.9):
        if not 0 <= gamma < 1:
            raise ValueError("discount factor must lie in [0, 1)")
        self.gamma = gamma
        self.values: dict = {}  # (state, action) -> float
        self.pair_visits: dict = {}  # (state, action) -> int
        self.state_visits: dict = {}  # state -> int

    def q(self, state: StateKey, action: ActionKey) -> float:
        return self.values.get((state, action), 0.0)

    def n(self, state: StateKey, action: ActionKey) -> int:
        return self.pair_visits.get((state, action), 0)

    def n_state(self, state: StateKey) -> int:
        return self.state_visits.get(state, 0)

    def best_q(self, state: StateKey, actions: Sequence[ActionKey]) -> float:
        return max(self.q(state, a) for a in actions)

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other) -> bool:
        return (isinstance(other, QTable)
                and self.gamma == other.gamma
                and self.values == other.values
                and self.pair_visits == other.pair_visits
                and self.state_visits == other.state_visits)


def learning_rate(n_visits: int, gamma: float) -> float:
    """Per-pair learning rate schedule: [1 / (1 + n*(1-gamma))]^0.8.

    Equals 1 for a fresh pair and decreases strictly with the visit count.
    """
    if n_visits < 0:
        raise ValueError("visit count must be nonnegative")
    return (1.0 / (1.0 + n_visits * (1.0 - gamma))) ** 0.8


def exploration_prob(n_state_visits: int, n_actions: int) -> float:
    """Adaptive exploration probability with a floor of 0.05.

    delta = max(0.05, 1 / (1 + n_x / (4 * N_a))), reading the visit sum as the
    cumulative number of prior visits of the state.
    """
    if n_actions < 1:
        raise ValueError("need at least one available action")
    if n_state_visits < 0:
        raise ValueError("visit count must be nonnegative")
    return max(0.05, 1.0 / (1.0 + n_state_visits / (4.0 * n_actions)))


def q_update(table: QTable, state: StateKey, action: ActionKey, reward: float,
             next_state: StateKey, next_actions: Sequence[ActionKey]) -> float:
    """One Q-learning backup; returns |delta Q|.

    Q(x,a) += eta(x,a) * [r + gamma * max_a' Q(x',a') - Q(x,a)], with eta taken
    from the pair's visit count before this update, then both counts increment.
    """
    if not 0.0 <= reward <= 1.0:
        raise ValueError(f"reward {reward} outside [0, 1]")
    key = (state, action)
    n = table.pair_visits.get(key, 0)
    eta = learning_rate(n, table.gamma)
    old = table.values.get(key, 0.0)
    best_next = max((table.values.get((next_state, a), 0.0) for a in next_actions),
                    default=0.0)
    delta = eta * (reward + table.gamma * best_next - old)
    table.values[key] = old + delta
    table.pair_visits[key] = n + 1
    table.state_visits[state] = table.state_visits.get(state, 0) + 1
    return abs(delta)


def select_action(table: QTable, state: StateKey, actions: Sequence[ActionKey],
                  rng, mode: str = "train") -> ActionKey:
    """Pick an action: greedy argmax with lowest-key tie-breaking, or, in train
    mode, a uniform-random action with the state's exploration probability.

    ``rng`` needs ``random()`` and ``randrange()`` (e.g. random.Random).
    """
    if not actions:
        raise ValueError("candidate action set is empty")
    if mode not in ("train", "greedy"):
        raise ValueError(f"unknown selection mode {mode!r}")
    if mode == "train":
        delta = exploration_prob(table.n_state(state), len(actions))
        if rng.random() < delta:
            return actions[rng.randrange(len(actions))]
    best = None
    best_q = None
    for a in actions:
        q = table.q(state, a)
        if best_q is None or q > best_q or (q == best_q and a < best):
            best, best_q = a, q
    return best


def has_converged(deltas: Iterable[float], window: int = 10000,
                  threshold: float = 0.01) -> bool:
    """True iff at least ``window`` updates exist and the most recent ``window``
    of them are all strictly below ``threshold``."""
    recent = list(deltas)[-window:]
    if len(recent) < window:
        return False
    return max(recent) < threshold


# ---------------------------------------------------------------------------
# Persistence: versioned JSON document (endianness-free by construction)
# ---------------------------------------------------------------------------

def save_table(table: QTable) -> str:
    """Serialize a table to the versioned JSON document format."""
    entries = [[list(state), list(action), q, table.pair_visits[(state, action)]]
               for (state, action), q in table.values.items()]
    doc = {
        "format": TABLE_FORMAT,
        "version": TABLE_VERSION,
        "gamma": table.gamma,
        "entries": entries,
        "state_visits": [[list(state), n] for state, n in table.state_visits.items()],
    }
    return json.dumps(doc)


def load_table(document: str) -> QTable:
    """Parse a persisted table; rejects corrupt or incompatible documents."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ValueError(f"corrupt Q-table document: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != TABLE_FORMAT:
        raise ValueError("not a corridorctl Q-table document")
    if doc.get("version") != TABLE_VERSION:
        raise ValueError(f"unsupported Q-table version {doc.get('version')!r}")
    try:
        table = QTable(gamma=doc["gamma"])
        for state, action, q, n in doc["entries"]:
            key = (tuple(state), tuple(action))
            table.values[key] = q
            table.pair_visits[key] = n
        for state, n in doc["state_visits"]:
            table.state_visits[tuple(state)] = n
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed Q-table document: {exc}") from exc
    return table


def save_table_file(table: QTable, path) -> None:
    with open(path, "w") as fh:
        fh.write(save_table(table))


def load_table_file(path) -> QTable:
    with open(path) as fh:
        return load_table(fh.read())
