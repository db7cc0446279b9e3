"""LA(n): exhaustive look-ahead over a drone's own move sequences.

Every other drone is held static. A cell's value is collected only on the
first visit along a simulated path, and targets claimed by a hovering drone
read as zero for everybody else.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .gridenv import ACTIONS, STAY
from .knowledge import UNKNOWN, KnowledgeState

TIE_TOL = 1e-12


@dataclass
class LookaheadConfig:
    horizon: int = 4
    consume_values: bool = True
    claimed_targets: dict[tuple[int, int], int] = field(default_factory=dict)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("look-ahead horizon must be >= 1")

    def reset(self) -> None:
        self.claimed_targets.clear()


@lru_cache(maxsize=None)
def action_sequences(n: int) -> np.ndarray:
    return np.array(list(itertools.product(range(len(ACTIONS)), repeat=n)), dtype=np.int64)


def _others(positions, u: int, K: KnowledgeState) -> np.ndarray:
    """Positions of the other drones as known to ``u``."""
    kp = K.known_positions.copy()
    kp[u] = UNKNOWN
    return kp[kp[:, 0] != UNKNOWN]


def _value_view(K: KnowledgeState, claimed, u: int) -> np.ndarray:
    phi = K.phi_hat.copy()
    for (x, y), owner in claimed.items():
        if owner != u:
            phi[x, y] = 0.0
    return phi


def la_reward(positions, a: int, u: int, K: KnowledgeState, claimed=None) -> float:
    """Single-step look-ahead reward: value over crowding, or -inf for a known-invalid move."""
    claimed = claimed or {}
    x, y = np.asarray(positions[u]) + ACTIONS[a]
    if not (0 <= x < K.M and 0 <= y < K.M) or K.omega_hat[x, y]:
        return -np.inf
    others = _others(positions, u, K)
    xi = 1 + int(((others[:, 0] == x) & (others[:, 1] == y)).sum())
    value = 0.0 if claimed.get((int(x), int(y)), u) != u else K.phi_hat[x, y]
    return float(value) / xi


def sequence_values(
    positions, u: int, K: KnowledgeState, horizon: int, claimed=None, consume_values: bool = True
) -> np.ndarray:
    """Summed look-ahead reward of every own action sequence of length ``horizon``."""
    claimed = claimed or {}
    seqs = action_sequences(horizon)
    S, M = len(seqs), K.M
    phi = _value_view(K, claimed, u)
    crowd = np.ones((M, M))
    for x, y in _others(positions, u, K):
        crowd[x, y] += 1
    pos = np.tile(np.asarray(positions[u], np.int64), (S, 1))
    total = np.zeros(S)
    alive = np.ones(S, bool)
    visited = []
    for i in range(horizon):
        dest = pos + ACTIONS[seqs[:, i]]
        inside = (dest >= 0).all(axis=1) & (dest < M).all(axis=1)
        ok = inside.copy()
        ok[inside] = K.omega_hat[dest[inside, 0], dest[inside, 1]] == 0
        alive &= ok
        dest = np.where(ok[:, None], dest, pos)
        gain = phi[dest[:, 0], dest[:, 1]] / crowd[dest[:, 0], dest[:, 1]]
        if consume_values:
            for prev in visited:
                gain[(prev == dest).all(axis=1)] = 0.0
        total += gain
        visited.append(dest)
        pos = dest
    total[~alive] = -np.inf
    return total


def la_select_action(
    u: int, positions, K: KnowledgeState, cfg: LookaheadConfig, rng: np.random.Generator
) -> int:
    """Pick an action index for drone ``u``; may add a claim to ``cfg``."""
    here = tuple(int(v) for v in positions[u])
    owner = cfg.claimed_targets.get(here)
    if owner == u:
        return STAY
    if owner is None and K.explored[here] and K.phi_hat[here] == 1.0:
        cfg.claimed_targets[here] = u
        return STAY
    values = sequence_values(positions, u, K, cfg.horizon, cfg.claimed_targets, cfg.consume_values)
    best = values.max()
    winners = np.flatnonzero(values >= best - TIE_TOL)
    return int(action_sequences(cfg.horizon)[rng.choice(winners), 0])
