"""One episode of the swarm: world, per-drone knowledge, and the broadcast channel."""

from __future__ import annotations

import numpy as np

from .comms import broadcast_round, draw_shadowing
from .gridenv import GridMap, SwarmState, on_target_flags, rewards, step
from .knowledge import KnowledgeState, build_observation, merge_broadcasts, sense_and_update
from .scenario import Scenario


class SwarmEpisode:
    """Drives the sense -> broadcast -> observe -> act -> move loop.

    Each drone keeps its own :class:`KnowledgeState`; under a perfect channel
    they stay identical.
    """

    def __init__(self, sc: Scenario, grid: GridMap, start: SwarmState, channel_rng: np.random.Generator | None = None):
        self.sc = sc
        self.grid = grid
        self.state = start.copy()
        self.channel = sc.channel
        self.rng = channel_rng if channel_rng is not None else np.random.default_rng()
        self.shadowing = draw_shadowing(sc.U, self.channel, self.rng) if self.channel.mode == "lossy" else None
        self.knowledge = [KnowledgeState(grid.M, sc.U) for _ in range(sc.U)]
        self._share()

    @property
    def positions(self) -> np.ndarray:
        return self.state.positions

    def _share(self) -> None:
        for K in self.knowledge:
            K.tick()
        deltas = []
        for u, K in enumerate(self.knowledge):
            deltas += sense_and_update(K, self.positions, self.grid, self.sc.zeta, agents=[u])
        inbox = broadcast_round(deltas, self.positions, self.channel, self.rng, self.shadowing)
        for K, received in zip(self.knowledge, inbox):
            merge_broadcasts(K, received)

    def observation(self, u: int, dtype=np.float32) -> np.ndarray:
        return build_observation(self.knowledge[u], self.positions, u, self.sc.F, self.sc.rho, dtype).channels

    def observations(self, dtype=np.float32) -> np.ndarray:
        return np.stack([self.observation(u, dtype) for u in range(self.sc.U)])

    def step(self, actions) -> np.ndarray:
        """Apply a joint action; returns the per-drone rewards."""
        r = rewards(self.state, actions, self.grid, self.sc.theta, self.sc.psi)
        self.state = step(self.state, actions, self.grid)
        self._share()
        return r

    def targets_occupied(self) -> int:
        """Number of distinct targets with at least one drone on them."""
        p = self.positions
        hit = (p[:, None, :] == self.grid.targets[None, :, :]).all(axis=2)
        return int(hit.any(axis=0).sum())

    def success(self) -> bool:
        if not on_target_flags(self.positions, self.grid).all():
            return False
        if not self.sc.distinct_targets:
            return True
        return len({tuple(p) for p in self.positions}) == len(self.positions)
