"""Explored-map knowledge, field-of-view sensing, and observation windows."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .gridenv import GridMap

UNKNOWN = -1


@lru_cache(maxsize=None)
def disc_offsets(zeta: float) -> np.ndarray:
    """Integer offsets within Euclidean distance ``zeta`` (boundary included)."""
    r = int(np.floor(zeta))
    d = np.arange(-r, r + 1)
    dx, dy = np.meshgrid(d, d, indexing="ij")
    keep = dx**2 + dy**2 <= zeta**2 + 1e-9
    return np.stack([dx[keep], dy[keep]], axis=1)


@dataclass
class KnowledgeDelta:
    """What one drone broadcasts after a step: newly explored cells and its position."""

    sender: int
    position: tuple[int, int]
    cells: np.ndarray  # (n, 2) int
    phi: np.ndarray  # (n,)
    omega: np.ndarray  # (n,)


class KnowledgeState:
    """One drone's (or the swarm's shared) picture of the map."""

    def __init__(self, M: int, U: int):
        self.M = M
        self.explored = np.zeros((M, M), bool)
        self.phi_hat = np.ones((M, M))
        self.omega_hat = np.zeros((M, M), np.uint8)
        self.known_positions = np.full((U, 2), UNKNOWN, np.int64)
        self.staleness = np.zeros(U, np.int64)

    @property
    def U(self) -> int:
        return len(self.known_positions)

    def copy(self) -> "KnowledgeState":
        other = KnowledgeState.__new__(KnowledgeState)
        other.M = self.M
        for name in ("explored", "phi_hat", "omega_hat", "known_positions", "staleness"):
            setattr(other, name, getattr(self, name).copy())
        return other

    def to_bytes(self) -> bytes:
        return b"".join(
            getattr(self, n).tobytes()
            for n in ("explored", "phi_hat", "omega_hat", "known_positions", "staleness")
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeState):
            return NotImplemented
        return self.M == other.M and self.to_bytes() == other.to_bytes()

    def tick(self) -> None:
        """Age every position record by one step."""
        self.staleness += 1

    def see_position(self, agent: int, position) -> None:
        self.known_positions[agent] = position
        self.staleness[agent] = 0

    def _fill(self, cells: np.ndarray, phi, omega) -> None:
        xs, ys = cells[:, 0], cells[:, 1]
        self.explored[xs, ys] = True
        self.phi_hat[xs, ys] = phi
        self.omega_hat[xs, ys] = omega


def fov_cells(position, zeta: float, M: int) -> np.ndarray:
    cells = disc_offsets(zeta) + np.asarray(position, np.int64)
    inside = (cells >= 0).all(axis=1) & (cells < M).all(axis=1)
    return cells[inside]


def sense_and_update(
    K: KnowledgeState, positions, grid: GridMap, zeta: float, agents=None
) -> list[KnowledgeDelta]:
    """Reveal the ground truth within ``zeta`` of each sensing drone.

    Mutates ``K`` and returns one delta per sensing drone holding the cells that
    were new to ``K`` at the moment that drone sensed.
    """
    positions = np.asarray(positions, np.int64)
    agents = range(len(positions)) if agents is None else agents
    deltas = []
    for u in agents:
        cells = fov_cells(positions[u], zeta, grid.M)
        fresh = cells[~K.explored[cells[:, 0], cells[:, 1]]]
        phi = grid.phi[fresh[:, 0], fresh[:, 1]]
        omega = grid.omega[fresh[:, 0], fresh[:, 1]]
        K._fill(fresh, phi, omega)
        K.see_position(u, positions[u])
        deltas.append(KnowledgeDelta(u, tuple(int(v) for v in positions[u]), fresh, phi, omega))
    return deltas


def merge_broadcasts(local: KnowledgeState, received) -> KnowledgeState:
    """Fold received deltas into ``local`` in place (idempotent, order-free)."""
    for d in received:
        if len(d.cells):
            local._fill(d.cells, d.phi, d.omega)
        local.see_position(d.sender, d.position)
    return local


@dataclass
class Observation:
    window_origin: tuple[int, int]
    channels: np.ndarray  # (3, F, F): self, others, phi_hat - rho * omega_hat


def window_origin(position, F: int, M: int) -> tuple[int, int]:
    """Lower-left corner of the ``F x F`` window around ``position``, clamped to the map.

    The drone sits at window index ``F // 2`` before clamping.
    """
    if F > M:
        raise ValueError(f"window F={F} exceeds map M={M}")
    x, y = (int(v) for v in position)
    return (min(max(x - F // 2, 0), M - F), min(max(y - F // 2, 0), M - F))


def build_observation(K: KnowledgeState, positions, u: int, F: int, rho: float = 0.2, dtype=np.float32) -> Observation:
    positions = np.asarray(positions, np.int64)
    ox, oy = window_origin(positions[u], F, K.M)
    obs = np.zeros((3, F, F), dtype)
    obs[0, positions[u, 0] - ox, positions[u, 1] - oy] = 1.0
    for v, (px, py) in enumerate(K.known_positions):
        if v == u or px == UNKNOWN:
            continue
        if ox <= px < ox + F and oy <= py < oy + F:
            obs[1, px - ox, py - oy] = 1.0
    obs[2] = K.phi_hat[ox : ox + F, oy : oy + F] - rho * K.omega_hat[ox : ox + F, oy : oy + F]
    return Observation((ox, oy), obs)


def observation_record(episode: int, step: int, agent: int, obs: Observation) -> str:
    """One whitespace-delimited text line: episode, step, agent, then 3*F*F values."""
    vals = " ".join(repr(float(v)) for v in obs.channels.ravel())
    return f"{episode} {step} {agent} {vals}"


def parse_observation_record(line: str, F: int) -> tuple[int, int, int, np.ndarray]:
    parts = line.split()
    if len(parts) != 3 + 3 * F * F:
        raise ValueError(f"expected {3 + 3 * F * F} fields, got {len(parts)}")
    values = np.array([float(p) for p in parts[3:]]).reshape(3, F, F)
    return int(parts[0]), int(parts[1]), int(parts[2]), values
