"""Grid world: map generation and swarm dynamics.

Coordinates are ``(x, y)`` integer pairs and every ``M x M`` field is indexed
as ``field[x, y]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

ACTIONS = np.array([(0, 0), (0, 1), (1, 0), (0, -1), (-1, 0)], dtype=np.int64)
N_ACTIONS = len(ACTIONS)
STAY = 0

VALUE_CUTOFF = 0.01
RETRY_BUDGET = 1000


class GenerationError(RuntimeError):
    """Map parameters leave no admissible placement."""


@dataclass(frozen=True)
class Obstacle:
    lower_left: tuple[int, int]
    dims: tuple[int, int]

    @property
    def upper_right(self) -> tuple[int, int]:
        return (self.lower_left[0] + self.dims[0] - 1, self.lower_left[1] + self.dims[1] - 1)

    def cells(self) -> list[tuple[int, int]]:
        (lx, ly), (hx, hy) = self.lower_left, self.dims
        return [(x, y) for x in range(lx, lx + hx) for y in range(ly, ly + hy)]

    def distance(self, other: "Obstacle") -> float:
        """Minimum Euclidean distance between member cells."""
        (ax0, ay0), (ax1, ay1) = self.lower_left, self.upper_right
        (bx0, by0), (bx1, by1) = other.lower_left, other.upper_right
        gx = max(0, ax0 - bx1, bx0 - ax1)
        gy = max(0, ay0 - by1, by0 - ay1)
        return float(np.hypot(gx, gy))


@dataclass
class GridMap:
    M: int
    targets: np.ndarray  # (K, 2) int
    phi: np.ndarray  # (M, M) float
    omega: np.ndarray  # (M, M) uint8
    obstacles: list[Obstacle] = field(default_factory=list)
    sigma2: float = 1.0
    eta: float = 0.0
    seed: int | None = None
    inverse_covariance: bool = False

    @property
    def K(self) -> int:
        return len(self.targets)

    def inside(self, x: int, y: int) -> bool:
        return 0 <= x < self.M and 0 <= y < self.M

    def is_target(self, x: int, y: int) -> bool:
        return bool(np.any((self.targets[:, 0] == x) & (self.targets[:, 1] == y)))

    def coverage(self) -> float:
        return float(self.omega.sum()) / self.M**2

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GridMap):
            return NotImplemented
        return (
            self.M == other.M
            and np.array_equal(self.targets, other.targets)
            and np.array_equal(self.phi, other.phi)
            and np.array_equal(self.omega, other.omega)
            and self.obstacles == other.obstacles
            and self.sigma2 == other.sigma2
            and self.eta == other.eta
            and self.seed == other.seed
            and self.inverse_covariance == other.inverse_covariance
        )


@dataclass
class SwarmState:
    positions: np.ndarray  # (U, 2) int
    step_index: int = 0

    @property
    def U(self) -> int:
        return len(self.positions)

    def copy(self) -> "SwarmState":
        return SwarmState(self.positions.copy(), self.step_index)


# ---------------------------------------------------------------------------
# value field
# ---------------------------------------------------------------------------


def _gaussian_exponent(d2, sigma2: float, inverse: bool):
    # literal form multiplies by Sigma; the inverse form divides
    return -0.5 * (d2 / sigma2 if inverse else d2 * sigma2)


def compute_cell_value(m, targets, sigma2: float = 1.0, inverse_covariance: bool = False) -> float:
    targets = np.asarray(targets, dtype=float).reshape(-1, 2)
    if len(targets) == 0:
        raise ValueError("cell value needs at least one target")
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    d2 = ((targets - np.asarray(m, dtype=float)) ** 2).sum(axis=1)
    v = float(np.exp(_gaussian_exponent(d2, sigma2, inverse_covariance)).max())
    return 0.0 if v < VALUE_CUTOFF else v


def value_field(M: int, targets, sigma2: float = 1.0, inverse_covariance: bool = False) -> np.ndarray:
    """Vectorised :func:`compute_cell_value` over the whole grid."""
    targets = np.asarray(targets, dtype=float).reshape(-1, 2)
    if len(targets) == 0:
        raise ValueError("cell value needs at least one target")
    xs, ys = np.meshgrid(np.arange(M), np.arange(M), indexing="ij")
    d2 = (xs[..., None] - targets[:, 0]) ** 2 + (ys[..., None] - targets[:, 1]) ** 2
    phi = np.exp(_gaussian_exponent(d2, sigma2, inverse_covariance)).max(axis=-1)
    phi[phi < VALUE_CUTOFF] = 0.0
    return phi


# ---------------------------------------------------------------------------
# target placement
# ---------------------------------------------------------------------------


def _grid_coords(M: int) -> np.ndarray:
    xs, ys = np.meshgrid(np.arange(M), np.arange(M), indexing="ij")
    return np.stack([xs.ravel(), ys.ravel()], axis=1)


def _sample_weighted(coords: np.ndarray, weights: np.ndarray, rng: np.random.Generator):
    cdf = np.cumsum(weights)
    total = cdf[-1]
    i = int(np.searchsorted(cdf, rng.random() * total, side="right"))
    return coords[min(i, len(coords) - 1)]


def target_mass(mode: str, candidates: np.ndarray, first: np.ndarray) -> np.ndarray:
    """Unnormalised placement mass of each candidate cell given the first target."""
    dist = np.hypot(*(candidates - first).T)
    if mode == "sparse":
        return dist
    if mode == "cluster":
        return 1.0 / (1.0 + dist)
    raise ValueError(f"unknown target mode {mode!r}")


def _place_group(mode, K, placed, allowed, d_sparse, rng):
    coords = _grid_coords(allowed.shape[0])
    free = allowed.ravel().astype(bool)
    min_dist = d_sparse if mode == "sparse" else 1.0

    def admissible(existing):
        ok = free.copy()
        for z in existing:
            ok &= np.hypot(*(coords - z).T) > min_dist
        return ok

    # the first target of a group is uniform over the admissible grid
    ok = admissible(placed)
    if not ok.any():
        return None
    group = [coords[rng.choice(np.flatnonzero(ok))]]
    for _ in range(1, K):
        ok = admissible(placed + group)
        cand = coords[ok]
        if len(cand) == 0:
            return None
        w = target_mass(mode, cand, group[0])
        if w.sum() <= 0:
            return None
        group.append(_sample_weighted(cand, w, rng))
    return group


def place_targets(
    mode: str,
    K: int,
    M: int,
    d_sparse: float = 8.0,
    rng: np.random.Generator | None = None,
    clusters: int = 1,
    allowed: np.ndarray | None = None,
) -> np.ndarray:
    """Place ``K`` targets, resampling from scratch when the admissible set empties.

    ``clusters > 1`` repeats the placement once per group with ``K // clusters``
    targets each; distance constraints apply across groups too. ``allowed`` is an
    optional boolean mask of cells where targets may sit.
    """
    if K < 1:
        raise ValueError("need at least one target")
    if mode not in ("sparse", "cluster"):
        raise ValueError(f"unknown target mode {mode!r}")
    if clusters < 1 or K % clusters:
        raise ValueError("K must be a positive multiple of the cluster count")
    rng = rng if rng is not None else np.random.default_rng()
    allowed = np.ones((M, M), bool) if allowed is None else np.asarray(allowed, bool)
    per_group = K // clusters
    for _ in range(RETRY_BUDGET):
        placed: list[np.ndarray] = []
        for _ in range(clusters):
            group = _place_group(mode, per_group, placed, allowed, d_sparse, rng)
            if group is None:
                break
            placed.extend(group)
        else:
            return np.array(placed, dtype=np.int64)
    raise GenerationError(f"could not place {K} {mode} targets on a {M}x{M} grid")


# ---------------------------------------------------------------------------
# obstacle placement
# ---------------------------------------------------------------------------


def _target_exclusion(M: int, targets) -> np.ndarray:
    """Cells at Euclidean distance <= 1 from a target."""
    blocked = np.zeros((M, M), bool)
    for x, y in np.asarray(targets).reshape(-1, 2):
        for dx, dy in ACTIONS:
            if 0 <= x + dx < M and 0 <= y + dy < M:
                blocked[x + dx, y + dy] = True
    return blocked


def _dilate(mask: np.ndarray) -> np.ndarray:
    """Chebyshev dilation by one cell: the cells at Euclidean distance < 2."""
    out = mask.copy()
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    step = out.copy()
    out[:, 1:] |= step[:, :-1]
    out[:, :-1] |= step[:, 1:]
    return out


def admissible_corners(blocked: np.ndarray, dims: tuple[int, int]) -> np.ndarray:
    """Lower-left corners whose ``dims`` rectangle fits the map and avoids ``blocked``."""
    M = blocked.shape[0]
    hx, hy = dims
    if hx > M or hy > M:
        return np.empty((0, 2), dtype=np.int64)
    s = np.zeros((M + 1, M + 1), dtype=np.int64)
    s[1:, 1:] = blocked.astype(np.int64).cumsum(0).cumsum(1)
    lx = np.arange(M - hx + 1)[:, None]
    ly = np.arange(M - hy + 1)[None, :]
    count = s[lx + hx, ly + hy] - s[lx, ly + hy] - s[lx + hx, ly] + s[lx, ly]
    return np.argwhere(count == 0)


def place_obstacles(
    eta: float,
    h_min: int,
    h_max: int,
    targets,
    M: int,
    rng: np.random.Generator | None = None,
) -> tuple[list[Obstacle], bool]:
    """Add rectangles until coverage reaches ``eta * M**2``.

    Returns the obstacles and whether the coverage goal was reached; when no
    valid placement remains the shorter list is returned with ``False``.
    """
    if not 0 <= eta < 1:
        raise ValueError("eta must lie in [0, 1)")
    if h_min > h_max or h_min < 1:
        raise ValueError("need 1 <= h_min <= h_max")
    rng = rng if rng is not None else np.random.default_rng()
    obstacles: list[Obstacle] = []
    if eta == 0:
        return obstacles, True
    sizes = np.arange(h_min, h_max + 1)
    target_block = _target_exclusion(M, targets)
    omega = np.zeros((M, M), bool)
    goal = eta * M * M
    while omega.sum() < goal:
        blocked = target_block | _dilate(omega)
        placed = None
        dead: set[tuple[int, int]] = set()
        for _ in range(RETRY_BUDGET):
            dims = (int(rng.choice(sizes)), int(rng.choice(sizes)))
            if dims in dead:
                continue
            corners = admissible_corners(blocked, dims)
            if len(corners):
                lx, ly = corners[rng.integers(len(corners))]
                placed = Obstacle((int(lx), int(ly)), dims)
                break
            dead.add(dims)
            if len(dead) == len(sizes) ** 2:
                break
        if placed is None:
            log.warning("obstacle coverage stopped at %.3f (goal %.3f)", omega.sum() / M**2, eta)
            return obstacles, False
        obstacles.append(placed)
        (lx, ly), (hx, hy) = placed.lower_left, placed.dims
        omega[lx : lx + hx, ly : ly + hy] = True
    return obstacles, True


def obstacle_field(M: int, obstacles) -> np.ndarray:
    omega = np.zeros((M, M), np.uint8)
    for ob in obstacles:
        (lx, ly), (hx, hy) = ob.lower_left, ob.dims
        omega[lx : lx + hx, ly : ly + hy] = 1
    return omega


def generate_map(
    M: int,
    K: int,
    mode: str,
    rng: np.random.Generator,
    sigma2: float = 1.0,
    d_sparse: float = 8.0,
    eta: float = 0.0,
    h_min: int = 2,
    h_max: int = 4,
    clusters: int = 1,
    omega: np.ndarray | None = None,
    inverse_covariance: bool = False,
    seed: int | None = None,
) -> GridMap:
    """Draw targets, value field, and obstacles.

    With a fixed ``omega`` (e.g. an ingested height map) targets are restricted
    to free cells and no synthetic obstacles are added.
    """
    if omega is not None:
        omega = np.asarray(omega, np.uint8)
        targets = place_targets(mode, K, M, d_sparse, rng, clusters, allowed=omega == 0)
        obstacles: list[Obstacle] = []
    else:
        targets = place_targets(mode, K, M, d_sparse, rng, clusters)
        obstacles, complete = place_obstacles(eta, h_min, h_max, targets, M, rng)
        if not complete:
            log.warning("map generated with fewer obstacles than requested")
        omega = obstacle_field(M, obstacles)
    phi = value_field(M, targets, sigma2, inverse_covariance)
    return GridMap(M, targets, phi, omega, obstacles, sigma2, eta, seed, inverse_covariance)


def place_drones(grid: GridMap, U: int, rng: np.random.Generator) -> SwarmState:
    """Distinct starting cells, uniform over free non-target cells."""
    free = grid.omega == 0
    free[grid.targets[:, 0], grid.targets[:, 1]] = False
    cells = np.argwhere(free)
    if len(cells) < U:
        raise GenerationError("not enough free cells for the swarm")
    idx = rng.choice(len(cells), size=U, replace=False)
    return SwarmState(cells[idx].astype(np.int64), 0)


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------


def _offset(a) -> np.ndarray:
    a = np.asarray(a)
    return ACTIONS[int(a)] if a.ndim == 0 else a.astype(np.int64)


def is_valid_move(x, a, grid: GridMap) -> int:
    """1 if ``x + a`` stays in the map and off obstacles. ``a`` is an index or offset."""
    nx, ny = np.asarray(x) + _offset(a)
    return int(grid.inside(nx, ny) and grid.omega[nx, ny] == 0)


def resolve_moves(positions: np.ndarray, actions, grid: GridMap) -> tuple[np.ndarray, np.ndarray]:
    """Post-move positions and the per-drone validity flags."""
    positions = np.asarray(positions, np.int64)
    offsets = ACTIONS[np.asarray(actions, np.int64)]
    dest = positions + offsets
    M = grid.M
    inside = (dest >= 0).all(axis=1) & (dest < M).all(axis=1)
    valid = inside.copy()
    valid[inside] = grid.omega[dest[inside, 0], dest[inside, 1]] == 0
    new = np.where(valid[:, None], dest, positions)
    return new, valid.astype(np.int64)


def step(X: SwarmState, actions, grid: GridMap) -> SwarmState:
    new, _ = resolve_moves(X.positions, actions, grid)
    return SwarmState(new, X.step_index + 1)


def collision_flags(new_positions: np.ndarray) -> np.ndarray:
    """Per drone: 1 when another drone ends the step on the same cell."""
    p = np.asarray(new_positions)
    same = (p[:, None, :] == p[None, :, :]).all(axis=2)
    np.fill_diagonal(same, False)
    return same.any(axis=1).astype(np.int64)


def collision_indicator(X: SwarmState, actions, u: int, grid: GridMap) -> int:
    new, _ = resolve_moves(X.positions, actions, grid)
    return int(collision_flags(new)[u])


def on_target_flags(positions: np.ndarray, grid: GridMap) -> np.ndarray:
    p = np.asarray(positions)
    hit = (p[:, None, :] == grid.targets[None, :, :]).all(axis=2)
    return hit.any(axis=1).astype(np.int64)


def rewards(X: SwarmState, actions, grid: GridMap, theta: float = 1.0, psi: float = 0.8) -> np.ndarray:
    """Reward of every drone for one joint action."""
    new, valid = resolve_moves(X.positions, actions, grid)
    chi = collision_flags(new)
    return -theta * (1 - valid) - psi * chi + (1 - chi) * on_target_flags(new, grid)


def compute_reward(X: SwarmState, actions, u: int, grid: GridMap, theta: float = 1.0, psi: float = 0.8) -> float:
    return float(rewards(X, actions, grid, theta, psi)[u])


# ---------------------------------------------------------------------------
# scenario files
# ---------------------------------------------------------------------------
#
#   # comments and blank lines are ignored
#   M K U eta seed                 header; seed may be "-"
#   sigma2 <float> [inverse]       optional, default 1.0
#   target <x> <y>                 K lines
#   obstacle <lx> <ly> <hx> <hy>   one line per rectangle
#   omega                          optional; followed by M rows of M '0'/'1'
#                                  characters, row i holds omega[i, :]
#
# When an omega block is present it is authoritative; otherwise omega is
# rebuilt from the obstacle records.


def write_map(path, grid: GridMap, U: int) -> None:
    lines = [
        "# uavswarm scenario map",
        f"{grid.M} {grid.K} {U} {grid.eta!r} {'-' if grid.seed is None else grid.seed}",
        f"sigma2 {grid.sigma2!r}" + (" inverse" if grid.inverse_covariance else ""),
    ]
    lines += [f"target {x} {y}" for x, y in grid.targets]
    lines += [f"obstacle {o.lower_left[0]} {o.lower_left[1]} {o.dims[0]} {o.dims[1]}" for o in grid.obstacles]
    if not np.array_equal(grid.omega, obstacle_field(grid.M, grid.obstacles)):
        lines.append("omega")
        lines += ["".join("1" if v else "0" for v in row) for row in grid.omega]
    Path(path).write_text("\n".join(lines) + "\n")


def read_map(path) -> tuple[GridMap, int]:
    """Parse a scenario map file; returns the map and the swarm size."""
    raw = [ln.strip() for ln in Path(path).read_text().splitlines()]
    rows = [ln for ln in raw if ln and not ln.startswith("#")]
    if not rows:
        raise ValueError(f"{path}: empty scenario file")
    try:
        m, k, u, eta, seed = rows[0].split()
        M, K, U = int(m), int(k), int(u)
        header = (float(eta), None if seed == "-" else int(seed))
    except ValueError as exc:
        raise ValueError(f"{path}: bad header {rows[0]!r}") from exc
    sigma2, inverse = 1.0, False
    targets, obstacles, omega = [], [], None
    i = 1
    while i < len(rows):
        parts = rows[i].split()
        tag = parts[0]
        if tag == "sigma2":
            sigma2 = float(parts[1])
            inverse = len(parts) > 2 and parts[2] == "inverse"
        elif tag == "target":
            targets.append((int(parts[1]), int(parts[2])))
        elif tag == "obstacle":
            lx, ly, hx, hy = map(int, parts[1:5])
            obstacles.append(Obstacle((lx, ly), (hx, hy)))
        elif tag == "omega":
            block = rows[i + 1 : i + 1 + M]
            if len(block) != M or any(len(r) != M or set(r) - {"0", "1"} for r in block):
                raise ValueError(f"{path}: omega block must be {M} rows of {M} 0/1 characters")
            omega = np.array([[c == "1" for c in r] for r in block], dtype=np.uint8)
            i += M
        else:
            raise ValueError(f"{path}: unknown record {rows[i]!r}")
        i += 1
    if len(targets) != K:
        raise ValueError(f"{path}: header says {K} targets, found {len(targets)}")
    targets_arr = np.array(targets, dtype=np.int64).reshape(-1, 2)
    if omega is None:
        omega = obstacle_field(M, obstacles)
    phi = value_field(M, targets_arr, sigma2, inverse)
    return GridMap(M, targets_arr, phi, omega, obstacles, sigma2, header[0], header[1], inverse), U
