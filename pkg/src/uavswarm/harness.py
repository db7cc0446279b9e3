"""Monte Carlo evaluation of swarm policies and result export."""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .comms import link_distance_m, packet_loss_probability
from .ddql import greedy, softmax_policy
from .gridenv import N_ACTIONS, STAY
from .lookahead import LookaheadConfig, la_select_action
from .neuralnet import QNetwork, load_checkpoint
from .scenario import ConfigError, Scenario, episode_streams, make_world
from .swarm import SwarmEpisode

# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------


class Policy:
    name = "policy"

    def reset(self, episode: SwarmEpisode, rng: np.random.Generator) -> None:
        pass

    def act(self, episode: SwarmEpisode, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError


class StayPolicy(Policy):
    name = "stay"

    def act(self, episode, rng):
        return np.full(episode.sc.U, STAY)


class RandomPolicy(Policy):
    name = "random"

    def act(self, episode, rng):
        return rng.integers(N_ACTIONS, size=episode.sc.U)


class DDQLPolicy(Policy):
    """Shared Q-network; greedy when ``tau`` is None, else softmax at temperature ``tau``."""

    def __init__(self, net: QNetwork, tau: float | None = None, name: str | None = None):
        self.net = net
        self.tau = tau
        self.name = name or ("ddql" if tau is None else f"ddql-soft({tau:g})")

    def act(self, episode, rng):
        q = self.net.forward(episode.observations(self.net.dtype))
        if self.tau is None:
            return np.array([greedy(qu, rng) for qu in q])
        return np.array([softmax_policy(qu, self.tau, rng) for qu in q])


class LookaheadPolicy(Policy):
    """LA(n). Claims are shared instantly unless ``claims_via_channel`` is set,
    in which case each drone learns of a claim only when the claimant's
    broadcast reaches it."""

    def __init__(self, horizon: int = 4, claims_via_channel: bool = False, consume_values: bool = True):
        self.horizon = horizon
        self.claims_via_channel = claims_via_channel
        self.consume_values = consume_values
        self.name = f"la({horizon})"

    def reset(self, episode, rng):
        shared = LookaheadConfig(self.horizon, self.consume_values)
        if self.claims_via_channel and episode.channel.mode != "perfect":
            self.views = [LookaheadConfig(self.horizon, self.consume_values) for _ in range(episode.sc.U)]
        else:
            self.views = [shared] * episode.sc.U

    def act(self, episode, rng):
        pos = episode.positions
        actions = np.array([
            la_select_action(u, pos, episode.knowledge[u], self.views[u], rng) for u in range(episode.sc.U)
        ])
        if self.views[0] is not self.views[-1]:
            self._spread_claims(episode, rng)
        return actions

    def _spread_claims(self, episode, rng):
        cfg = episode.channel
        for u, view in enumerate(self.views):
            for cell, owner in list(view.claimed_targets.items()):
                if owner != u:
                    continue
                for v, other in enumerate(self.views):
                    if v == u or cell in other.claimed_targets or cfg.mode == "none":
                        continue
                    d = link_distance_m(episode.positions[u], episode.positions[v], cfg)
                    if rng.random() >= packet_loss_probability(d, cfg):
                        other.claimed_targets[cell] = u


def parse_policy(spec: str, F: int | None = None, rho: float | None = None) -> Policy:
    """``la:<n>``, ``ddql:<ckpt>``, ``ddql-soft:<ckpt>[:<tau>]``, ``stay``, ``random``."""
    kind, _, rest = spec.partition(":")
    if kind == "la":
        return LookaheadPolicy(int(rest or 4))
    if kind == "stay":
        return StayPolicy()
    if kind == "random":
        return RandomPolicy()
    if kind in ("ddql", "ddql-soft"):
        tau = None
        path = rest
        if kind == "ddql-soft":
            tau = 0.1
            head, sep, tail = rest.rpartition(":")
            if sep:
                try:
                    tau = float(tail)
                    path = head
                except ValueError:
                    pass
        ck = load_checkpoint(path, F=F, rho=rho)
        return DDQLPolicy(ck.net, tau)
    raise ConfigError(f"unknown policy {spec!r}")


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class EpisodeResult:
    positions: np.ndarray  # (T+1, U, 2)
    rewards: np.ndarray  # (T, U)
    occupied: np.ndarray  # (T+1,) distinct targets with a drone on them
    completion: float  # first successful step, or inf
    decision_seconds: float = 0.0


def run_episode(policy: Policy, sc: Scenario, seed: int, index: int, omega=None) -> EpisodeResult:
    world_rng, chan_rng, pol_rng = episode_streams(seed, index)
    grid, start = make_world(sc, world_rng, omega)
    ep = SwarmEpisode(sc, grid, start, chan_rng)
    policy.reset(ep, pol_rng)
    positions = [ep.positions.copy()]
    rewards, occupied = [], [ep.targets_occupied()]
    completion = 0.0 if ep.success() else math.inf
    spent = 0.0
    t = 0
    while t < sc.steps and completion == math.inf:
        t0 = time.perf_counter()
        actions = policy.act(ep, pol_rng)
        spent += time.perf_counter() - t0
        rewards.append(ep.step(actions))
        t += 1
        positions.append(ep.positions.copy())
        occupied.append(ep.targets_occupied())
        if ep.success():
            completion = float(t)
    return EpisodeResult(
        np.array(positions), np.array(rewards).reshape(-1, sc.U), np.array(occupied), completion,
        spent / max(t * sc.U, 1),
    )


@dataclass
class MetricsReport:
    policy: str
    horizon: int
    completion: np.ndarray  # (N,) completion step or inf
    occupied: np.ndarray  # (N, horizon+1), padded with the final count after completion
    decision_seconds: np.ndarray  # (N,) mean seconds per single-drone decision
    U: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def episodes(self) -> int:
        return len(self.completion)

    def success_at(self, h: int) -> float:
        return float(np.mean(self.completion <= h)) if self.episodes else 0.0

    @property
    def success_probability(self) -> float:
        return self.success_at(self.horizon)

    def cdf(self) -> np.ndarray:
        """P(completion <= t) for t = 0..horizon."""
        return np.array([self.success_at(t) for t in range(self.horizon + 1)])

    def confidence_interval(self, h: int | None = None, z: float = 1.96) -> tuple[float, float]:
        """Wilson score interval for the success probability at ``h``."""
        return wilson_interval(self.success_at(self.horizon if h is None else h), self.episodes, z)

    def occupied_distribution(self, h: int) -> np.ndarray:
        """Empirical distribution of the number of occupied targets after ``h`` steps."""
        counts = self.occupied[:, min(h, self.horizon)]
        top = max(int(self.occupied.max(initial=0)), self.U)
        return np.bincount(counts, minlength=top + 1) / max(len(counts), 1)

    def timing(self) -> dict[str, float]:
        d = self.decision_seconds
        return {"mean": float(d.mean()), "median": float(np.median(d)), "max": float(d.max())} if len(d) else {}

    def summary(self) -> dict:
        lo, hi = self.confidence_interval()
        return {
            "policy": self.policy, "episodes": self.episodes, "horizon": self.horizon,
            "success_probability": self.success_probability, "ci_low": lo, "ci_high": hi,
            "mean_decision_seconds": self.timing().get("mean", float("nan")),
        }

    def to_dict(self) -> dict:
        return {
            "policy": self.policy, "horizon": self.horizon, "U": self.U,
            "completion": [None if math.isinf(c) else c for c in self.completion.tolist()],
            "occupied": self.occupied.tolist(),
            "decision_seconds": self.decision_seconds.tolist(),
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        comp = np.array([math.inf if c is None else c for c in d["completion"]], dtype=float)
        return cls(d["policy"], d["horizon"], comp, np.array(d["occupied"], dtype=np.int64).reshape(len(comp), -1),
                   np.array(d["decision_seconds"], dtype=float), d.get("U", 0), d.get("extra", {}))


def wilson_interval(p: float, n: int, z: float = 1.96) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def _run_chunk(args):
    policy, sc, seed, indices = args
    omega = sc.fixed_omega()
    return [run_episode(policy, sc, seed, i, omega) for i in indices]


def evaluate(policy: Policy, sc: Scenario, episodes: int, seed: int | None = None, workers: int = 1) -> MetricsReport:
    """Run ``episodes`` independent episodes of ``sc.steps`` steps.

    Episode ``i`` uses streams derived from ``(seed, i)`` only, so results are
    the same whatever the worker count.
    """
    seed = sc.seed if seed is None else seed
    idx = list(range(episodes))
    if workers > 1 and episodes > 1:
        chunks = [idx[k::workers] for k in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_run_chunk, [(policy, sc, seed, c) for c in chunks]))
        by_index = {i: r for c, part in zip(chunks, parts) for i, r in zip(c, part)}
        results = [by_index[i] for i in idx]
    else:
        results = _run_chunk((policy, sc, seed, idx))
    H = sc.steps
    occ = np.zeros((episodes, H + 1), np.int64)
    for n, r in enumerate(results):
        occ[n, : len(r.occupied)] = r.occupied
        occ[n, len(r.occupied) :] = r.occupied[-1]
    return MetricsReport(
        policy.name, H,
        np.array([r.completion for r in results], dtype=float), occ,
        np.array([r.decision_seconds for r in results]), sc.U,
    )


def compare(policies: list[Policy], sc: Scenario, episodes: int, seed: int | None = None, workers: int = 1) -> dict[str, MetricsReport]:
    """Evaluate several policies on identical per-episode worlds."""
    out: dict[str, MetricsReport] = {}
    for p in policies:
        name = p.name
        k = 2
        while name in out:
            name = f"{p.name}#{k}"
            k += 1
        rep = evaluate(p, sc, episodes, seed, workers)
        rep.policy = name
        out[name] = rep
    return out


def timing_ratio(reports: dict[str, MetricsReport], slow: str, fast: str) -> float:
    return reports[slow].timing()["mean"] / reports[fast].timing()["mean"]


# ---------------------------------------------------------------------------
# persistence and export
# ---------------------------------------------------------------------------


def save_reports(path, reports: dict[str, MetricsReport], manifest: dict | None = None) -> None:
    payload = {"manifest": manifest or {}, "reports": {k: r.to_dict() for k, r in reports.items()}}
    Path(path).write_text(json.dumps(payload))


def load_reports(path) -> tuple[dict[str, MetricsReport], dict]:
    payload = json.loads(Path(path).read_text())
    return {k: MetricsReport.from_dict(v) for k, v in payload["reports"].items()}, payload.get("manifest", {})


def export_tables(reports: dict[str, MetricsReport], out_dir) -> list[Path]:
    """Write cdf.tsv, occupied.tsv and summary.tsv for offline plotting."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cdf = ["policy\tstep\tcdf"]
    occ = ["policy\tstep\toccupied\tprobability"]
    summ = ["policy\tepisodes\thorizon\tsuccess_probability\tci_low\tci_high\tmean_decision_seconds"]
    for name, r in reports.items():
        cdf += [f"{name}\t{t}\t{v:.6f}" for t, v in enumerate(r.cdf())]
        for t in range(r.horizon + 1):
            occ += [f"{name}\t{t}\t{k}\t{p:.6f}" for k, p in enumerate(r.occupied_distribution(t))]
        s = r.summary()
        summ.append("\t".join(str(s[k]) for k in (
            "policy", "episodes", "horizon", "success_probability", "ci_low", "ci_high", "mean_decision_seconds")))
    paths = []
    for fname, rows in (("cdf.tsv", cdf), ("occupied.tsv", occ), ("summary.tsv", summ)):
        p = out_dir / fname
        p.write_text("\n".join(rows) + "\n")
        paths.append(p)
    return paths


def read_cdf_table(path) -> dict[str, np.ndarray]:
    rows = Path(path).read_text().splitlines()[1:]
    out: dict[str, list] = {}
    for ln in rows:
        name, step, v = ln.split("\t")
        out.setdefault(name, []).append((int(step), float(v)))
    return {k: np.array([v for _, v in sorted(pts)]) for k, pts in out.items()}


# ---------------------------------------------------------------------------
# height maps
# ---------------------------------------------------------------------------


def parse_height_grid(path) -> np.ndarray:
    """Delimited text grid of heights in meters (commas, tabs or spaces)."""
    rows = []
    for ln in Path(path).read_text().splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        rows.append([float(v) for v in ln.replace(",", " ").split()])
    return _check_grid(rows, path)


def _check_grid(rows, where) -> np.ndarray:
    if not rows or not rows[0]:
        raise ConfigError(f"{where}: empty grid")
    if len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{where}: grid is not rectangular")
    return np.array(rows)


def ingest_height_map(
    heights,
    cell_side_m: float = 10.0,
    threshold_m: float = 40.0,
    input_resolution_m: float | None = None,
    min_fraction: float = 0.5,
) -> tuple[np.ndarray, float]:
    """Turn a height grid into an obstacle grid.

    With ``input_resolution_m`` finer than ``cell_side_m`` each map cell pools a
    block of samples and is an obstacle when at least ``min_fraction`` of them
    reach ``threshold_m``. Returns ``(omega, coverage)``.
    """
    h = np.asarray(heights, dtype=float)
    if h.ndim != 2 or h.size == 0:
        raise ConfigError("height grid must be a non-empty 2-D array")
    if threshold_m <= 0:
        raise ConfigError("threshold must be positive")
    res = cell_side_m if input_resolution_m is None else input_resolution_m
    factor = cell_side_m / res
    if abs(factor - round(factor)) > 1e-9 or factor < 1:
        raise ConfigError("cell side must be an integer multiple of the input resolution")
    f = int(round(factor))
    if h.shape[0] % f or h.shape[1] % f:
        raise ConfigError(f"grid {h.shape} does not tile into {f}x{f} blocks")
    above = (h >= threshold_m).reshape(h.shape[0] // f, f, h.shape[1] // f, f).mean(axis=(1, 3))
    omega = (above >= min_fraction - 1e-12).astype(np.uint8)
    return omega, float(omega.mean())


def save_omega_grid(path, omega: np.ndarray) -> None:
    Path(path).write_text("\n".join("".join("1" if v else "0" for v in row) for row in omega) + "\n")


def load_omega_grid(path) -> np.ndarray:
    rows = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if rows and all(set(r) <= {"0", "1"} for r in rows):
        grid = [[c == "1" for c in r] for r in rows]
    else:
        grid = [[float(v) != 0 for v in r.replace(",", " ").split()] for r in rows]
    return _check_grid(grid, path).astype(np.uint8)
