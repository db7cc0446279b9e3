"""Distributed double deep Q-learning with a shared network and replay memory."""

from __future__ import annotations

import json
import logging
import math
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .gridenv import N_ACTIONS
from .neuralnet import Checkpoint, OptimizerState, QNetwork, apply_update, save_checkpoint
from .scenario import ConfigError, Scenario, make_world
from .swarm import SwarmEpisode

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# action selection
# ---------------------------------------------------------------------------


def softmax_probs(q, T: float) -> np.ndarray:
    if T <= 0:
        raise ValueError("temperature must be positive")
    z = np.asarray(q, dtype=np.float64) / T
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_policy(q, T: float, rng: np.random.Generator) -> int:
    p = softmax_probs(q, T)
    return int(min(np.searchsorted(np.cumsum(p), rng.random(), side="right"), len(p) - 1))


def greedy(q, rng: np.random.Generator) -> int:
    q = np.asarray(q)
    best = np.flatnonzero(q == q.max())
    return int(best[0] if len(best) == 1 else rng.choice(best))


def epsilon_greedy(q, epsilon: float, rng: np.random.Generator) -> int:
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must lie in [0, 1]")
    if rng.random() < epsilon:
        return int(rng.integers(len(q)))
    return greedy(q, rng)


@dataclass
class ExplorationSchedule:
    """Exploration parameter annealed over the training steps.

    ``epsilon_greedy`` decays linearly, ``softmax`` decays the temperature
    geometrically; both hit ``end`` exactly on the last training step.
    """

    kind: str = "softmax"
    start: float | None = None
    end: float | None = None
    test_temperature: float = 0.1

    def __post_init__(self):
        if self.kind == "epsilon_greedy":
            self.start = 1.0 if self.start is None else self.start
            self.end = 0.0 if self.end is None else self.end
            if not (0 <= self.end <= self.start <= 1):
                raise ConfigError("epsilon schedule must decrease within [0, 1]")
        elif self.kind == "softmax":
            self.start = 1.0 if self.start is None else self.start
            self.end = 0.05 if self.end is None else self.end
            if not (0 < self.end <= self.start):
                raise ConfigError("temperature schedule must decrease and stay positive")
        else:
            raise ConfigError(f"unknown exploration kind {self.kind!r}")

    def value(self, step: int, total: int) -> float:
        frac = 1.0 if total <= 1 else min(max(step / (total - 1), 0.0), 1.0)
        if self.kind == "epsilon_greedy":
            return self.start + (self.end - self.start) * frac
        return self.start * (self.end / self.start) ** frac

    def select(self, q, step: int, total: int, rng: np.random.Generator) -> int:
        v = self.value(step, total)
        if self.kind == "epsilon_greedy":
            return epsilon_greedy(q, v, rng)
        return softmax_policy(q, v, rng)


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------


@dataclass
class ReplaySample:
    o: np.ndarray
    a: int
    r: float
    o_next: np.ndarray


class ReplayMemory:
    """Ring buffer of transitions, shared by every agent."""

    def __init__(self, capacity: int, obs_shape: tuple[int, ...], dtype=np.float32):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.obs = np.zeros((capacity, *obs_shape), dtype)
        self.next_obs = np.zeros((capacity, *obs_shape), dtype)
        self.actions = np.zeros(capacity, np.int64)
        self.rewards = np.zeros(capacity, np.float32)
        self.size = 0
        self.cursor = 0
        self.pushes = 0

    def __len__(self) -> int:
        return self.size

    def push(self, o, a: int, r: float, o_next) -> None:
        i = self.cursor
        self.obs[i] = o
        self.actions[i] = a
        self.rewards[i] = r
        self.next_obs[i] = o_next
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.pushes += 1

    def __getitem__(self, i: int) -> ReplaySample:
        return ReplaySample(self.obs[i], int(self.actions[i]), float(self.rewards[i]), self.next_obs[i])

    def sample_indices(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        if batch > self.size:
            raise ValueError(f"batch {batch} larger than memory size {self.size}")
        return rng.choice(self.size, size=batch, replace=False)

    def sample(self, batch: int, rng: np.random.Generator):
        idx = self.sample_indices(batch, rng)
        return self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx]


def compute_td_target(sample: ReplaySample, target_net: QNetwork, gamma: float) -> float:
    return float(sample.r + gamma * np.max(target_net.forward(sample.o_next)))


def td_targets(rewards, next_obs, target_net: QNetwork, gamma: float) -> np.ndarray:
    return np.asarray(rewards) + gamma * target_net.forward(next_obs).max(axis=1)


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------


@dataclass
class TrainerConfig:
    gamma: float = 0.9
    episodes: int = 3000
    short_episode: int = 50
    long_episode: int = 150
    warmup_episodes: int = 1000
    batch_size: int = 32
    target_sync: int = 1000
    replay_capacity: int = 100_000
    lr: float = 1e-4
    seed: int = 0
    eval_every: int = 250
    eval_episodes: int = 100

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ConfigError("gamma must lie in [0, 1)")
        if self.target_sync < 1 or self.batch_size < 1:
            raise ConfigError("target_sync and batch_size must be >= 1")
        if min(self.short_episode, self.long_episode) < 1 or self.episodes < 0 or self.warmup_episodes < 0:
            raise ConfigError("episode counts and lengths must be non-negative")

    def episode_length(self, index: int) -> int:
        """Even episodes are short, odd ones long."""
        return self.short_episode if index % 2 == 0 else self.long_episode

    def total_steps(self, episodes: int | None = None) -> int:
        n = self.episodes if episodes is None else episodes
        return sum(self.episode_length(i) for i in range(n))


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    curve: list[dict] = field(default_factory=list)
    replay: ReplayMemory | None = None


WARMUP, TRAIN = 1, 2


def _stream(seed: int, phase: int, episode: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, phase, episode])


class Trainer:
    def __init__(
        self,
        sc: Scenario,
        cfg: TrainerConfig,
        schedule: ExplorationSchedule,
        checkpoint: Checkpoint | None = None,
        replay: ReplayMemory | None = None,
    ):
        if sc.channel.mode != "perfect":
            log.info("training always uses a perfect channel; ignoring mode %r", sc.channel.mode)
            sc = sc.replace(channel=type(sc.channel)(**{**asdict(sc.channel), "mode": "perfect"}))
        self.sc, self.cfg, self.schedule = sc, cfg, schedule
        if checkpoint is None:
            net = QNetwork(sc.F, np.random.default_rng(_stream(cfg.seed, 0, 0)))
            checkpoint = Checkpoint(net, OptimizerState(lr=cfg.lr), sc.rho)
        elif checkpoint.net.F != sc.F or checkpoint.rho != sc.rho:
            from .neuralnet import IncompatibleCheckpointError

            raise IncompatibleCheckpointError(
                f"checkpoint (F={checkpoint.net.F}, rho={checkpoint.rho}) does not fit scenario (F={sc.F}, rho={sc.rho})"
            )
        self.ck = checkpoint
        self.net = checkpoint.net
        self.target = checkpoint.target.copy() if checkpoint.target is not None else self.net.copy()
        self.opt = checkpoint.opt
        self.replay = replay or ReplayMemory(cfg.replay_capacity, (3, sc.F, sc.F))
        self.rng = np.random.default_rng(_stream(cfg.seed, 3, 0))
        self.grad_steps = 0
        self.env_steps = 0
        self.total_env_steps = cfg.total_steps()

    # -- pieces --------------------------------------------------------

    def _episode(self, phase: int, index: int) -> tuple[SwarmEpisode, np.random.Generator]:
        world_rng, chan_rng, pol_rng = (np.random.default_rng(s) for s in _stream(self.cfg.seed, phase, index).spawn(3))
        grid, start = make_world(self.sc, world_rng, self.sc.fixed_omega())
        return SwarmEpisode(self.sc, grid, start, chan_rng), pol_rng

    def warmup(self) -> None:
        """Fill the replay memory with uniform-random episodes."""
        for i in range(self.cfg.warmup_episodes):
            ep, rng = self._episode(WARMUP, i)
            obs = ep.observations()
            for _ in range(self.cfg.episode_length(i)):
                actions = rng.integers(N_ACTIONS, size=self.sc.U)
                r = ep.step(actions)
                nxt = ep.observations()
                for u in range(self.sc.U):
                    self.replay.push(obs[u], actions[u], r[u], nxt[u])
                obs = nxt

    def gradient_step(self) -> float:
        o, a, r, o2 = self.replay.sample(self.cfg.batch_size, self.rng)
        y = td_targets(r, o2, self.target, self.cfg.gamma)
        loss, grads = self.net.loss_and_grads(o, a, y)
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"non-finite loss {loss} at gradient step {self.grad_steps}")
        apply_update(self.net.params, grads, self.opt)
        self.grad_steps += 1
        if self.grad_steps % self.cfg.target_sync == 0:
            self.sync_target()
        return loss

    def sync_target(self) -> None:
        self.target.load_state(self.net.params)

    def run_episode(self, index: int) -> tuple[float, float]:
        """One training episode; returns (mean reward per drone-step, mean loss)."""
        ep, rng = self._episode(TRAIN, index)
        obs = ep.observations()
        total_r, losses = 0.0, []
        for _ in range(self.cfg.episode_length(index)):
            q = self.net.forward(obs)
            actions = np.array([self.schedule.select(q[u], self.env_steps, self.total_env_steps, rng) for u in range(self.sc.U)])
            r = ep.step(actions)
            nxt = ep.observations()
            for u in range(self.sc.U):
                self.replay.push(obs[u], actions[u], r[u], nxt[u])
            if len(self.replay) >= self.cfg.batch_size:
                for _ in range(self.sc.U):
                    losses.append(self.gradient_step())
            total_r += float(r.sum())
            obs = nxt
            self.env_steps += 1
        n = self.cfg.episode_length(index) * self.sc.U
        return total_r / n, float(np.mean(losses)) if losses else float("nan")

    def checkpoint(self, episodes: int) -> Checkpoint:
        return Checkpoint(
            self.net.copy(), _copy_opt(self.opt), self.sc.rho, self.target.copy(),
            self.ck.grad_steps + self.grad_steps, self.ck.episodes + episodes,
        )


def _copy_opt(opt: OptimizerState) -> OptimizerState:
    return OptimizerState(
        opt.lr, opt.beta1, opt.beta2, opt.eps, opt.step,
        {k: v.copy() for k, v in opt.m.items()}, {k: v.copy() for k, v in opt.v.items()},
    )


def _default_evaluator(sc: Scenario, cfg: TrainerConfig, schedule: ExplorationSchedule):
    from .harness import DDQLPolicy, evaluate

    def run(net: QNetwork) -> float:
        policy = DDQLPolicy(net, tau=schedule.test_temperature)
        report = evaluate(policy, sc, cfg.eval_episodes, seed=cfg.seed + 10_007)
        return report.success_probability

    return run


def run_manifest(sc: Scenario, cfg: TrainerConfig, schedule: ExplorationSchedule, **extra) -> dict:
    from . import __version__

    return {
        "package": "uavswarm",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scenario": sc.to_dict(),
        "trainer": asdict(cfg),
        "schedule": asdict(schedule),
        **extra,
    }


def _train_loop(trainer: Trainer, episodes: int, out_dir, evaluator, tag: str) -> TrainResult:
    cfg = trainer.cfg
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    curve: list[dict] = []
    rewards_since, t0 = [], time.time()
    trainer.total_env_steps = cfg.total_steps(episodes)
    if episodes > 0:
        trainer.warmup()
        log.info("%s: replay warmed with %d samples", tag, len(trainer.replay))
    for ep in range(episodes):
        mean_r, loss = trainer.run_episode(ep)
        rewards_since.append(mean_r)
        done = ep + 1
        if evaluator is not None and (done % cfg.eval_every == 0 or done == episodes):
            success = evaluator(trainer.net)
            row = {"episode": done, "success_probability": success, "mean_reward": float(np.mean(rewards_since))}
            curve.append(row)
            rewards_since = []
            log.info("%s: episode %d success %.3f reward %.4f loss %.4g (%.0fs)", tag, done, success, row["mean_reward"], loss, time.time() - t0)
            if out_dir is not None:
                save_checkpoint(out_dir / f"checkpoint_ep{done:05d}.bin", trainer.checkpoint(done))
                write_curve(out_dir / "curve.tsv", curve)
    result = TrainResult(trainer.checkpoint(episodes), curve, trainer.replay)
    if out_dir is not None:
        save_checkpoint(out_dir / "final.bin", result.checkpoint)
        write_curve(out_dir / "curve.tsv", curve)
    return result


def train(
    sc: Scenario,
    cfg: TrainerConfig,
    schedule: ExplorationSchedule,
    out_dir=None,
    evaluator="default",
) -> TrainResult:
    """Train from scratch: replay warm-up, then alternating short/long episodes.

    ``evaluator`` maps the current network to a success probability for the
    training curve; pass ``None`` to skip evaluation.
    """
    if evaluator == "default":
        evaluator = _default_evaluator(sc, cfg, schedule)
    trainer = Trainer(sc, cfg, schedule)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "manifest.json").write_text(json.dumps(run_manifest(sc, cfg, schedule, mode="train"), indent=2))
    return _train_loop(trainer, cfg.episodes, out_dir, evaluator, "train")


def transfer(
    checkpoint: Checkpoint,
    sc: Scenario,
    episodes: int,
    schedule: ExplorationSchedule,
    cfg: TrainerConfig | None = None,
    replay: ReplayMemory | None = None,
    out_dir=None,
    evaluator="default",
) -> TrainResult:
    """Continue training a checkpoint on a new scenario for ``episodes`` episodes.

    The replay is re-warmed unless ``replay`` is passed in; the exploration
    schedule restarts over the new horizon.
    """
    cfg = cfg or TrainerConfig()
    cfg = TrainerConfig(**{**asdict(cfg), "episodes": episodes})
    if evaluator == "default":
        evaluator = _default_evaluator(sc, cfg, schedule)
    if replay is not None:
        cfg = TrainerConfig(**{**asdict(cfg), "warmup_episodes": 0})
    start = Checkpoint(checkpoint.net.copy(), _copy_opt(checkpoint.opt), checkpoint.rho,
                       None if checkpoint.target is None else checkpoint.target.copy(),
                       checkpoint.grad_steps, checkpoint.episodes)
    trainer = Trainer(sc, cfg, schedule, start, replay)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "manifest.json").write_text(
            json.dumps(run_manifest(sc, cfg, schedule, mode="transfer", base_episodes=checkpoint.episodes), indent=2)
        )
    return _train_loop(trainer, episodes, out_dir, evaluator, "transfer")


def write_curve(path, rows: list[dict]) -> None:
    lines = ["episode\tsuccess_probability\tmean_reward"]
    lines += [f"{r['episode']}\t{r['success_probability']:.6f}\t{r['mean_reward']:.6f}" for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def read_curve(path) -> list[dict]:
    rows = Path(path).read_text().splitlines()[1:]
    out = []
    for ln in rows:
        e, s, r = ln.split("\t")
        out.append({"episode": int(e), "success_probability": float(s), "mean_reward": float(r)})
    return out
