"""Desk-scale reproduction protocols.

Each protocol trains (or reloads cached) networks under ``workdir``, runs the
Monte Carlo comparison on common random numbers, and returns a plain dict
with the per-seed numbers and a ``passed`` flag. Training runs are cached as
``<workdir>/<tag>/final.bin`` so an interrupted reproduction resumes.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .comms import ChannelConfig
from .ddql import ExplorationSchedule, TrainerConfig, train, transfer
from .harness import DDQLPolicy, LookaheadPolicy, compare, evaluate
from .neuralnet import Checkpoint, load_checkpoint
from .scenario import Scenario

log = logging.getLogger(__name__)

TEST_SEED = 424_242


@dataclass
class ReproConfig:
    workdir: str = "runs"
    seeds: tuple[int, ...] = (0, 1, 2)
    train_episodes: int = 3000
    transfer_episodes: int = 750
    test_episodes: int = 500
    horizon: int = 40
    transfer_horizon: int = 60
    la_horizon: int = 4
    tau: float = 0.1
    comm_episodes: int = 200
    comm_train_M: int = 24
    comm_M: int = 50
    comm_U: int = 10
    comm_K: int = 16
    comm_clusters: int = 4
    comm_eta: float = 0.1
    comm_steps: int = 100
    workers: int = 1
    trainer: TrainerConfig = field(default_factory=TrainerConfig)


def desk_scenario(mode: str, steps: int = 40) -> Scenario:
    return Scenario(M=20, F=20, U=2, K=4, target_mode=mode, steps=steps)


def trained(cfg: ReproConfig, tag: str, sc: Scenario, seed: int, episodes: int, base: Checkpoint | None = None) -> Checkpoint:
    """Train (or transfer from ``base``) once and cache the final checkpoint."""
    out = Path(cfg.workdir) / tag
    final = out / "final.bin"
    if final.exists():
        return load_checkpoint(final, F=sc.F, rho=sc.rho)
    tc = TrainerConfig(**{**asdict(cfg.trainer), "episodes": episodes, "seed": seed})
    sched = ExplorationSchedule(kind="softmax", test_temperature=cfg.tau)
    log.info("training %s (%d episodes)", tag, episodes)
    if base is None:
        return train(sc, tc, sched, out_dir=out).checkpoint
    return transfer(base, sc, episodes, sched, tc, out_dir=out).checkpoint


def _ddql_vs_la(cfg: ReproConfig, mode: str) -> dict:
    sc = desk_scenario(mode, cfg.horizon)
    la = evaluate(LookaheadPolicy(cfg.la_horizon), sc, cfg.test_episodes, TEST_SEED, cfg.workers).success_probability
    rows = []
    for s in cfg.seeds:
        ck = trained(cfg, f"{mode}-{cfg.train_episodes}-s{s}", sc, s, cfg.train_episodes)
        p = evaluate(DDQLPolicy(ck.net, cfg.tau), sc, cfg.test_episodes, TEST_SEED, cfg.workers).success_probability
        rows.append({"seed": s, "ddql": p})
    mean = float(np.mean([r["ddql"] for r in rows]))
    return {"mode": mode, "la": la, "per_seed": rows, "ddql_mean": mean}


def cluster_vs_lookahead(cfg: ReproConfig) -> dict:
    """Cluster maps: mean DDQL-soft success >= 0.55 and >= LA(n) - 0.05."""
    res = _ddql_vs_la(cfg, "cluster")
    res["passed"] = res["ddql_mean"] >= 0.55 and res["ddql_mean"] >= res["la"] - 0.05
    return res


def sparse_vs_lookahead(cfg: ReproConfig) -> dict:
    """Sparse maps: mean DDQL-soft success within 0.10 of LA(n)."""
    res = _ddql_vs_la(cfg, "sparse")
    res["passed"] = abs(res["ddql_mean"] - res["la"]) <= 0.10
    return res


def transfer_vs_scratch(cfg: ReproConfig) -> dict:
    """Sparse-trained + short cluster retrain vs. the same budget from scratch."""
    sparse = desk_scenario("sparse", cfg.horizon)
    cluster = desk_scenario("cluster", cfg.transfer_horizon)
    n = cfg.transfer_episodes
    rows = []
    for s in cfg.seeds:
        base = trained(cfg, f"sparse-{cfg.train_episodes}-s{s}", sparse, s, cfg.train_episodes)
        tl = trained(cfg, f"sparse-tl-{n}-s{s}", cluster, s, n, base)
        scratch = trained(cfg, f"cluster-{n}-s{s}", cluster, s, n)
        reps = compare([DDQLPolicy(tl.net, cfg.tau, "transfer"), DDQLPolicy(scratch.net, cfg.tau, "scratch")],
                       cluster, cfg.test_episodes, TEST_SEED, cfg.workers)
        rows.append({"seed": s, "transfer": reps["transfer"].success_probability,
                     "scratch": reps["scratch"].success_probability})
    wins = sum(r["transfer"] >= r["scratch"] for r in rows)
    return {"per_seed": rows, "wins": wins, "passed": wins >= 2}


COMM_SETTINGS = (
    ("perfect", ChannelConfig(mode="perfect")),
    ("lossy-10m", ChannelConfig(mode="lossy", cell_side_m=10.0)),
    ("lossy-20m", ChannelConfig(mode="lossy", cell_side_m=20.0)),
    ("none", ChannelConfig(mode="none")),
)


def comms_scenario(cfg: ReproConfig, channel: ChannelConfig) -> Scenario:
    return Scenario(M=cfg.comm_M, F=20, U=cfg.comm_U, K=cfg.comm_K, clusters=cfg.comm_clusters,
                    eta=cfg.comm_eta, steps=cfg.comm_steps, channel=channel)


def ordered_within_ci(reports: list) -> bool:
    """Each report is not significantly better than the one ranked above it.

    ``a >= b`` holds within confidence intervals when the upper Wilson bound
    of ``a`` reaches the lower bound of ``b``.
    """
    return all(a.confidence_interval()[1] >= b.confidence_interval()[0] for a, b in zip(reports, reports[1:]))


def comms_degradation(cfg: ReproConfig, seed: int | None = None) -> dict:
    """DDQL trained on a small cluster map with a perfect channel, tested on a big map per channel."""
    s = cfg.seeds[0] if seed is None else seed
    train_sc = Scenario(M=cfg.comm_train_M, F=20, U=2, K=4, steps=cfg.horizon)
    ck = trained(cfg, f"cluster-M{cfg.comm_train_M}-{cfg.train_episodes}-s{s}", train_sc, s, cfg.train_episodes)
    policy = DDQLPolicy(ck.net, cfg.tau)
    reports = []
    for name, ch in COMM_SETTINGS:
        rep = evaluate(policy, comms_scenario(cfg, ch), cfg.comm_episodes, TEST_SEED, cfg.workers)
        rep.policy = name
        reports.append(rep)
    rows = [{"channel": r.policy, "success": r.success_probability, "ci": list(r.confidence_interval())} for r in reports]
    return {"per_channel": rows, "passed": ordered_within_ci(reports)}


PROTOCOLS = {
    "cluster": cluster_vs_lookahead,
    "sparse": sparse_vs_lookahead,
    "transfer": transfer_vs_scratch,
    "comms": comms_degradation,
}


def run(names, cfg: ReproConfig) -> dict[str, dict]:
    out = {}
    for n in names:
        out[n] = PROTOCOLS[n](cfg)
        Path(cfg.workdir).mkdir(parents=True, exist_ok=True)
        (Path(cfg.workdir) / f"{n}.json").write_text(json.dumps(out[n], indent=2))
    return out
