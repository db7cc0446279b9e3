"""Air-to-air broadcast channel with distance-dependent packet loss.

The loss model is log-distance path loss, optional log-normal shadowing, and
Rayleigh block fading: a packet is lost when the instantaneous SNR falls below
the decoding threshold of the channel code, ``P = 1 - exp(-snr_th / mean_snr)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .knowledge import KnowledgeDelta

MODES = ("perfect", "lossy", "none")
REFERENCE_DISTANCE_M = 1.0


@dataclass
class ChannelConfig:
    mode: str = "perfect"
    cell_side_m: float = 10.0
    tx_power_dbm: float = 20.0
    noise_floor_dbm: float = -76.0
    altitude_m: float = 40.0
    coding_rate: float = 2 / 3
    pathloss_ref_db: float | None = None
    pathloss_exponent: float = 2.0
    shadowing_sigma_db: float = 0.0
    snr_threshold_db: float | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"channel mode must be one of {MODES}, got {self.mode!r}")
        if not 0 < self.coding_rate <= 1:
            raise ValueError("coding_rate must lie in (0, 1]")
        if self.cell_side_m <= 0:
            raise ValueError("cell_side_m must be positive")

    @property
    def threshold_db(self) -> float:
        if self.snr_threshold_db is not None:
            return self.snr_threshold_db
        return capacity_threshold_db(self.coding_rate)


def capacity_threshold_db(coding_rate: float) -> float:
    """SNR at which a Gaussian channel's capacity equals the code rate."""
    return 10 * math.log10(2**coding_rate - 1)


def mean_snr_db(distance_m: float, cfg: ChannelConfig, offset_db: float = 0.0) -> float:
    if cfg.pathloss_ref_db is None:
        raise ValueError("channel is not calibrated: run calibrate() first")
    d = max(distance_m, REFERENCE_DISTANCE_M) / REFERENCE_DISTANCE_M
    loss = cfg.pathloss_ref_db + 10 * cfg.pathloss_exponent * math.log10(d)
    return cfg.tx_power_dbm - loss - cfg.noise_floor_dbm + offset_db


def packet_loss_probability(distance_m: float, cfg: ChannelConfig, offset_db: float = 0.0) -> float:
    if distance_m < 0:
        raise ValueError("distance must be non-negative")
    ratio_db = cfg.threshold_db - mean_snr_db(distance_m, cfg, offset_db)
    return -math.expm1(-(10 ** (ratio_db / 10)))


def calibrate(
    cfg: ChannelConfig,
    distance_m: float = 110.0,
    target_loss: float = 0.5,
    tol_db: float = 1e-9,
) -> ChannelConfig:
    """Return ``cfg`` with ``pathloss_ref_db`` solved by bisection so that
    ``packet_loss_probability(distance_m) == target_loss``."""
    lo, hi = -100.0, 300.0
    probe = replace(cfg, pathloss_ref_db=lo)

    def loss(ref):
        probe.pathloss_ref_db = ref
        return packet_loss_probability(distance_m, probe)

    if not loss(lo) < target_loss < loss(hi):
        raise ValueError("calibration target outside the bracket")
    while hi - lo > tol_db:
        mid = 0.5 * (lo + hi)
        if loss(mid) < target_loss:
            lo = mid
        else:
            hi = mid
    return replace(cfg, pathloss_ref_db=0.5 * (lo + hi), snr_threshold_db=cfg.threshold_db)


def ensure_calibrated(cfg: ChannelConfig) -> ChannelConfig:
    return cfg if cfg.pathloss_ref_db is not None else calibrate(cfg)


def draw_shadowing(U: int, cfg: ChannelConfig, rng: np.random.Generator) -> np.ndarray:
    """Per-link shadowing offsets in dB (symmetric, zero diagonal), one draw per episode."""
    if cfg.shadowing_sigma_db <= 0:
        return np.zeros((U, U))
    s = rng.normal(0.0, cfg.shadowing_sigma_db, (U, U))
    s = np.triu(s, 1)
    return s + s.T


def link_distance_m(p, q, cfg: ChannelConfig) -> float:
    # common altitude: the vertical component cancels
    return float(np.hypot(*(np.asarray(p) - np.asarray(q)))) * cfg.cell_side_m


def broadcast_round(
    deltas: list[KnowledgeDelta],
    positions,
    cfg: ChannelConfig,
    rng: np.random.Generator | None = None,
    shadowing: np.ndarray | None = None,
) -> list[list[KnowledgeDelta]]:
    """Deliver each sender's delta to every other drone.

    Returns, for every receiver index, the list of deltas it got this step.
    Lossy mode drops each directed link independently.
    """
    U = len(positions)
    inbox: list[list[KnowledgeDelta]] = [[] for _ in range(U)]
    if cfg.mode == "none":
        return inbox
    for d in deltas:
        for v in range(U):
            if v == d.sender:
                continue
            if cfg.mode == "lossy":
                off = 0.0 if shadowing is None else shadowing[d.sender, v]
                p = packet_loss_probability(link_distance_m(positions[d.sender], positions[v], cfg), cfg, off)
                if rng.random() < p:
                    continue
            inbox[v].append(d)
    return inbox


def parameter_block(cfg: ChannelConfig) -> str:
    """The calibrated channel section, in scenario-config syntax."""
    keys = (
        "mode", "cell_side_m", "tx_power_dbm", "noise_floor_dbm", "altitude_m", "coding_rate",
        "pathloss_ref_db", "pathloss_exponent", "shadowing_sigma_db", "snr_threshold_db",
    )
    return "[channel]\n" + "".join(f"{k} = {getattr(cfg, k)}\n" for k in keys)
