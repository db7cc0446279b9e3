"""Scenario parameters, config files, and per-episode random streams."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .comms import ChannelConfig, ensure_calibrated
from .gridenv import GridMap, SwarmState, generate_map, place_drones


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass
class Scenario:
    M: int = 20
    F: int = 20
    U: int = 2
    K: int = 4
    sigma2: float = 1.0
    zeta: float = 3.0
    eta: float = 0.0
    d_sparse: float = 8.0
    theta: float = 1.0
    psi: float = 0.8
    rho: float = 0.2
    target_mode: str = "cluster"
    clusters: int = 1
    h_min: int = 2
    h_max: int = 4
    steps: int = 40
    seed: int = 0
    inverse_covariance: bool = False
    distinct_targets: bool = True
    omega_file: str | None = None
    channel: ChannelConfig = field(default_factory=ChannelConfig)

    def __post_init__(self):
        self.validate()
        if self.channel.mode == "lossy":
            self.channel = ensure_calibrated(self.channel)

    def validate(self) -> None:
        if self.F > self.M:
            raise ConfigError(f"window F={self.F} larger than map M={self.M}")
        if self.target_mode not in ("sparse", "cluster"):
            raise ConfigError(f"target_mode must be sparse or cluster, got {self.target_mode!r}")
        if min(self.M, self.F, self.U, self.K, self.steps, self.clusters) < 1:
            raise ConfigError("sizes and counts must be positive")
        if self.K % self.clusters:
            raise ConfigError("K must be a multiple of clusters")
        if not 0 <= self.eta < 1:
            raise ConfigError("eta must lie in [0, 1)")
        if self.sigma2 <= 0 or self.zeta < 0:
            raise ConfigError("sigma2 must be positive and zeta non-negative")
        if not 1 <= self.h_min <= self.h_max:
            raise ConfigError("need 1 <= h_min <= h_max")

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def fixed_omega(self) -> np.ndarray | None:
        if self.omega_file is None:
            return None
        from .harness import load_omega_grid

        omega = load_omega_grid(self.omega_file)
        if omega.shape != (self.M, self.M):
            raise ConfigError(f"{self.omega_file}: grid is {omega.shape}, scenario M={self.M}")
        return omega

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def episode_streams(seed: int, episode: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Independent (map, channel, policy) generators for one episode.

    The map stream also draws the drones' starting cells, so two policies run
    with the same (seed, episode) face the same world.
    """
    ss = np.random.SeedSequence(seed, spawn_key=(episode,))
    return tuple(np.random.default_rng(s) for s in ss.spawn(3))


def make_world(sc: Scenario, rng: np.random.Generator, omega: np.ndarray | None = None) -> tuple[GridMap, SwarmState]:
    grid = generate_map(
        sc.M, sc.K, sc.target_mode, rng, sigma2=sc.sigma2, d_sparse=sc.d_sparse, eta=sc.eta,
        h_min=sc.h_min, h_max=sc.h_max, clusters=sc.clusters, omega=omega,
        inverse_covariance=sc.inverse_covariance,
    )
    return grid, place_drones(grid, sc.U, rng)


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------
#
# INI syntax with sections [scenario], [channel], [trainer], [schedule].
# Unknown keys are rejected; missing keys keep their defaults.


def _coerce(value: str, default):
    kind = type(default)
    if kind is str:
        return value
    if value.lower() in ("none", ""):
        return None
    if kind is bool:
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if kind is int:
        return int(value)
    if kind is float or default is None:
        try:
            return float(value)
        except ValueError:
            return value
    return value


def apply_overrides(obj, values: dict, section: str):
    known = {f.name: f for f in dataclasses.fields(obj)}
    changes = {}
    for key, raw in values.items():
        if key not in known or key == "channel":
            raise ConfigError(f"[{section}] unknown key {key!r}")
        default = getattr(obj, key)
        try:
            changes[key] = _coerce(str(raw), default) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from exc
    try:
        return dataclasses.replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keys are case-sensitive (M, F, U, K)
    return cp


def read_config(path) -> dict[str, dict[str, str]]:
    cp = _parser()
    if not cp.read(path):
        raise ConfigError(f"cannot read config file {path}")
    unknown = set(cp.sections()) - {"scenario", "channel", "trainer", "schedule"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return {s: dict(cp[s]) for s in cp.sections()}


def scenario_from_config(sections: dict[str, dict], overrides: dict | None = None) -> Scenario:
    """Build a scenario from parsed INI sections; ``channel.<key>`` overrides
    address the channel section."""
    overrides = overrides or {}
    chan_over = {k.split(".", 1)[1]: v for k, v in overrides.items() if k.startswith("channel.")}
    scen_over = {k: v for k, v in overrides.items() if not k.startswith("channel.")}
    channel = apply_overrides(ChannelConfig(), {**sections.get("channel", {}), **chan_over}, "channel")
    sc = apply_overrides(Scenario(), {**sections.get("scenario", {}), **scen_over}, "scenario")
    return dataclasses.replace(sc, channel=channel)


def write_config(path, sc: Scenario, extra: dict[str, object] | None = None) -> None:
    cp = _parser()
    cp["scenario"] = {k: str(v) for k, v in sc.to_dict().items() if k != "channel"}
    cp["channel"] = {k: str(v) for k, v in dataclasses.asdict(sc.channel).items()}
    for section, obj in (extra or {}).items():
        cp[section] = {k: str(v) for k, v in dataclasses.asdict(obj).items()}
    with open(Path(path), "w") as fh:
        cp.write(fh)
