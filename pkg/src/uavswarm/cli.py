"""Command-line entry point: ``uavswarm <subcommand> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .comms import ChannelConfig, calibrate, packet_loss_probability, parameter_block
from .ddql import ExplorationSchedule, TrainerConfig, TrainingDivergedError, train, transfer
from .gridenv import GenerationError, write_map
from .harness import (
    compare, evaluate, export_tables, ingest_height_map, load_reports, parse_height_grid,
    parse_policy, save_omega_grid, save_reports,
)
from .neuralnet import load_checkpoint
from .scenario import ConfigError, Scenario, apply_overrides, make_world, read_config, scenario_from_config

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("uavswarm")


def _overrides(pairs) -> dict[str, str]:
    out = {}
    for p in pairs or []:
        key, sep, value = p.partition("=")
        if not sep:
            raise ConfigError(f"override must be key=value, got {p!r}")
        out[key.strip()] = value.strip()
    return out


def _sections(args) -> dict:
    return read_config(args.config) if getattr(args, "config", None) else {}


def _scenario(args) -> Scenario:
    return scenario_from_config(_sections(args), _overrides(args.set))


def _trainer(args, sections) -> tuple[TrainerConfig, ExplorationSchedule]:
    cfg = apply_overrides(TrainerConfig(), sections.get("trainer", {}), "trainer")
    sched = apply_overrides(ExplorationSchedule(), sections.get("schedule", {}), "schedule")
    if getattr(args, "episodes", None) is not None:
        cfg = dataclasses.replace(cfg, episodes=args.episodes)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "exploration", None):
        sched = ExplorationSchedule(kind=args.exploration, test_temperature=sched.test_temperature)
    return cfg, sched


def _manifest(args, sc: Scenario, **extra) -> dict:
    return {"version": __version__, "command": sys.argv[1:], "scenario": sc.to_dict(), **extra}


def cmd_gen_map(args) -> int:
    sc = _scenario(args)
    seed = sc.seed if args.seed is None else args.seed
    grid, _ = make_world(sc, np.random.default_rng(seed), sc.fixed_omega())
    grid.seed = seed
    write_map(args.out, grid, sc.U)
    print(f"wrote {args.out}: M={grid.M} K={grid.K} obstacles={len(grid.obstacles)} coverage={grid.coverage():.3f}")
    return EXIT_OK


def cmd_train(args) -> int:
    sections = _sections(args)
    sc = scenario_from_config(sections, _overrides(args.set))
    cfg, sched = _trainer(args, sections)
    res = train(sc, cfg, sched, out_dir=args.out)
    print(f"trained {cfg.episodes} episodes -> {Path(args.out) / 'final.bin'}")
    if res.curve:
        print(f"final success probability {res.curve[-1]['success_probability']:.3f}")
    return EXIT_OK


def cmd_transfer(args) -> int:
    sections = _sections(args)
    sc = scenario_from_config(sections, _overrides(args.set))
    cfg, sched = _trainer(args, sections)
    ck = load_checkpoint(args.checkpoint, F=sc.F, rho=sc.rho)
    res = transfer(ck, sc, args.episodes, sched, cfg, out_dir=args.out)
    print(f"transferred for {args.episodes} episodes -> {Path(args.out) / 'final.bin'}")
    if res.curve:
        print(f"final success probability {res.curve[-1]['success_probability']:.3f}")
    return EXIT_OK


def _print_summary(reports) -> None:
    for r in reports.values():
        s = r.summary()
        print(f"{s['policy']:<24} success@{s['horizon']} = {s['success_probability']:.3f} "
              f"[{s['ci_low']:.3f}, {s['ci_high']:.3f}]  {1e3 * s['mean_decision_seconds']:.3f} ms/decision")


def cmd_eval(args) -> int:
    sc = _scenario(args)
    policy = parse_policy(args.policy, sc.F, sc.rho)
    rep = evaluate(policy, sc, args.episodes, args.seed, args.workers)
    reports = {rep.policy: rep}
    _print_summary(reports)
    if args.out:
        save_reports(args.out, reports, _manifest(args, sc, episodes=args.episodes, seed=args.seed))
    return EXIT_OK


def cmd_compare(args) -> int:
    sc = _scenario(args)
    policies = [parse_policy(p, sc.F, sc.rho) for p in args.policy]
    reports = compare(policies, sc, args.episodes, args.seed, args.workers)
    _print_summary(reports)
    if args.out:
        save_reports(args.out, reports, _manifest(args, sc, episodes=args.episodes, seed=args.seed))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    sections = _sections(args)
    base = apply_overrides(ChannelConfig(mode="lossy"), sections.get("channel", {}), "channel")
    base = dataclasses.replace(base, mode="lossy", pathloss_ref_db=None)
    cfg = calibrate(base, args.distance, args.loss)
    block = parameter_block(cfg)
    print(block, end="")
    print(f"# loss({args.distance:g} m) = {packet_loss_probability(args.distance, cfg):.6f}")
    if args.out:
        Path(args.out).write_text(block)
    return EXIT_OK


def cmd_ingest(args) -> int:
    heights = parse_height_grid(args.input)
    omega, coverage = ingest_height_map(heights, args.cell_side, args.threshold, args.input_resolution, args.min_fraction)
    save_omega_grid(args.out, omega)
    print(f"wrote {args.out}: {omega.shape[0]}x{omega.shape[1]} cells, obstacle coverage {coverage:.3f}")
    return EXIT_OK


def cmd_export(args) -> int:
    reports, manifest = load_reports(args.results)
    paths = export_tables(reports, args.out)
    (Path(args.out) / "manifest.json").write_text(json.dumps(manifest, indent=2))
    for p in paths:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="uavswarm", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def scen(p):
        p.add_argument("--config", help="INI scenario config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="scenario override (repeatable)")

    p = sub.add_parser("gen-map", help="generate one map and write it as a scenario file")
    scen(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_map)

    p = sub.add_parser("train", help="train a DDQL network from scratch")
    scen(p)
    p.add_argument("--episodes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--exploration", choices=("softmax", "epsilon_greedy"))
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transfer", help="continue training a checkpoint on another scenario")
    scen(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--exploration", choices=("softmax", "epsilon_greedy"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transfer)

    for name, func, multi in (("eval", cmd_eval, False), ("compare", cmd_compare, True)):
        p = sub.add_parser(name, help=f"{'compare policies' if multi else 'evaluate a policy'} by Monte Carlo")
        scen(p)
        p.add_argument("--policy", required=True, action="append" if multi else "store",
                       help="la:<n> | ddql:<ckpt> | ddql-soft:<ckpt>[:tau] | stay | random")
        p.add_argument("--episodes", type=int, default=500)
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out", help="results JSON")
        p.set_defaults(func=func)

    p = sub.add_parser("calibrate-channel", help="solve the path-loss reference for a loss operating point")
    p.add_argument("--config")
    p.add_argument("--distance", type=float, default=110.0)
    p.add_argument("--loss", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("ingest-heightmap", help="convert a building-height grid to an obstacle grid")
    p.add_argument("--input", required=True)
    p.add_argument("--cell-side", type=float, default=10.0)
    p.add_argument("--threshold", type=float, default=40.0)
    p.add_argument("--input-resolution", type=float)
    p.add_argument("--min-fraction", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("export-plots", help="write delimited CDF/summary tables from a results file")
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, GenerationError, OSError) as exc:
        print(f"uavswarm: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDivergedError, RuntimeError) as exc:
        print(f"uavswarm: aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
