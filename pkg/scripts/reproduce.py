"""Run the desk-scale reproduction protocols and write one JSON per protocol.

Full settings take many hours per training run on one core; use
``--train-episodes`` and friends for a reduced informational run.

    python scripts/reproduce.py cluster sparse --workdir runs
    python scripts/reproduce.py cluster --train-episodes 300 --seeds 0 --workdir runs-short
"""

import argparse
import json
import logging

from uavswarm.experiments import PROTOCOLS, ReproConfig, run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("protocols", nargs="+", choices=sorted(PROTOCOLS))
    ap.add_argument("--workdir", default="runs")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--train-episodes", type=int, default=3000)
    ap.add_argument("--transfer-episodes", type=int, default=750)
    ap.add_argument("--test-episodes", type=int, default=500)
    ap.add_argument("--comm-episodes", type=int, default=200)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    cfg = ReproConfig(
        workdir=args.workdir, seeds=tuple(args.seeds), train_episodes=args.train_episodes,
        transfer_episodes=args.transfer_episodes, test_episodes=args.test_episodes,
        comm_episodes=args.comm_episodes, workers=args.workers,
    )
    for name, res in run(args.protocols, cfg).items():
        print(name, "PASS" if res["passed"] else "FAIL")
        print(json.dumps(res, indent=2))


if __name__ == "__main__":
    main()
