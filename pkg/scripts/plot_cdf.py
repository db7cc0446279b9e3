"""Plot success-probability CDFs from a ``cdf.tsv`` written by ``uavswarm export-plots``.

    python scripts/plot_cdf.py tables/cdf.tsv --out cdf.png
"""

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from uavswarm.harness import read_cdf_table  # noqa: E402


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("table")
    ap.add_argument("--out", default="cdf.png")
    args = ap.parse_args(argv)
    curves = read_cdf_table(args.table)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, cdf in curves.items():
        ax.step(range(len(cdf)), cdf, where="post", label=name)
    ax.set_xlabel("step")
    ax.set_ylabel("P(all targets reached)")
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
