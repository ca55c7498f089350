"""Sensitivity of link prediction AUC to the homophily factor (lam) and the
edge-dropout ratio (alpha) on synthetic networks, median over seeds.

    python scripts/sensitivity.py --param lam --values 0 0.5 0.9 0.99
    python scripts/sensitivity.py --param alpha --values 0 0.1 0.2 0.4
"""
import argparse

import numpy as np
from common import add_synth_args, synth_run


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    add_synth_args(parser)
    parser.add_argument("--param", choices=["lam", "alpha"], default="lam")
    parser.add_argument("--values", type=float, nargs="+", default=[0.0, 0.5, 0.9, 0.99])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = parser.parse_args()

    print(f"{args.param}\tmethod\tmedian_auc\tper_seed")
    for value in args.values:
        runs = [synth_run(args, seed, **{args.param: value}) for seed in args.seeds]
        for method in ("posterior_pi", "cosine_global"):
            aucs = [r["reports"][method].auc for r in runs]
            per_seed = " ".join(f"{a:.3f}" for a in aucs)
            print(f"{value}\t{method}\t{np.median(aucs):.3f}\t{per_seed}", flush=True)


if __name__ == "__main__":
    main()
