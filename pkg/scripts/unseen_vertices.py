"""Link prediction for vertices never seen in training: hold out a fraction of a
synthetic network's vertices, train on the rest, embed each held-out vertex from
its text alone and score its edges to the training vertices.

    python scripts/unseen_vertices.py --holdout 0.25
"""
import argparse

import numpy as np
from common import DESK

from vhe.evaluate import holdout_vertices, synth_network, unseen_link_eval
from vhe.graph_data import split_edges
from vhe.trainer import TrainConfig, train


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--n", type=int, default=200)
    parser.add_argument("--holdout", type=float, default=0.25)
    parser.add_argument("--epochs", type=int, default=50)
    parser.add_argument("--steps", type=int, default=100, help="optimization steps per unseen vertex")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    s = synth_network(N=args.n, d=8, d_w=16, lam=0.9, sparsity=0.02, L=16, seed=args.seed)
    kept, held = holdout_vertices(s.network, args.holdout, seed=args.seed)
    sub, remap = s.network.subnetwork(kept)
    cfg = TrainConfig(epochs=args.epochs, seed=args.seed, **DESK)
    model = train(sub, split_edges(sub, 1.0, args.seed), cfg, vocab_size=len(s.vocab), word_vectors=s.word_vectors).model
    for method in ("cosine_global", "posterior_pi"):
        rep = unseen_link_eval(model, s.network, held, remap, np.random.default_rng(0), method=method, steps=args.steps)
        print(f"{method}\t" + "\t".join(rep.lines()))


if __name__ == "__main__":
    main()
