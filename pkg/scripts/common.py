"""Shared setup for the experiment scripts: a desk-scale synthetic run."""
import time

import numpy as np

from vhe.evaluate import link_prediction_eval, synth_network
from vhe.graph_data import split_edges
from vhe.inference import all_embeddings
from vhe.trainer import TrainConfig, train

# small-network settings; everything not listed keeps the TrainConfig default
DESK = dict(d=8, d_w=16, max_len=16, kernels=16, kernel_width=5, lr=1e-2, batch_size=16)


def add_synth_args(parser):
    parser.add_argument("--n", type=int, default=200, help="vertices")
    parser.add_argument("--sparsity", type=float, default=0.02)
    parser.add_argument("--generator-lam", type=float, default=0.9, help="homophily of the generator (0: none)")
    parser.add_argument("--edge-ratio", type=float, default=0.75)
    parser.add_argument("--epochs", type=int, default=50)
    parser.add_argument("--contexts", type=int, default=50, help="contexts per vertex for global embeddings")


def synth_run(args, seed, **overrides):
    """Generate, train and score one seeded run; returns a dict of results."""
    start = time.time()
    s = synth_network(N=args.n, d=8, d_w=16, lam=args.generator_lam, sparsity=args.sparsity, L=16, seed=seed)
    split = split_edges(s.network, args.edge_ratio, seed=seed)
    cfg = TrainConfig(epochs=args.epochs, seed=seed, **{**DESK, **overrides})
    res = train(s.network, split, cfg, vocab_size=len(s.vocab), word_vectors=s.word_vectors)
    model = res.model
    emb = all_embeddings(model, args.contexts, np.random.default_rng(0))
    reports = {
        "posterior_pi": link_prediction_eval(model, split, "posterior_pi", np.random.default_rng(0)),
        "cosine_global": link_prediction_eval(model, split, "cosine_global", np.random.default_rng(0), embeddings=emb),
    }
    return {
        "synth": s,
        "split": split,
        "model": model,
        "trace": res.trace,
        "embeddings": emb,
        "reports": reports,
        "seconds": time.time() - start,
    }
