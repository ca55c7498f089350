"""Finite-difference gradient suite over every primitive, KL term, the encoder,
the decoder likelihood and the per-pair ELBO, on small random instances."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .decoder import init_decoder, recon_loglik, target_feature
from .encoder import HEADS, encode_pair, init_encoder
from .graph_data import Edge, Network, PairObservation
from .latent import PairPosterior, kl_bernoulli, kl_linked, kl_mixture, kl_unlinked
from .trainer import combine, pair_terms

DIMS = {
    "tiny": dict(d=3, d_w=5, L=4, K=4, width=3, n=6, vocab=9),
    "small": dict(d=4, d_w=6, L=7, K=5, width=5, n=8, vocab=15),
}


def _weighted(out, weights):
    # contract every output entry with a fixed random weight so no gradient
    # component is hidden by symmetry
    return ad.sum(out * weights)


def _op_cases(rng):
    """(name, params, builder) for each differentiable primitive."""
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    pos = rng.uniform(0.5, 2.0, size=(3, 4))
    row = rng.normal(size=(4,))
    w34 = rng.normal(size=(3, 4))
    cases = []

    def unary(name, fn, x):
        cases.append((name, {"x": x}, lambda g: _weighted(fn(g.param("x")), w34)))

    def binary(name, fn, x, y):
        ww = rng.normal(size=np.broadcast_shapes(x.shape, y.shape))
        cases.append((name, {"x": x, "y": y}, lambda g: _weighted(fn(g.param("x"), g.param("y")), ww)))

    binary("add", ad.add, a, row)
    binary("sub", ad.sub, row, a)
    binary("mul", ad.mul, a, row)
    binary("div", ad.div, a, pos)
    unary("neg", ad.neg, a)
    unary("square", ad.square, a)
    unary("sqrt", ad.sqrt, pos)
    unary("exp", ad.exp, a)
    unary("log", ad.log, pos)
    unary("tanh", ad.tanh, a)
    unary("sigmoid", ad.sigmoid, 3.0 * a)
    # keep entries away from the clip bounds, where the derivative jumps
    clipped = np.where(np.abs(np.abs(a) - 0.5) < 0.05, a + 0.2, a)
    unary("clip", lambda x: ad.clip(x, -0.5, 0.5), clipped)

    w3 = rng.normal(size=3)
    cases.append(("sum", {"x": a}, lambda g: ad.sum(ad.sum(g.param("x"), axis=1) * w3)))
    cases.append(("mean", {"x": a}, lambda g: ad.sum(ad.mean(g.param("x"), axis=1, keepdims=True)[:, 0] * w3)))

    m1 = rng.normal(size=(2, 3, 4))
    m2 = rng.normal(size=(4, 5))
    wm = rng.normal(size=(2, 3, 5))
    cases.append(("matmul", {"x": m1, "y": m2}, lambda g: _weighted(ad.matmul(g.param("x"), g.param("y")), wm)))
    w62 = rng.normal(size=(6, 2))
    cases.append(("reshape", {"x": a}, lambda g: _weighted(ad.reshape(g.param("x"), (6, 2)), w62)))
    wt = rng.normal(size=(4, 3))
    cases.append(("swapaxes", {"x": a}, lambda g: _weighted(ad.swapaxes(g.param("x"), 0, 1), wt)))
    wg = rng.normal(size=(2, 2))
    cases.append(("getitem", {"x": a}, lambda g: _weighted(g.param("x")[1:, ::2], wg)))
    ids = np.array([[0, 2], [2, 1], [0, 0]])
    wga = rng.normal(size=(3, 2, 4))
    cases.append(("gather", {"x": a}, lambda g: _weighted(ad.gather(g.param("x"), ids), wga)))
    wc = rng.normal(size=(3, 8))
    cases.append(("concat", {"x": a, "y": b}, lambda g: _weighted(ad.concat([g.param("x"), g.param("y")], axis=1), wc)))

    mask = np.array([[1, 1, 0, 1], [1, 0, 0, 0], [1, 1, 1, 1]], dtype=bool)
    cases.append(("masked_softmax", {"x": a}, lambda g: _weighted(ad.masked_softmax(g.param("x"), mask), w34)))
    # distinct entries so the maximum is unique and the max is differentiable
    distinct = rng.permutation(12).reshape(3, 4) * 0.3 + rng.normal(scale=0.01, size=(3, 4))
    cases.append(("masked_max", {"x": distinct}, lambda g: _weighted(ad.masked_max(g.param("x"), mask, axis=-1), w3)))

    x = rng.normal(size=(2, 3, 6))
    k = rng.normal(size=(4, 3, 3))
    wcv = rng.normal(size=(2, 4, 6))
    cases.append(("conv1d", {"x": x, "k": k}, lambda g: _weighted(ad.conv1d(g.param("x"), g.param("k")), wcv)))
    return cases


def _random_posterior_params(rng, d, batch=2):
    p = {name: rng.normal(size=(batch, d)) for name in HEADS if name != "gamma"}
    p["gamma"] = rng.uniform(0.05, 0.95, size=(batch, d))
    p["pi"] = rng.uniform(0.05, 0.95, size=(batch,))
    return p


def _posterior(g, names):
    return PairPosterior(**{k: g.param(k) for k in names})


def _kl_cases(rng, d):
    p = _random_posterior_params(rng, d)
    no_pi = {k: v for k, v in p.items() if k != "pi"}
    wb = rng.normal(size=2)
    return [
        ("kl_linked", no_pi, lambda g: ad.sum(kl_linked(_posterior(g, no_pi), 0.7) * wb)),
        ("kl_unlinked", no_pi, lambda g: ad.sum(kl_unlinked(_posterior(g, no_pi)) * wb)),
        ("kl_bernoulli", {"pi": p["pi"]}, lambda g: ad.sum(kl_bernoulli(g.param("pi"), 0.2) * wb)),
        ("kl_mixture", p, lambda g: ad.sum(kl_mixture(_posterior(g, p), 0.7, 0.2) * wb)),
    ]


def tiny_model(dims: str = "tiny", seed: int = 0):
    """A random network and parameter set of the named size, for checks and tests."""
    cfg = DIMS[dims]
    rng = np.random.default_rng(seed)
    n, L = cfg["n"], cfg["L"]
    lengths = rng.integers(max(1, L // 2), L + 1, size=n)
    tokens = np.zeros((n, L), dtype=np.int64)
    for v in range(n):
        tokens[v, : lengths[v]] = rng.integers(2, cfg["vocab"], size=lengths[v])
    net = Network(n, {(0, 1), (1, 2), (2, 4)}, tokens, lengths)
    params = init_encoder(n, cfg["vocab"], cfg["d"], cfg["d_w"], L, cfg["K"], cfg["width"], rng, emb_init=0.5)
    params.update(init_decoder(cfg["d"], cfg["d_w"], rng))
    # move away from the all-zero-bias point so every head sees a generic input
    params["int_b2"] = rng.normal(scale=0.3, size=params["int_b2"].shape)
    params["struct"] = rng.normal(size=params["struct"].shape)
    return net, params, cfg


def _model_cases(rng, dims):
    net, params, cfg = tiny_model(dims, seed=int(rng.integers(1 << 30)))
    d, d_w = cfg["d"], cfg["d_w"]
    enc_names = [k for k in params if not k.startswith("dec_")]
    enc = {k: params[k] for k in enc_names}
    n_out = len(HEADS) * d + 1
    wpost = rng.normal(size=n_out)

    def encode_builder(g):
        obs = PairObservation(1, 3, Edge.UNKNOWN)
        post = encode_pair(obs, net, {k: g.param(k) for k in enc})
        parts = [getattr(post, name) for name in HEADS] + [ad.reshape(post.pi, (1,))]
        return ad.sum(ad.concat(parts, axis=0) * wpost)

    dec = {k: params[k] for k in params if k.startswith("dec_")}
    z = {"z_i": rng.normal(size=(2, d)), "z_j": rng.normal(size=(2, d))}
    t_i = rng.normal(size=(2, d_w))
    t_j = rng.normal(size=(2, d_w))

    def recon_builder(g):
        P = {k: g.param(k) for k in dec}
        return ad.sum(recon_loglik(t_i, t_j, g.param("z_i"), g.param("z_j"), P))

    i = np.array([0, 2, 3])
    j = np.array([1, 4, 5])
    w = np.array([int(Edge.PRESENT), int(Edge.ABSENT), int(Edge.UNKNOWN)])
    masks = net.masks
    noise = rng.normal(size=(2, len(i), 2, 2 * d))
    emb = params["word_emb"]
    # targets are a stop-gradient function of the word embeddings; hold them at
    # their base value so finite differences see the same function
    targets = (
        target_feature(emb[net.tokens[i]], masks[i]),
        target_feature(emb[net.tokens[j]], masks[j]),
    )

    def elbo_builder(g):
        P = {k: g.param(k) for k in params}
        h_i = ad.gather(P["struct"], i)
        h_j = ad.gather(P["struct"], j)
        terms = pair_terms(
            P, net.tokens[i], masks[i], net.tokens[j], masks[j], h_i, h_j, 0.9, 0.1, noise, targets=targets
        )
        return ad.sum(combine(terms, w))

    return [
        ("encode_pair", enc, encode_builder),
        ("recon_loglik", {**dec, **z}, recon_builder),
        ("pair_elbo", params, elbo_builder),
    ]


def gradient_suite(dims: str = "tiny", tolerance: float = 1e-4, seed: int = 0, max_entries: int | None = None):
    """Run every check; returns ``{check name: GradCheckReport}``."""
    if dims not in DIMS:
        raise ValueError(f"unknown dims {dims!r}; choose from {sorted(DIMS)}")
    rng = np.random.default_rng(seed)
    cases = _op_cases(rng) + _kl_cases(rng, DIMS[dims]["d"]) + _model_cases(rng, dims)
    return {
        name: ad.check_gradients(builder, params, tolerance=tolerance, max_entries=max_entries, seed=seed)
        for name, params, builder in cases
    }


def report_lines(reports) -> list[str]:
    out = []
    for check, rep in reports.items():
        for line in rep.lines():
            out.append(f"{check}\t{line}")
    return out
