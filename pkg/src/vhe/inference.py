"""Global vertex embeddings and embeddings for vertices unseen during training."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .encoder import encode
from .graph_data import Edge
from .optim import ParameterStore, adam_step
from .trainer import Model, pair_terms


@dataclass
class VertexEmbedding:
    semantic: np.ndarray
    structure: np.ndarray

    @property
    def combined(self) -> np.ndarray:
        return np.concatenate([self.semantic, self.structure])


def _encode_numpy(model: Model, tok_i, mask_i, tok_j, mask_j, h_i, h_j):
    post, _ = encode(model.params, tok_i, mask_i, tok_j, mask_j, h_i, h_j, model.config.d)
    return post


def posterior_pi(model: Model, pairs, chunk: int = 512) -> np.ndarray:
    """Edge probability the encoder infers for each (i, j), taken in i < j order."""
    pairs = np.sort(np.asarray(pairs, dtype=np.int64).reshape(-1, 2), axis=1)
    net = model.network
    masks = net.masks
    H = model.params["struct"]
    out = []
    for s in range(0, len(pairs), chunk):
        i, j = pairs[s : s + chunk, 0], pairs[s : s + chunk, 1]
        post = _encode_numpy(model, net.tokens[i], masks[i], net.tokens[j], masks[j], H[i], H[j])
        out.append(post.pi)
    return np.concatenate(out) if out else np.zeros(0)


def context_means(model: Model, i: int, contexts, states=None, chunk: int = 512) -> np.ndarray:
    """Posterior mean of z_i given each context vertex, shape (len(contexts), d).

    ``states`` optionally gives an :class:`Edge` per context; the default treats
    every context pair as Unknown and returns the mixture mean.
    """
    contexts = np.asarray(contexts, dtype=np.int64)
    if states is None:
        states = np.full(len(contexts), int(Edge.UNKNOWN))
    states = np.asarray(states)
    net = model.network
    masks = net.masks
    H = model.params["struct"]
    rows = []
    for s in range(0, len(contexts), chunk):
        c = contexts[s : s + chunk]
        first = i < c  # i occupies the first slot of the canonical pair
        a = np.where(first, i, c)
        b = np.where(first, c, i)
        post = _encode_numpy(model, net.tokens[a], masks[a], net.tokens[b], masks[b], H[a], H[b])
        mu = np.where(first[:, None], post.mu_i, post.mu_j)
        mu0 = np.where(first[:, None], post.mu0_i, post.mu0_j)
        pi = post.pi[:, None]
        st = states[s : s + chunk, None]
        rows.append(
            np.where(st == Edge.PRESENT, mu, np.where(st == Edge.ABSENT, mu0, pi * mu + (1 - pi) * mu0))
        )
    return np.concatenate(rows)


def global_embedding(
    i: int,
    model: Model,
    contexts,
    S: int,
    rng: np.random.Generator,
    known_edges: set | None = None,
) -> VertexEmbedding:
    """Average the per-context posterior means of z_i over ``S`` sampled contexts.

    With ``known_edges`` given, contexts forming one of those edges use the linked
    mean; all others stay Unknown.
    """
    contexts = np.asarray([c for c in contexts if c != i], dtype=np.int64)
    if len(contexts) == 0:
        raise ValueError(f"vertex {i}: empty context set")
    if S < 1:
        raise ValueError("S must be at least 1")
    if S < len(contexts):
        contexts = np.sort(rng.choice(contexts, size=S, replace=False))
    states = None
    if known_edges is not None:
        states = np.array(
            [Edge.PRESENT if (min(i, c), max(i, c)) in known_edges else Edge.UNKNOWN for c in contexts]
        )
    z = context_means(model, i, contexts, states).mean(axis=0)
    return VertexEmbedding(z, model.params["struct"][i].copy())


def all_embeddings(model: Model, S: int | None, rng: np.random.Generator, known_edges=None) -> np.ndarray:
    """Combined embeddings of every vertex, (N, d + d_w)."""
    n = model.network.n_vertices
    S = n - 1 if S is None else S
    return np.stack(
        [global_embedding(i, model, np.arange(n), S, rng, known_edges).combined for i in range(n)]
    )


@dataclass
class UnseenResult:
    embedding: VertexEmbedding
    h_star: np.ndarray
    trace: list = field(default_factory=list)


def _unseen_batch(model: Model, tokens, length, contexts):
    net = model.network
    L = net.max_len
    tok = np.zeros(L, dtype=np.int64)
    tok[: min(length, L)] = tokens[: min(length, L)]
    mask = np.arange(L) < min(length, L)
    if not mask.any():
        raise ValueError("unseen vertex has an empty text")
    n = len(contexts)
    return net.tokens[contexts], net.masks[contexts], np.tile(tok, (n, 1)), np.tile(mask, (n, 1))


def unseen_objective(model: Model, tokens, length, h_star, contexts, noise):
    """Mean incomplete-observation ELBO of (context, new vertex) pairs; new vertex second."""
    contexts = np.asarray(contexts, dtype=np.int64)
    tok_c, mask_c, tok_s, mask_s = _unseen_batch(model, tokens, length, contexts)
    n = len(contexts)
    h_c = model.params["struct"][contexts]
    h_s = ad.reshape(h_star, (1, -1)) * np.ones((n, 1))
    t = pair_terms(
        model.params, tok_c, mask_c, tok_s, mask_s, h_c, h_s,
        model.config.lam, model.pi0, noise,
    )
    pi = t.post.pi
    elbo = pi * (t.recon1 - t.kl1) + (1.0 - pi) * (t.recon0 - t.kl0) - t.klw
    return ad.mean(elbo)


def embed_unseen(
    tokens,
    length: int,
    model: Model,
    context_sample,
    steps: int = 100,
    lr: float = 1e-2,
    rng: np.random.Generator | None = None,
) -> UnseenResult:
    """Fit a structure vector for a new vertex with all trained weights frozen.

    The noise draw is fixed for the whole run, so the objective is a deterministic
    function of the structure vector and Adam ascends it.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    contexts = np.asarray(context_sample, dtype=np.int64)
    d_w = model.config.d_w
    store = ParameterStore({"h_star": rng.normal(0.0, 0.1, size=d_w)})
    noise = rng.standard_normal((model.config.n_samples, len(contexts), 2, 2 * model.config.d))
    trace = []
    for _ in range(steps):
        g = ad.Graph(store.params)
        obj = unseen_objective(model, tokens, length, g.param("h_star"), contexts, noise)
        grads = g.backward(-obj)
        trace.append(float(obj.value))
        adam_step(store, grads, lr=lr)
    h = store.params["h_star"]
    semantic = unseen_means(model, tokens, length, h, contexts).mean(axis=0)
    return UnseenResult(VertexEmbedding(semantic, h.copy()), h.copy(), trace)


def unseen_posterior(model: Model, tokens, length, h_star, contexts):
    contexts = np.asarray(contexts, dtype=np.int64)
    tok_c, mask_c, tok_s, mask_s = _unseen_batch(model, tokens, length, contexts)
    n = len(contexts)
    h_c = model.params["struct"][contexts]
    h_s = np.tile(np.asarray(h_star), (n, 1))
    return _encode_numpy(model, tok_c, mask_c, tok_s, mask_s, h_c, h_s)


def unseen_means(model: Model, tokens, length, h_star, contexts) -> np.ndarray:
    post = unseen_posterior(model, tokens, length, h_star, contexts)
    pi = post.pi[:, None]
    return pi * post.mu_j + (1 - pi) * post.mu0_j


def unseen_pi(model: Model, tokens, length, h_star, contexts) -> np.ndarray:
    return unseen_posterior(model, tokens, length, h_star, contexts).pi
