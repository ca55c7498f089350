"""Pair encoder: phrase-to-word alignment, structure lookup and the integrator MLP.

Texts are handled as (..., L, d_w) stacks of word vectors (one row per token).
``params`` is a mapping from parameter name to array or Tensor; passing arrays
gives a plain forward pass.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .graph_data import Edge, Network, PairObservation
from .latent import PairPosterior, squash

#: integrator output layout, in units of the latent dimension d (pi is 1 wide)
HEADS = ("mu_i", "mu_j", "logvar_i", "logvar_j", "gamma", "mu0_i", "mu0_j", "logvar0_i", "logvar0_j")


def init_encoder(
    n_vertices: int,
    vocab_size: int,
    d: int,
    d_w: int,
    max_len: int,
    kernels: int,
    width: int,
    rng: np.random.Generator,
    emb_init: float = 0.05,
    word_vectors: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Initial encoder weights. ``word_vectors`` (vocab_size, d_w), when given,
    replaces the uniform(-emb_init, emb_init) word embedding draw."""
    if width % 2 != 1:
        raise ValueError(f"kernel width must be odd, got {width}")
    word_emb = rng.uniform(-emb_init, emb_init, size=(vocab_size, d_w))
    if word_vectors is not None:
        word_vectors = np.asarray(word_vectors, dtype=np.float64)
        if word_vectors.shape != (vocab_size, d_w):
            raise ValueError(f"word vectors have shape {word_vectors.shape}, expected {(vocab_size, d_w)}")
        word_emb = word_vectors.copy()
    fan = max_len * width
    k_bound = np.sqrt(6.0 / (fan + kernels))
    hidden = 4 * d_w
    n_out = len(HEADS) * d + 1
    return {
        "word_emb": word_emb,
        "struct": rng.normal(0.0, 0.1, size=(n_vertices, d_w)),
        "U": rng.uniform(-k_bound, k_bound, size=(kernels, max_len, width)),
        "V": rng.uniform(-k_bound, k_bound, size=(kernels, max_len, width)),
        "int_W1": _glorot(rng, 4 * d_w, hidden),
        "int_b1": np.zeros(hidden),
        "int_W2": _glorot(rng, hidden, n_out),
        "int_b2": np.zeros(n_out),
    }


def _glorot(rng, n_in, n_out):
    bound = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-bound, bound, size=(n_in, n_out))


def similarity_matrix(x_i, x_j):
    """Token-by-token dot products, (..., L_i, L_j)."""
    return ad.matmul(x_i, ad.swapaxes(x_j, -1, -2))


def align(M, U, V, mask_i, mask_j):
    """Alignment weights over the tokens of each text from their similarity matrix.

    Rows/columns belonging to padding are zeroed before the convolutions, so the
    result does not depend on what the pad ids embed to.
    """
    mask_i = np.asarray(mask_i, dtype=bool)
    mask_j = np.asarray(mask_j, dtype=bool)
    if not mask_i.any(axis=-1).all() or not mask_j.any(axis=-1).all():
        raise ValueError("empty document: a text has no real tokens")
    pair_mask = (mask_i[..., :, None] & mask_j[..., None, :]).astype(np.float64)
    M = M * pair_mask
    # rows of F_i run over positions of text i, channels over positions of text j
    f_i = ad.tanh(ad.conv1d(ad.swapaxes(M, -1, -2), U))
    f_j = ad.tanh(ad.conv1d(M, V))
    w_i = ad.masked_softmax(ad.masked_max(f_i, axis=-2), mask_i)
    w_j = ad.masked_softmax(ad.masked_max(f_j, axis=-2), mask_j)
    return w_i, w_j


def text_embedding(x, w):
    """Alignment-weighted sum of token vectors: (..., L, d_w), (..., L) -> (..., d_w)."""
    shape = ad.value(w).shape
    row = ad.reshape(w, shape[:-1] + (1, shape[-1]))
    out = ad.matmul(row, x)
    return ad.reshape(out, shape[:-1] + (ad.value(x).shape[-1],))


def integrate(params, features, d: int):
    """Run the integrator MLP and map its heads to a :class:`PairPosterior`."""
    hidden = ad.tanh(ad.matmul(features, params["int_W1"]) + params["int_b1"])
    out = ad.matmul(hidden, params["int_W2"]) + params["int_b2"]
    parts = {name: out[..., k * d : (k + 1) * d] for k, name in enumerate(HEADS)}
    n = len(HEADS) * d
    pi = squash(out[..., n])
    parts["gamma"] = squash(parts["gamma"])
    return PairPosterior(pi=pi, **parts)


def encode(params, tok_i, mask_i, tok_j, mask_j, h_i, h_j, d: int):
    """Batched encoder. ``tok_*``/``mask_*`` are (B, L); ``h_*`` are (B, d_w).

    Returns the posterior (with ``pi`` always filled in) and the embedded texts.
    """
    x_i = ad.gather(params["word_emb"], tok_i)
    x_j = ad.gather(params["word_emb"], tok_j)
    M = similarity_matrix(x_i, x_j)
    w_i, w_j = align(M, params["U"], params["V"], mask_i, mask_j)
    feats = ad.concat([text_embedding(x_i, w_i), text_embedding(x_j, w_j), h_i, h_j], axis=-1)
    return integrate(params, feats, d), (x_i, x_j)


def latent_dim(params) -> int:
    return (ad.value(params["int_b2"]).shape[0] - 1) // len(HEADS)


def encode_pair(obs: PairObservation, network: Network, params) -> PairPosterior:
    """Posterior of a single observed pair; ``pi`` is set only for Unknown pairs."""
    i, j = obs.i, obs.j
    masks = network.masks
    h = ad.gather(params["struct"], np.array([i, j]))
    post, _ = encode(
        params,
        network.tokens[[i]],
        masks[[i]],
        network.tokens[[j]],
        masks[[j]],
        h[0:1],
        h[1:2],
        latent_dim(params),
    )
    fields = {k: v[0] for k, v in post.__dict__.items()}
    if obs.w != Edge.UNKNOWN:
        fields["pi"] = None
    return PairPosterior(**fields)
