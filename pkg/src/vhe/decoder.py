"""Decoder: reconstruct max-pooled text features from latent codes."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad


def init_decoder(d: int, d_w: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    b1 = np.sqrt(6.0 / (d + d_w))
    b2 = np.sqrt(6.0 / (2 * d_w))
    return {
        "dec_W1": rng.uniform(-b1, b1, size=(d, d_w)),
        "dec_b1": np.zeros(d_w),
        "dec_W2": rng.uniform(-b2, b2, size=(d_w, d_w)),
        "dec_b2": np.zeros(d_w),
    }


def target_feature(x, mask):
    """Per-coordinate max over the real tokens of (..., L, d_w); carries no gradient."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ValueError("empty document: a text has no real tokens")
    return ad.detach(ad.masked_max(x, mask[..., :, None], axis=-2))


def reconstruct(params, z):
    hidden = ad.tanh(ad.matmul(z, params["dec_W1"]) + params["dec_b1"])
    return ad.matmul(hidden, params["dec_W2"]) + params["dec_b2"]


def _batched(z):
    # matmul needs a matrix; lift a bare d-vector to a 1-row batch
    if ad.value(z).ndim == 1:
        return ad.reshape(z, (1,) + ad.value(z).shape), True
    return z, False


def recon_loglik(t_i, t_j, z_i, z_j, params):
    """Unit-variance Gaussian log-likelihood up to a constant: minus the squared errors."""
    z_i, lifted = _batched(z_i)
    z_j, _ = _batched(z_j)
    err_i = ad.sum(ad.square(t_i - reconstruct(params, z_i)), axis=-1)
    err_j = ad.sum(ad.square(t_j - reconstruct(params, z_j)), axis=-1)
    out = -(err_i + err_j)
    if lifted:
        out = ad.reshape(out, ())
    return out
