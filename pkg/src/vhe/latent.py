"""Homophilic priors, the correlated pair posterior and its KL divergences.

All functions accept either numpy arrays or autodiff Tensors. Vectors carry the
latent dimension on the last axis, so a leading batch axis works unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from . import autodiff as ad

EPS = 1e-6


@dataclass(frozen=True)
class HomophilicPrior:
    d: int
    lam: float = 0.99
    pi0: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.lam < 1.0:
            raise ValueError(f"homophily factor must lie in [0, 1), got {self.lam}")
        if not 0.0 < self.pi0 < 1.0:
            raise ValueError(f"prior edge probability must lie in (0, 1), got {self.pi0}")

    def covariance(self) -> np.ndarray:
        eye = np.eye(self.d)
        return np.block([[eye, self.lam * eye], [self.lam * eye, eye]])


@dataclass
class PairPosterior:
    """Linked (q1) and unlinked (q0, the ``*0`` fields) posterior of one or more pairs."""

    mu_i: Any
    mu_j: Any
    logvar_i: Any
    logvar_j: Any
    gamma: Any
    mu0_i: Any
    mu0_j: Any
    logvar0_i: Any
    logvar0_j: Any
    pi: Any = None

    def detached(self) -> "PairPosterior":
        vals = {k: (None if v is None else ad.value(v)) for k, v in self.__dict__.items()}
        return PairPosterior(**vals)

    def covariance(self) -> np.ndarray:
        """Dense 2d x 2d covariance of q1 for a single (unbatched) pair."""
        si = np.exp(0.5 * ad.value(self.logvar_i))
        sj = np.exp(0.5 * ad.value(self.logvar_j))
        g = ad.value(self.gamma)
        return np.block(
            [[np.diag(si**2), np.diag(g * si * sj)], [np.diag(g * si * sj), np.diag(sj**2)]]
        )


def cholesky_factor(sigma_i, sigma_j, gamma) -> np.ndarray:
    """Per-dimension 2x2 lower factors of the q1 covariance, shape (..., d, 2, 2)."""
    sigma_i = np.asarray(sigma_i, dtype=np.float64)
    sigma_j = np.asarray(sigma_j, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    if np.any(gamma >= 1.0) or np.any(gamma < 0.0):
        raise ValueError("gamma must lie in [0, 1)")
    if np.any(sigma_i <= 0) or np.any(sigma_j <= 0):
        raise ValueError("sigma must be strictly positive")
    out = np.zeros(np.broadcast_shapes(sigma_i.shape, sigma_j.shape, gamma.shape) + (2, 2))
    out[..., 0, 0] = sigma_i
    out[..., 1, 0] = gamma * sigma_j
    out[..., 1, 1] = np.sqrt(1.0 - gamma**2) * sigma_j
    return out


def dense_factor(blocks: np.ndarray) -> np.ndarray:
    """Assemble (d, 2, 2) blocks into the 2d x 2d factor ordered [z_i; z_j]."""
    d = blocks.shape[0]
    L = np.zeros((2 * d, 2 * d))
    idx = np.arange(d)
    L[idx, idx] = blocks[:, 0, 0]
    L[d + idx, idx] = blocks[:, 1, 0]
    L[d + idx, d + idx] = blocks[:, 1, 1]
    return L


def sample_pair(post: PairPosterior, branch: str, eps) -> tuple:
    """Reparameterized draw of (z_i, z_j); ``eps`` has shape (..., 2d)."""
    eps = np.asarray(eps, dtype=np.float64)
    d = eps.shape[-1] // 2
    e1, e2 = eps[..., :d], eps[..., d:]
    if branch == "linked":
        s_i = ad.exp(0.5 * post.logvar_i)
        s_j = ad.exp(0.5 * post.logvar_j)
        g = post.gamma
        z_i = post.mu_i + s_i * e1
        z_j = post.mu_j + g * s_j * e1 + ad.sqrt(1.0 - ad.square(g)) * s_j * e2
        return z_i, z_j
    if branch == "unlinked":
        z_i = post.mu0_i + ad.exp(0.5 * post.logvar0_i) * e1
        z_j = post.mu0_j + ad.exp(0.5 * post.logvar0_j) * e2
        return z_i, z_j
    raise ValueError(f"unknown branch {branch!r}")


def kl_linked(post: PairPosterior, lam: float):
    """KL(q1 || p1) in closed form, summed over the latent dimension."""
    if not 0.0 <= lam < 1.0:
        raise ValueError(f"homophily factor must lie in [0, 1), got {lam}")
    c = 1.0 - lam * lam
    var_i = ad.exp(post.logvar_i)
    var_j = ad.exp(post.logvar_j)
    s_i = ad.exp(0.5 * post.logvar_i)
    s_j = ad.exp(0.5 * post.logvar_j)
    g = post.gamma
    mu_i, mu_j = post.mu_i, post.mu_j
    terms = (
        (np.log(c) - 2.0)
        - ad.log(1.0 - ad.square(g))
        - post.logvar_i
        - post.logvar_j
        + (var_i + var_j - 2.0 * lam * g * s_i * s_j) / c
        + (ad.square(mu_i) + ad.square(mu_j) - 2.0 * lam * mu_i * mu_j) / c
    )
    return 0.5 * ad.sum(terms, axis=-1)


def kl_unlinked(post: PairPosterior):
    """KL(q0 || p0): two independent diagonal-Gaussian KLs."""
    terms = (
        ad.exp(post.logvar0_i)
        + ad.exp(post.logvar0_j)
        + ad.square(post.mu0_i)
        + ad.square(post.mu0_j)
        - post.logvar0_i
        - post.logvar0_j
        - 2.0
    )
    return 0.5 * ad.sum(terms, axis=-1)


def kl_bernoulli(pi, pi0: float):
    return pi * ad.log(pi / pi0) + (1.0 - pi) * ad.log((1.0 - pi) / (1.0 - pi0))


def kl_mixture(post: PairPosterior, lam: float, pi0: float):
    """KL of the joint (z_i, z_j, w) posterior against the Bernoulli-mixed prior."""
    if post.pi is None:
        raise ValueError("kl_mixture needs a posterior with an edge probability")
    pi = post.pi
    return pi * kl_linked(post, lam) + (1.0 - pi) * kl_unlinked(post) + kl_bernoulli(pi, pi0)


def squash(x):
    """Logistic map clamped to [EPS, 1 - EPS]."""
    return ad.clip(ad.sigmoid(x), EPS, 1.0 - EPS)
