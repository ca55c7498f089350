"""Per-pair ELBOs, the summed training objective and the optimization loop."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .decoder import init_decoder, recon_loglik, target_feature
from .encoder import encode, init_encoder
from .graph_data import Edge, EdgeSplit, Network, PairObservation, sample_pair_batch
from .latent import kl_bernoulli, kl_linked, kl_unlinked, sample_pair
from .optim import ParameterStore, adam_step, save_checkpoint

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    d: int = 100
    d_w: int = 100
    max_len: int = 128
    kernels: int = 200
    kernel_width: int = 5
    lam: float = 0.99
    alpha: float = 0.2
    pi0: float | None = None  # None: use the training-graph sparsity
    neg_per_pos: int = 1
    batch_size: int = 64
    epochs: int = 10
    lr: float = 1e-4
    seed: int = 0
    deterministic: bool = True
    n_samples: int = 1
    checkpoint_every: int = 0
    emb_init: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.lam < 1.0:
            raise ValueError(f"lam must lie in [0, 1), got {self.lam}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.pi0 is not None and not 0.0 < self.pi0 < 1.0:
            raise ValueError(f"pi0 must lie in (0, 1), got {self.pi0}")
        if self.kernel_width % 2 != 1:
            raise ValueError(f"kernel_width must be odd, got {self.kernel_width}")
        for name in ("d", "d_w", "max_len", "kernels", "batch_size", "n_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0 or self.neg_per_pos < 0:
            raise ValueError("epochs and neg_per_pos must be non-negative")

    def resolved_pi0(self, split: EdgeSplit) -> float:
        if self.pi0 is not None:
            return self.pi0
        n = split.n_vertices
        s = len(split.train_pos) / (n * (n - 1) / 2)
        return float(np.clip(s, 1e-6, 1 - 1e-6))


@dataclass
class Model:
    """Trained parameters plus what is needed to run them on a network."""

    params: dict[str, np.ndarray]
    config: TrainConfig
    network: Network
    pi0: float


def init_params(config: TrainConfig, n_vertices: int, vocab_size: int, word_vectors=None) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(config.seed)
    params = init_encoder(
        n_vertices, vocab_size, config.d, config.d_w, config.max_len,
        config.kernels, config.kernel_width, rng, emb_init=config.emb_init, word_vectors=word_vectors,
    )
    params.update(init_decoder(config.d, config.d_w, rng))
    return params


@dataclass
class PairTerms:
    post: object
    recon1: object
    recon0: object
    kl1: object
    kl0: object
    klw: object


def pair_terms(params, tok_i, mask_i, tok_j, mask_j, h_i, h_j, lam, pi0, noise, targets=None) -> PairTerms:
    """Everything both ELBO forms need, for a batch of B pairs.

    ``noise`` is (S, B, 2, 2d): S samples, then linked (0) / unlinked (1) branch.
    ``targets`` optionally supplies the reconstruction targets (t_i, t_j) instead
    of max-pooling the current word embeddings; gradients never reach them
    either way, so fixing them only matters for finite-difference checks.
    """
    d = noise.shape[-1] // 2
    post, (x_i, x_j) = encode(params, tok_i, mask_i, tok_j, mask_j, h_i, h_j, d)
    if targets is None:
        t_i = target_feature(x_i, mask_i)
        t_j = target_feature(x_j, mask_j)
    else:
        t_i, t_j = targets
    n_samples = noise.shape[0]
    recon = []
    for branch, b in (("linked", 0), ("unlinked", 1)):
        total = 0.0
        for s in range(n_samples):
            z_i, z_j = sample_pair(post, branch, noise[s, :, b])
            total = total + recon_loglik(t_i, t_j, z_i, z_j, params)
        recon.append(total / n_samples if n_samples > 1 else total)
    return PairTerms(
        post, recon[0], recon[1], kl_linked(post, lam), kl_unlinked(post), kl_bernoulli(post.pi, pi0)
    )


def combine(terms: PairTerms, w: np.ndarray):
    """Per-pair ELBO selecting the complete (w = 0/1) or incomplete form."""
    w = np.asarray(w)
    c1 = (w == Edge.PRESENT).astype(np.float64)
    c0 = (w == Edge.ABSENT).astype(np.float64)
    cu = (w == Edge.UNKNOWN).astype(np.float64)
    e1 = terms.recon1 - terms.kl1
    e0 = terms.recon0 - terms.kl0
    pi = terms.post.pi
    mixed = pi * e1 + (1.0 - pi) * e0 - terms.klw
    return c1 * e1 + c0 * e0 + cu * mixed


def _arrays(network: Network, i, j):
    masks = network.masks
    return network.tokens[i], masks[i], network.tokens[j], masks[j]


def batch_elbos(params, network: Network, i, j, w, lam, pi0, noise):
    i = np.asarray(i)
    j = np.asarray(j)
    tok_i, mask_i, tok_j, mask_j = _arrays(network, i, j)
    h_i = ad.gather(params["struct"], i)
    h_j = ad.gather(params["struct"], j)
    terms = pair_terms(params, tok_i, mask_i, tok_j, mask_j, h_i, h_j, lam, pi0, noise)
    return combine(terms, w)


def batch_loss(params, network: Network, obs: list[PairObservation], lam, pi0, noise):
    """Negated sum of per-pair ELBOs (the quantity minimized)."""
    i = [o.i for o in obs]
    j = [o.j for o in obs]
    w = [int(o.w) for o in obs]
    return -ad.sum(batch_elbos(params, network, i, j, w, lam, pi0, noise))


def _single(params, network, obs, lam, pi0, noise):
    noise = np.asarray(noise, dtype=np.float64)
    if noise.ndim == 2:  # (2, 2d): one sample per branch
        noise = noise[None]
    noise = noise[:, None]
    tok_i, mask_i, tok_j, mask_j = _arrays(network, [obs.i], [obs.j])
    h_i = ad.gather(params["struct"], np.array([obs.i]))
    h_j = ad.gather(params["struct"], np.array([obs.j]))
    return pair_terms(params, tok_i, mask_i, tok_j, mask_j, h_i, h_j, lam, pi0, noise)


def elbo_complete(params, network: Network, obs: PairObservation, lam: float, noise):
    """ELBO of a pair whose edge state is observed. ``noise`` is (2, 2d) or (S, 2, 2d)."""
    if obs.w == Edge.UNKNOWN:
        raise ValueError("elbo_complete needs an observed edge state")
    t = _single(params, network, obs, lam, 0.5, noise)
    if obs.w == Edge.PRESENT:
        out = t.recon1 - t.kl1
    else:
        out = t.recon0 - t.kl0
    return ad.reshape(out, ())


def elbo_incomplete(params, network: Network, obs: PairObservation, lam: float, pi0: float, noise):
    """ELBO of a pair with a latent edge indicator, marginalized over it exactly."""
    t = _single(params, network, obs, lam, pi0, noise)
    pi = t.post.pi
    kl = pi * t.kl1 + (1.0 - pi) * t.kl0 + t.klw
    out = pi * t.recon1 + (1.0 - pi) * t.recon0 - kl
    return ad.reshape(out, ())


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, store: ParameterStore):
        super().__init__(msg)
        self.store = store


@dataclass
class TrainResult:
    model: Model
    store: ParameterStore
    trace: list = field(default_factory=list)  # (epoch, step, loss)


def format_trace_line(epoch: int, step: int, loss: float) -> str:
    return f"{epoch}\t{step}\t{loss!r}\n"


def train(
    network: Network,
    split: EdgeSplit,
    config: TrainConfig,
    vocab_size: int | None = None,
    store: ParameterStore | None = None,
    trace_path=None,
    checkpoint_path=None,
    word_vectors=None,
) -> TrainResult:
    """Maximize the summed ELBO over freshly sampled pair batches with Adam.

    ``word_vectors`` optionally initializes the word embeddings (ignored when
    resuming from ``store``).
    """
    if vocab_size is None:
        vocab_size = len(word_vectors) if word_vectors is not None else int(network.tokens.max()) + 1
    if network.max_len != config.max_len:
        raise ValueError(f"network texts have length {network.max_len}, config max_len={config.max_len}")
    if store is None:
        store = ParameterStore(init_params(config, network.n_vertices, vocab_size, word_vectors))
    pi0 = config.resolved_pi0(split)
    rng = np.random.default_rng(config.seed + 1)
    train_set = split.train_set()
    trace = []
    fh = open(trace_path, "w") if trace_path else None
    last_good = store.copy()
    try:
        for epoch in range(config.epochs):
            order = rng.permutation(len(split.train_pos))
            for start in range(0, len(order), config.batch_size):
                pos = split.train_pos[order[start : start + config.batch_size]]
                obs = sample_pair_batch(
                    split, len(pos), config.neg_per_pos, config.alpha, rng,
                    positives=pos, train_set=train_set,
                )
                noise = rng.standard_normal((config.n_samples, len(obs), 2, 2 * config.d))
                g = ad.Graph(store.params)
                P = {k: g.param(k) for k in store.params}
                try:
                    loss = batch_loss(P, network, obs, config.lam, pi0, noise)
                    grads = g.backward(loss)
                except ad.NonFiniteError as exc:
                    raise TrainingDiverged(
                        f"non-finite value at epoch {epoch}, step {store.step}: {exc}", last_good
                    ) from exc
                adam_step(store, grads, lr=config.lr)
                row = (epoch, store.step, float(loss.value))
                trace.append(row)
                if fh:
                    fh.write(format_trace_line(*row))
            last_good = store.copy()
            if checkpoint_path and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
                save_checkpoint(store, checkpoint_path)
            log.info("epoch %d done, last loss %.4f", epoch, trace[-1][2] if trace else float("nan"))
    finally:
        if fh:
            fh.close()
    if checkpoint_path:
        save_checkpoint(store, checkpoint_path)
    model = Model({k: v.copy() for k, v in store.params.items()}, config, network, pi0)
    return TrainResult(model, store, trace)


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
