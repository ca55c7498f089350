"""Link prediction, vertex classification and a synthetic homophilic network."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm, rankdata

from .graph_data import EdgeSplit, Network, Vocabulary, sample_non_edge
from .inference import all_embeddings, embed_unseen, posterior_pi, unseen_pi
from .trainer import Model

# ------------------------------------------------------------------ scoring


def score_pairs(model: Model, pairs, method: str = "posterior_pi", embeddings=None) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if method == "posterior_pi":
        return posterior_pi(model, pairs)
    if method == "cosine_global":
        if embeddings is None:
            raise ValueError("cosine_global scoring needs precomputed embeddings")
        a = embeddings[pairs[:, 0]]
        b = embeddings[pairs[:, 1]]
        return cosine(a, b)
    raise ValueError(f"unknown scoring method {method!r}")


def score_pair(i: int, j: int, model: Model, method: str = "posterior_pi", embeddings=None) -> float:
    return float(score_pairs(model, [(i, j)], method, embeddings)[0])


def cosine(a, b) -> np.ndarray:
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    num = (a * b).sum(axis=1)
    den = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    return num / np.maximum(den, 1e-300)


def auc(scores, labels) -> float:
    """Probability a random positive outscores a random negative; ties count 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc needs at least one positive and one negative")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


@dataclass
class LinkPredReport:
    auc: float
    n_pos: int
    n_neg: int
    quantile_auc: list = field(default_factory=list)  # AUC per training-degree quartile
    quantile_edges: list = field(default_factory=list)

    def lines(self) -> list[str]:
        out = [f"auc\t{self.auc!r}\t0.0", f"n_pos\t{self.n_pos}\t0", f"n_neg\t{self.n_neg}\t0"]
        for q, a in enumerate(self.quantile_auc):
            out.append(f"auc_degree_q{q + 1}\t{a!r}\t0.0")
        return out


def link_prediction_eval(
    model: Model | None,
    split: EdgeSplit,
    method: str = "posterior_pi",
    rng: np.random.Generator | None = None,
    network: Network | None = None,
    scorer: Callable[[np.ndarray], np.ndarray] | None = None,
    neg_per_pos: int = 1,
    embeddings=None,
) -> LinkPredReport:
    """AUC of held-out edges against uniformly drawn non-edges.

    ``scorer`` overrides the model (it maps an (n, 2) pair array to scores).
    Pairs are also binned into quartiles by the smaller training degree of their
    two endpoints, and an AUC is reported per bin (NaN if a bin lacks a class).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    network = network if network is not None else model.network
    if len(split.test_pos) == 0:
        raise ValueError("no test edges to evaluate")
    pos = np.asarray(split.test_pos, dtype=np.int64)
    neg = np.array(
        [sample_non_edge(network.n_vertices, network.edges, rng) for _ in range(neg_per_pos * len(pos))],
        dtype=np.int64,
    )
    pairs = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(len(pos), bool), np.zeros(len(neg), bool)])
    if scorer is None:
        scores = score_pairs(model, pairs, method, embeddings)
    else:
        scores = np.asarray(scorer(pairs), dtype=np.float64)
    deg = np.bincount(split.train_pos.ravel(), minlength=network.n_vertices)
    low = np.minimum(deg[pairs[:, 0]], deg[pairs[:, 1]])
    edges = np.quantile(low, [0.25, 0.5, 0.75])
    bins = np.searchsorted(edges, low, side="right")
    per_q = []
    for q in range(4):
        sel = bins == q
        if labels[sel].any() and (~labels[sel]).any():
            per_q.append(auc(scores[sel], labels[sel]))
        else:
            per_q.append(float("nan"))
    return LinkPredReport(auc(scores, labels), len(pos), len(neg), per_q, list(edges))


# ----------------------------------------------------------- classification


class HingeClassifier:
    """One-vs-rest linear classifier, L2-regularized hinge loss, full-batch subgradient descent."""

    def __init__(self, reg: float = 1e-3, epochs: int = 300, lr: float = 0.1):
        self.reg = reg
        self.epochs = epochs
        self.lr = lr

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        self.classes_ = np.unique(y)
        # centering and one global scale keep the fit rotation-equivariant
        self.center_ = X.mean(axis=0)
        self.scale_ = max(float(np.sqrt(((X - self.center_) ** 2).sum(axis=1).mean())), 1e-12)
        Xs = (X - self.center_) / self.scale_
        n, p = Xs.shape
        Y = np.where(y[:, None] == self.classes_[None, :], 1.0, -1.0)
        W = np.zeros((p, len(self.classes_)))
        b = np.zeros(len(self.classes_))
        for t in range(self.epochs):
            margin = Y * (Xs @ W + b)
            active = (margin < 1.0) * Y  # subgradient of the hinge
            gW = -(Xs.T @ active) / n + self.reg * W
            gb = -active.sum(axis=0) / n
            step = self.lr / np.sqrt(t + 1.0)
            W -= step * gW
            b -= step * gb
        self.W_, self.b_ = W, b
        return self

    def decision_function(self, X):
        Xs = (np.asarray(X, dtype=np.float64) - self.center_) / self.scale_
        return Xs @ self.W_ + self.b_

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


def stratified_split(labels, train_ratio, rng):
    train = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = rng.permutation(idx)
        k = int(round(train_ratio * len(idx)))
        train.extend(idx[:k])
    train = np.sort(np.array(train, dtype=np.int64))
    test = np.setdiff1d(np.arange(len(labels)), train)
    return train, test


def classify_vertices(
    embeddings,
    labels,
    train_ratio: float,
    repeats: int = 10,
    rng: np.random.Generator | None = None,
    **clf_kwargs,
) -> tuple[float, float]:
    """Mean and std of test accuracy of the linear classifier over random splits."""
    if not 0.0 < train_ratio < 1.0:
        raise ValueError(f"train_ratio must lie in (0, 1), got {train_ratio}")
    rng = np.random.default_rng(0) if rng is None else rng
    X = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    keep = y >= 0
    X, y = X[keep], y[keep]
    classes = np.unique(y)
    accs = []
    for _ in range(repeats):
        for _attempt in range(100):
            tr, te = stratified_split(y, train_ratio, rng)
            if len(np.unique(y[tr])) == len(classes) and len(te) > 0:
                break
        else:
            raise RuntimeError("could not draw a split covering every class")
        clf = HingeClassifier(**clf_kwargs).fit(X[tr], y[tr])
        accs.append(float((clf.predict(X[te]) == y[te]).mean()))
    return float(np.mean(accs)), float(np.std(accs))


# ---------------------------------------------------------------- synthetic


@dataclass
class SynthNetwork:
    network: Network
    vocab: Vocabulary
    codes: np.ndarray
    edge_prob: np.ndarray  # (N, N) generating probabilities
    word_vectors: np.ndarray  # (V, d_w) table under which max-pool features recover the code map


def homophily_log_ratio(codes: np.ndarray, lam: float) -> np.ndarray:
    """log p1(z_i, z_j) - log p0(z_i, z_j) for all pairs, summed over dimensions."""
    if lam == 0.0:
        return np.zeros((len(codes), len(codes)))
    c = 1.0 - lam * lam
    sq = (codes**2).sum(axis=1)
    cross = codes @ codes.T
    d = codes.shape[1]
    return -0.5 * d * np.log(c) - (lam * lam * (sq[:, None] + sq[None, :]) - 2 * lam * cross) / (2 * c)


def synth_network(
    N: int = 200,
    d: int = 8,
    d_w: int = 16,
    lam: float = 0.9,
    sparsity: float = 0.02,
    vocab_size: int = 192,
    L: int = 16,
    seed: int = 0,
    n_classes: int = 7,
    feature_noise: float = 0.1,
) -> SynthNetwork:
    """Sample a network whose edges and texts both derive from hidden vertex codes.

    Codes are standard normal. A pair links with probability
    ``sigmoid(log p1/p0 + b)``, the log density ratio between the correlated and
    the independent Gaussian pair prior, with ``b`` solved so the expected edge
    count is ``sparsity * N(N-1)/2``; ``lam = 0`` makes edges ignore the codes.
    Texts spell out a fixed random linear map of the code plus noise: every
    token names one coordinate of that feature vector and the quantile bin its
    value falls in (``vocab_size // d_w`` bins), and each text names every
    coordinate once (lengths between ``d_w`` and ``L`` are filled with repeats;
    ``L`` is raised to ``d_w`` if shorter). Under the returned ``word_vectors``
    the max-pooled text feature is exactly the quantized, standardized feature
    vector. Labels are the argmax of ``n_classes`` random projections of the code.
    """
    n_pairs = N * (N - 1) / 2
    if not 0.0 < sparsity < 1.0 or sparsity * n_pairs > n_pairs:
        raise ValueError(f"infeasible sparsity {sparsity}")
    if not 0.0 <= lam < 1.0:
        raise ValueError(f"lam must lie in [0, 1), got {lam}")
    rng = np.random.default_rng(seed)
    codes = rng.standard_normal((N, d))
    iu = np.triu_indices(N, k=1)
    ratio = homophily_log_ratio(codes, lam)[iu]
    target = sparsity * n_pairs

    def excess(b):
        return _sigmoid(ratio + b).sum() - target

    lo, hi = -1e3 - ratio.max(), 1e3 - ratio.min()
    b = brentq(excess, lo, hi, xtol=1e-12)
    p = _sigmoid(ratio + b)
    hit = rng.random(len(p)) < p
    edges = {(int(i), int(j)) for i, j, h in zip(iu[0], iu[1], hit) if h}
    prob = np.zeros((N, N))
    prob[iu] = p
    prob = prob + prob.T

    A = rng.standard_normal((d_w, d)) / np.sqrt(d)
    feats = codes @ A.T + feature_noise * rng.standard_normal((N, d_w))
    scale = np.sqrt((A**2).sum(axis=1) + feature_noise**2)
    # token = (feature coordinate, quantile bin of its value); bins are equiprobable
    n_bins = max(2, vocab_size // d_w)
    cuts = norm.ppf(np.arange(1, n_bins) / n_bins)
    centers = norm.ppf((np.arange(n_bins) + 0.5) / n_bins)
    bins = np.stack([np.searchsorted(cuts, feats[:, m] / scale[m]) for m in range(d_w)], axis=1)
    words = 2 + np.arange(d_w)[None, :] * n_bins + bins  # (N, d_w)
    vocab = Vocabulary(["<pad>", "<unk>"] + [f"f{m}b{b}" for m in range(d_w) for b in range(n_bins)])
    # word (m, b) carries its bin value on coordinate m and sits below every bin
    # elsewhere, so the max-pool over a text that names each coordinate once
    # returns the quantized feature vector (up to a constant shift, chosen so the
    # average word vector is zero)
    floor = centers[0] - 1.0
    vectors = np.full((len(vocab), d_w), floor)
    for m in range(d_w):
        vectors[2 + m * n_bins : 2 + (m + 1) * n_bins, m] = centers
    vectors -= floor * (d_w - 1) / d_w
    vectors[:2] = 0.0
    L = max(L, d_w)
    tokens = np.zeros((N, L), dtype=np.int64)
    lengths = rng.integers(d_w, L + 1, size=N)
    for v in range(N):
        extra = rng.integers(0, d_w, size=lengths[v] - d_w)
        tokens[v, : lengths[v]] = words[v, np.concatenate([rng.permutation(d_w), extra])]

    directions = rng.standard_normal((n_classes, d))
    labels = np.argmax(codes @ directions.T, axis=1)
    net = Network(N, edges, tokens, lengths, labels)
    return SynthNetwork(net, vocab, codes, prob, vectors)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def holdout_vertices(network: Network, frac: float, seed: int):
    """Split vertex ids into (kept, held-out) with ``frac`` held out."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(network.n_vertices)
    n_out = int(round(frac * network.n_vertices))
    return np.sort(perm[n_out:]), np.sort(perm[:n_out])


@dataclass
class UnseenReport:
    auc: float
    n_pos: int
    n_neg: int
    n_vertices: int

    def lines(self) -> list[str]:
        return [f"unseen_auc\t{self.auc!r}", f"n_pos\t{self.n_pos}", f"n_neg\t{self.n_neg}", f"n_vertices\t{self.n_vertices}"]


def unseen_link_eval(
    model: Model,
    full: Network,
    held,
    remap,
    rng: np.random.Generator,
    method: str = "cosine_global",
    n_contexts: int = 64,
    steps: int = 100,
    lr: float = 1e-2,
    S: int | None = 50,
) -> UnseenReport:
    """Link prediction for vertices absent from training.

    ``model`` was trained on the subnetwork of kept vertices (``remap`` maps full
    ids to its ids, -1 for held-out ones). Every held-out vertex is embedded from
    its text alone with :func:`embed_unseen`; its edges to kept vertices are the
    positives, each matched with one kept vertex it does not link to. Scores are
    the cosine between the new embedding and the kept vertex's global embedding,
    or the edge probability of the pair (``posterior_pi``).
    """
    remap = np.asarray(remap)
    kept = np.flatnonzero(remap >= 0)
    emb = all_embeddings(model, S, rng) if method == "cosine_global" else None
    scores, labels = [], []
    used = 0
    for u in np.asarray(held):
        u = int(u)
        pos = [int(k) for k in kept if (min(u, k), max(u, k)) in full.edges]
        if not pos:
            continue
        neg = []
        while len(neg) < len(pos):
            k = int(rng.choice(kept))
            if (min(u, k), max(u, k)) not in full.edges:
                neg.append(k)
        n_ctx = min(n_contexts, model.network.n_vertices)
        ctx = rng.choice(model.network.n_vertices, size=n_ctx, replace=False)
        res = embed_unseen(full.tokens[u], int(full.lengths[u]), model, ctx, steps=steps, lr=lr, rng=rng)
        others = remap[np.array(pos + neg)]
        if method == "cosine_global":
            s = cosine(np.tile(res.embedding.combined, (len(others), 1)), emb[others])
        elif method == "posterior_pi":
            s = unseen_pi(model, full.tokens[u], int(full.lengths[u]), res.h_star, others)
        else:
            raise ValueError(f"unknown scoring method {method!r}")
        scores.append(s)
        labels.append(np.r_[np.ones(len(pos), bool), np.zeros(len(neg), bool)])
        used += 1
    if not scores:
        raise ValueError("no held-out vertex has an edge to a kept vertex")
    labels = np.concatenate(labels)
    return UnseenReport(auc(np.concatenate(scores), labels), int(labels.sum()), int((~labels).sum()), used)
