import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vhe import autodiff as ad
from vhe.checks import tiny_model
from vhe.encoder import HEADS, align, encode_pair, init_encoder, similarity_matrix, text_embedding
from vhe.graph_data import Edge, Network, PairObservation


def small_net(L=4, lengths=(3, 2, 4)):
    tokens = np.zeros((len(lengths), L), dtype=np.int64)
    for v, n in enumerate(lengths):
        tokens[v, :n] = np.arange(2, 2 + n) + v
    return Network(len(lengths), {(0, 1)}, tokens, np.array(lengths))


# -- similarity matrix


def test_similarity_symmetric(rng):
    x = rng.normal(size=(4, 3))
    M = similarity_matrix(x, x)
    assert np.allclose(M, M.T)


def test_similarity_orthonormal_identity(rng):
    q, _ = np.linalg.qr(rng.normal(size=(5, 4)))
    x = q.T  # 4 tokens, orthonormal rows in R^5
    assert np.allclose(similarity_matrix(x, x), np.eye(4))


def test_similarity_loop_oracle(rng):
    x_i = rng.normal(size=(4, 3))
    x_j = rng.normal(size=(4, 3))
    ref = np.array([[sum(x_i[a, k] * x_j[b, k] for k in range(3)) for b in range(4)] for a in range(4)])
    assert np.allclose(similarity_matrix(x_i, x_j), ref)


# -- alignment


def reference_align(M, U, V, mask_i, mask_j):
    """conv -> tanh -> max over kernels -> masked softmax, one loop at a time."""
    L = M.shape[0]
    K, _, width = U.shape
    half = width // 2
    Mm = M * np.outer(mask_i, mask_j)

    def side(S, kernels, mask):
        # S rows index output positions, columns are the input channels
        F = np.zeros((K, L))
        for k in range(K):
            for p in range(L):
                acc = 0.0
                for c in range(L):
                    for t in range(width):
                        q = p + t - half
                        if 0 <= q < L:
                            acc += kernels[k, c, t] * S[q, c]
                F[k, p] = math.tanh(acc)
        pooled = F.max(axis=0)
        e = np.where(mask, np.exp(pooled - pooled[mask].max()), 0.0)
        return e / e.sum()

    return side(Mm, U, mask_i), side(Mm.T, V, mask_j)


def test_align_loop_oracle(rng):
    M = rng.normal(size=(4, 4))
    U = rng.normal(size=(3, 4, 3))
    V = rng.normal(size=(3, 4, 3))
    mask_i = np.array([1, 1, 1, 0], dtype=bool)
    mask_j = np.array([1, 1, 1, 1], dtype=bool)
    w_i, w_j = align(M, U, V, mask_i, mask_j)
    r_i, r_j = reference_align(M, U, V, mask_i, mask_j)
    assert np.allclose(w_i, r_i, atol=1e-12) and np.allclose(w_j, r_j, atol=1e-12)


def test_align_single_token(rng):
    M = rng.normal(size=(4, 4))
    U = rng.normal(size=(2, 4, 3))
    mask = np.array([1, 0, 0, 0], dtype=bool)
    w_i, _ = align(M, U, U, mask, np.ones(4, dtype=bool))
    assert np.array_equal(w_i, [1.0, 0.0, 0.0, 0.0])


def test_align_constant_is_uniform():
    L = 5
    M = np.full((L, L), 0.3)
    U = np.full((2, L, 1), 0.1)  # width 1: no border effect from padding
    mask = np.array([1, 1, 1, 0, 0], dtype=bool)
    w_i, w_j = align(M, U, U, mask, mask)
    assert np.allclose(w_i, [1 / 3, 1 / 3, 1 / 3, 0, 0])
    assert np.allclose(w_j, w_i)


def test_align_empty_document(rng):
    with pytest.raises(ValueError, match="empty document"):
        align(rng.normal(size=(3, 3)), np.ones((2, 3, 3)), np.ones((2, 3, 3)), np.zeros(3, bool), np.ones(3, bool))


@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 5))
def test_align_weights_are_distributions(seed, n_i, n_j):
    rng = np.random.default_rng(seed)
    L = 5
    mask_i = np.arange(L) < n_i
    mask_j = np.arange(L) < n_j
    w_i, w_j = align(rng.normal(size=(L, L)) * 3, rng.normal(size=(4, L, 3)), rng.normal(size=(4, L, 3)), mask_i, mask_j)
    for w, m in ((w_i, mask_i), (w_j, mask_j)):
        assert np.all(w >= 0) and np.all(w[~m] == 0)
        assert abs(w.sum() - 1) < 1e-12


# -- text embedding


def test_text_embedding_one_hot(rng):
    x = rng.normal(size=(4, 3))
    assert np.allclose(text_embedding(x, np.array([0, 0, 1.0, 0])), x[2])


def test_text_embedding_shared_column():
    x = np.array([[1.0, 2.0], [1.0, 2.0], [9.0, 9.0]])
    assert np.allclose(text_embedding(x, np.array([0.5, 0.5, 0.0])), [1.0, 2.0])


def test_text_embedding_loop_oracle(rng):
    x = rng.normal(size=(2, 5, 3))
    w = rng.dirichlet(np.ones(5), size=2)
    ref = np.array([[sum(w[b, t] * x[b, t, k] for t in range(5)) for k in range(3)] for b in range(2)])
    assert np.allclose(text_embedding(x, w), ref)


# -- encode_pair


def test_zero_network_forward():
    net = small_net()
    params = init_encoder(3, 10, 2, 3, 4, 2, 3, np.random.default_rng(0))
    for k in ("int_W1", "int_b1", "int_W2", "int_b2"):
        params[k] = np.zeros_like(params[k])
    post = encode_pair(PairObservation(0, 1, Edge.UNKNOWN), net, params)
    for name in ("mu_i", "mu_j", "logvar_i", "logvar_j", "mu0_i", "mu0_j", "logvar0_i", "logvar0_j"):
        assert np.array_equal(getattr(post, name), np.zeros(2))
    assert np.allclose(post.gamma, 0.5) and np.isclose(post.pi, 0.5)


@pytest.mark.parametrize("w", [Edge.PRESENT, Edge.ABSENT])
def test_pi_only_for_unknown(w):
    net, params, _ = tiny_model()
    assert encode_pair(PairObservation(0, 1, w), net, params).pi is None
    assert encode_pair(PairObservation(0, 1, Edge.UNKNOWN), net, params).pi is not None


def test_pad_ids_do_not_matter():
    net, params, cfg = tiny_model("small")
    rng = np.random.default_rng(3)
    obs = PairObservation(0, 2, Edge.UNKNOWN)
    base = encode_pair(obs, net, params)
    tokens = net.tokens.copy()
    pad = ~net.masks
    tokens[pad] = rng.integers(0, cfg["vocab"], size=pad.sum())
    other = encode_pair(obs, Network(net.n_vertices, net.edges, tokens, net.lengths), params)
    for name in HEADS + ("pi",):
        assert np.array_equal(getattr(base, name), getattr(other, name))


def reference_forward(params, net, i, j, d):
    """Independent straight-line forward of one pair."""
    E = params["word_emb"]
    L = net.max_len
    m_i, m_j = net.masks[i], net.masks[j]
    x_i, x_j = E[net.tokens[i]], E[net.tokens[j]]
    M = np.array([[x_i[a] @ x_j[b] for b in range(L)] for a in range(L)])
    w_i, w_j = reference_align(M, params["U"], params["V"], m_i, m_j)
    f = np.concatenate([w_i @ x_i, w_j @ x_j, params["struct"][i], params["struct"][j]])
    hidden = np.tanh(f @ params["int_W1"] + params["int_b1"])
    out = hidden @ params["int_W2"] + params["int_b2"]
    logistic = lambda v: np.clip(1 / (1 + np.exp(-v)), 1e-6, 1 - 1e-6)
    res = {name: out[k * d : (k + 1) * d] for k, name in enumerate(HEADS)}
    res["gamma"] = logistic(res["gamma"])
    res["pi"] = logistic(out[-1])
    return res


def test_reference_forward_oracle():
    rng = np.random.default_rng(11)
    d, d_w, L = 2, 3, 4
    net = small_net(L=L)
    params = init_encoder(3, 10, d, d_w, L, 3, 3, rng, emb_init=0.8)
    params["int_b2"] = rng.normal(scale=0.3, size=params["int_b2"].shape)
    post = encode_pair(PairObservation(0, 2, Edge.UNKNOWN), net, params)
    ref = reference_forward(params, net, 0, 2, d)
    for name, value in ref.items():
        assert np.allclose(getattr(post, name), value, atol=1e-12), name


def test_encode_pair_gradients():
    net, params, _ = tiny_model()
    enc = {k: v for k, v in params.items() if not k.startswith("dec_")}
    weights = np.random.default_rng(5).normal(size=len(HEADS) * 3 + 1)

    def build(g):
        post = encode_pair(PairObservation(1, 3, Edge.UNKNOWN), net, {k: g.param(k) for k in enc})
        parts = [getattr(post, n) for n in HEADS] + [ad.reshape(post.pi, (1,))]
        return ad.sum(ad.concat(parts, axis=0) * weights)

    rep = ad.check_gradients(build, enc, tolerance=1e-4)
    assert rep.passed, rep.lines()
    assert set(rep.errors) >= {"word_emb", "struct", "U", "V", "int_W1", "int_W2"}


def test_init_validation(rng):
    with pytest.raises(ValueError, match="odd"):
        init_encoder(3, 10, 2, 3, 4, 2, 4, rng)
    with pytest.raises(ValueError, match="shape"):
        init_encoder(3, 10, 2, 3, 4, 2, 3, rng, word_vectors=np.zeros((10, 4)))
    wv = rng.normal(size=(10, 3))
    assert np.array_equal(init_encoder(3, 10, 2, 3, 4, 2, 3, rng, word_vectors=wv)["word_emb"], wv)
    p = init_encoder(3, 10, 2, 3, 4, 2, 3, rng)
    assert np.all(np.abs(p["word_emb"]) <= 0.05)
    assert p["int_W2"].shape == (12, 9 * 2 + 1)
