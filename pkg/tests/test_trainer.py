import numpy as np
import pytest

from vhe import autodiff as ad
from vhe.checks import _model_cases, tiny_model
from vhe.decoder import recon_loglik, target_feature
from vhe.encoder import HEADS, encode_pair
from vhe.graph_data import Edge, Network, PairObservation, sample_pair_batch, split_edges
from vhe.latent import EPS, kl_bernoulli, kl_linked, kl_mixture, kl_unlinked, sample_pair
from vhe.optim import ParameterStore
from vhe.trainer import (
    PairTerms,
    TrainConfig,
    TrainingDiverged,
    batch_loss,
    combine,
    elbo_complete,
    elbo_incomplete,
    init_params,
    train,
)

D = 3  # latent size of the "tiny" model


def head(params, name, d=D):
    k = HEADS.index(name)
    return slice(k * d, (k + 1) * d)


def zero_integrator(params):
    for k in ("int_W1", "int_b1", "int_W2", "int_b2"):
        params[k] = np.zeros_like(params[k])
    return params


def targets_of(params, net, v):
    return target_feature(params["word_emb"][net.tokens[v]], net.masks[v])


def twin_network(net):
    """Copy of ``net`` where vertex 1 shares vertex 0's text."""
    tokens = net.tokens.copy()
    lengths = net.lengths.copy()
    tokens[1], lengths[1] = tokens[0], lengths[0]
    return Network(net.n_vertices, net.edges, tokens, lengths)


def perfect_decoder(params, target):
    params["dec_W2"] = np.zeros_like(params["dec_W2"])
    params["dec_b2"] = np.array(target, dtype=np.float64)
    return params


# -- combine


def test_combine_routes_by_edge_state():
    post = type("P", (), {"pi": np.array([0.3, 0.3, 0.3])})()
    t = PairTerms(post, np.full(3, -1.0), np.full(3, -2.0), np.full(3, 0.5), np.full(3, 0.25), np.full(3, 0.1))
    out = combine(t, np.array([1, 0, -1]))
    e1, e0 = -1.5, -2.25
    assert np.allclose(out, [e1, e0, 0.3 * e1 + 0.7 * e0 - 0.1])


# -- complete ELBO


def test_complete_elbo_zero_at_prior_with_perfect_recon():
    net, params, _ = tiny_model()
    net = twin_network(net)
    params = zero_integrator(params)  # mu = 0, logvar = 0, gamma = 0.5
    params = perfect_decoder(params, targets_of(params, net, 0))
    noise = np.random.default_rng(0).normal(size=(2, 2 * D))
    for w in (Edge.PRESENT, Edge.ABSENT):
        assert abs(elbo_complete(params, net, PairObservation(0, 1, w), 0.5, noise)) < 1e-12


def test_complete_elbo_decomposition(rng):
    net, params, _ = tiny_model(seed=3)
    noise = rng.normal(size=(2, 2 * D))
    lam = 0.9
    post = encode_pair(PairObservation(1, 3, Edge.UNKNOWN), net, params)
    t_i, t_j = targets_of(params, net, 1), targets_of(params, net, 3)
    for w, branch, kl in ((Edge.PRESENT, "linked", kl_linked(post, lam)), (Edge.ABSENT, "unlinked", kl_unlinked(post))):
        z_i, z_j = sample_pair(post, branch, noise[0 if branch == "linked" else 1])
        ref = recon_loglik(t_i, t_j, z_i, z_j, params) - kl
        got = elbo_complete(params, net, PairObservation(1, 3, w), lam, noise)
        assert abs(got - ref) < 1e-12


def test_absent_equals_present_with_tied_heads(rng):
    net, params, _ = tiny_model(seed=4)
    W2, b2 = params["int_W2"], params["int_b2"]
    for hat, plain in (("mu0_i", "mu_i"), ("mu0_j", "mu_j"), ("logvar0_i", "logvar_i"), ("logvar0_j", "logvar_j")):
        W2[:, head(params, hat)] = W2[:, head(params, plain)]
        b2[head(params, hat)] = b2[head(params, plain)]
    # gamma pinned at its lower clamp, so the linked posterior factorizes
    W2[:, head(params, "gamma")] = 0.0
    b2[head(params, "gamma")] = -50.0
    e = rng.normal(size=2 * D)
    noise = np.stack([e, e])
    e1 = elbo_complete(params, net, PairObservation(0, 2, Edge.PRESENT), 0.0, noise)
    e0 = elbo_complete(params, net, PairObservation(0, 2, Edge.ABSENT), 0.0, noise)
    # what remains is the O(EPS) correlation left by the clamp
    assert abs(e1 - e0) < 1e-4 * max(1.0, abs(e0))


def test_complete_rejects_unknown(rng):
    net, params, _ = tiny_model()
    with pytest.raises(ValueError):
        elbo_complete(params, net, PairObservation(0, 1, Edge.UNKNOWN), 0.5, np.zeros((2, 2 * D)))


# -- incomplete ELBO


def test_incomplete_elbo_zero_at_prior():
    net, params, _ = tiny_model()
    net = twin_network(net)
    params = zero_integrator(params)  # pi = 0.5
    params = perfect_decoder(params, targets_of(params, net, 0))
    noise = np.random.default_rng(1).normal(size=(2, 2 * D))
    assert abs(elbo_incomplete(params, net, PairObservation(0, 1, Edge.UNKNOWN), 0.5, 0.5, noise)) < 1e-12


def test_incomplete_elbo_three_terms(rng):
    net, params, _ = tiny_model(seed=5)
    noise = rng.normal(size=(2, 2 * D))
    lam, pi0 = 0.99, 0.05
    obs = PairObservation(2, 4, Edge.UNKNOWN)
    post = encode_pair(obs, net, params)
    t_i, t_j = targets_of(params, net, 2), targets_of(params, net, 4)
    r1 = recon_loglik(t_i, t_j, *sample_pair(post, "linked", noise[0]), params)
    r0 = recon_loglik(t_i, t_j, *sample_pair(post, "unlinked", noise[1]), params)
    ref = post.pi * r1 + (1 - post.pi) * r0 - kl_mixture(post, lam, pi0)
    assert abs(elbo_incomplete(params, net, obs, lam, pi0, noise) - ref) < 1e-12


def test_incomplete_continuity_at_pi_one(rng):
    net, params, _ = tiny_model(seed=6)
    params["int_W2"][:, -1] = 0.0
    params["int_b2"][-1] = 50.0  # pi clamps to 1 - EPS
    noise = rng.normal(size=(2, 2 * D))
    lam, pi0 = 0.9, 0.1
    inc = elbo_incomplete(params, net, PairObservation(0, 3, Edge.UNKNOWN), lam, pi0, noise)
    comp = elbo_complete(params, net, PairObservation(0, 3, Edge.PRESENT), lam, noise)
    ref = comp - kl_bernoulli(1 - EPS, pi0)
    assert abs(inc - ref) < 1e-4 * max(1.0, abs(ref))


# -- batch objective


def test_batch_loss_is_sum_of_pair_elbos(rng):
    net, params, _ = tiny_model("small", seed=2)
    obs = [
        PairObservation(0, 1, Edge.PRESENT),
        PairObservation(2, 5, Edge.ABSENT),
        PairObservation(3, 7, Edge.UNKNOWN),
        PairObservation(1, 2, Edge.UNKNOWN),
        PairObservation(4, 6, Edge.ABSENT),
    ]
    d = 4
    noise = rng.normal(size=(1, len(obs), 2, 2 * d))
    lam, pi0 = 0.99, 0.02
    total = batch_loss(params, net, obs, lam, pi0, noise)
    ref = 0.0
    for b, o in enumerate(obs):
        if o.w == Edge.UNKNOWN:
            ref += elbo_incomplete(params, net, o, lam, pi0, noise[0, b])
        else:
            ref += elbo_complete(params, net, o, lam, noise[0, b])
    assert abs(total + ref) < 1e-10 * max(1.0, abs(ref))


def test_observed_positives_only_leave_hatted_and_pi_heads_untouched(rng):
    net, params, _ = tiny_model("small", seed=8)
    split = split_edges(net, 1.0, seed=0)
    obs = sample_pair_batch(split, 6, 0, 0.0, rng)
    assert all(o.w == Edge.PRESENT for o in obs)
    g = ad.Graph(params)
    P = {k: g.param(k) for k in params}
    grads = g.backward(batch_loss(P, net, obs, 0.9, 0.1, rng.normal(size=(1, len(obs), 2, 8))))
    for name in ("mu0_i", "mu0_j", "logvar0_i", "logvar0_j"):
        assert np.all(grads["int_W2"][:, head(params, name, 4)] == 0)
    assert np.all(grads["int_W2"][:, -1] == 0)
    assert np.any(grads["int_W2"][:, head(params, "mu_i", 4)] != 0)


def test_full_batch_gradient_check():
    builders = {name: (p, b) for name, p, b in _model_cases(np.random.default_rng(0), "tiny")}
    params, build = builders["pair_elbo"]
    rep = ad.check_gradients(build, params, tolerance=1e-4)
    assert rep.passed, rep.lines()


# -- training loop


def tiny_training_setup(epochs, seed=0):
    net, _, cfg = tiny_model("small")
    split = split_edges(net, 1.0, seed=0)
    config = TrainConfig(d=4, d_w=6, max_len=7, kernels=5, kernel_width=5, epochs=epochs, batch_size=2, lr=1e-2, seed=seed)
    return net, split, config, cfg["vocab"]


def test_zero_epochs_returns_initialization():
    net, split, config, vocab = tiny_training_setup(0)
    res = train(net, split, config, vocab_size=vocab)
    init = init_params(config, net.n_vertices, vocab)
    assert res.trace == []
    for k, v in init.items():
        assert np.array_equal(res.model.params[k], v)


def test_training_is_deterministic(tmp_path):
    net, split, config, vocab = tiny_training_setup(3)
    a = train(net, split, config, vocab_size=vocab, trace_path=tmp_path / "a.tsv")
    b = train(net, split, config, vocab_size=vocab, trace_path=tmp_path / "b.tsv")
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()
    assert a.trace == b.trace
    for k in a.model.params:
        assert np.array_equal(a.model.params[k], b.model.params[k])
    epoch, step, loss = (tmp_path / "a.tsv").read_text().splitlines()[0].split("\t")
    assert (int(epoch), int(step)) == (0, 1) and np.isfinite(float(loss))


def test_divergence_reports_last_good_state():
    net, split, config, vocab = tiny_training_setup(2)
    params = init_params(config, net.n_vertices, vocab)
    params["int_b2"][head(params, "logvar_i", 4)] = 1000.0  # exp overflows on the first step
    store = ParameterStore({k: v.copy() for k, v in params.items()})
    with pytest.raises(TrainingDiverged, match="non-finite") as info:
        train(net, split, config, vocab_size=vocab, store=store)
    for k, v in params.items():
        assert np.array_equal(info.value.store.params[k], v)


def test_smoothed_loss_decreases(synth_run):
    trace = np.array(synth_run.trace)
    per_epoch = np.array([trace[trace[:, 0] == e, 2].mean() for e in range(50)])
    windows = per_epoch.reshape(5, 10).mean(axis=1)
    assert np.all(np.diff(windows) < 0), windows


def test_pi0_defaults_to_training_sparsity():
    net, split, config, _ = tiny_training_setup(0)
    n = net.n_vertices
    assert config.resolved_pi0(split) == pytest.approx(len(split.train_pos) / (n * (n - 1) / 2))
    assert TrainConfig(pi0=0.3).resolved_pi0(split) == 0.3


@pytest.mark.parametrize(
    "bad", [dict(lam=1.0), dict(alpha=1.5), dict(pi0=0.0), dict(kernel_width=4), dict(d=0), dict(epochs=-1)]
)
def test_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_defaults_match_reference_settings():
    c = TrainConfig()
    assert (c.d, c.d_w, c.kernels, c.kernel_width) == (100, 100, 200, 5)
    assert (c.lam, c.alpha, c.lr, c.pi0) == (0.99, 0.2, 1e-4, None)
