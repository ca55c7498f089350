import numpy as np
import pytest
from hypothesis import settings

from vhe.evaluate import synth_network
from vhe.graph_data import split_edges
from vhe.trainer import TrainConfig, train

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

# small-but-real settings shared by the slower tests
SYNTH_TRAIN = dict(d=8, d_w=16, max_len=16, kernels=16, kernel_width=5, lr=1e-2, batch_size=16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synth():
    return synth_network(N=200, d=8, d_w=16, lam=0.9, sparsity=0.02, L=16, seed=0)


@pytest.fixture(scope="session")
def synth_split(synth):
    return split_edges(synth.network, 0.75, seed=0)


@pytest.fixture(scope="session")
def synth_run(synth, synth_split):
    cfg = TrainConfig(epochs=50, seed=0, **SYNTH_TRAIN)
    return train(synth.network, synth_split, cfg, vocab_size=len(synth.vocab), word_vectors=synth.word_vectors)


@pytest.fixture(scope="session")
def synth_model(synth_run):
    return synth_run.model


# -- acceptance summary: one line per criterion-marked test

_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
        detail = "; ".join(v for k, v in item.user_properties if k == "detail")
        _CRITERIA.append((marker.args[0], status, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n, status, detail in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {detail}")
