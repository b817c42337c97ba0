import pytest
import torch

from scgan.networks import write_reference_weights
from scgan.toy import make_toy_corpus

ACCEPTANCE_RESULTS = []


@pytest.fixture(scope="session")
def reference_weights(tmp_path_factory):
    """Seeded random VGG19 weights standing in for the pretrained file."""
    return write_reference_weights(tmp_path_factory.mktemp("vgg") / "vgg19_seed0.pt", seed=0)


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    return make_toy_corpus(tmp_path_factory.mktemp("corpus"), n_a=4, n_b=4, size=64, seed=0)


@pytest.fixture
def rng():
    return torch.Generator().manual_seed(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"criterion {number} [{'PASS' if passed else 'FAIL'}] {name}: {detail}")
