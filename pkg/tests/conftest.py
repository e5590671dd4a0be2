import numpy as np
import pytest

from mvmol.tensor import set_check_finite, set_debug

ACCEPTANCE_LINES = []


@pytest.fixture(autouse=True, scope="session")
def _strict_numerics():
    """Every op checks for NaN/Inf and attention asserts its row sums during tests."""
    set_check_finite(True)
    set_debug(True)
    yield
    set_debug(False)
    set_check_finite(False)


@pytest.fixture
def gen():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiny():
    """Small float64 model with its 12-molecule corpus; tests must not train it in place."""
    from mvmol.pipeline.gradsuite import tiny_setup

    return tiny_setup(batch=3, seed=0)


@pytest.fixture(scope="session")
def tiny32():
    """The same architecture in float32, for invariance checks at storage precision."""
    from mvmol.model import MVMol, model_vocab
    from mvmol.pipeline.gradsuite import TINY, tiny_setup

    _, corpus = tiny_setup(batch=3, seed=0)
    return MVMol(model_vocab(corpus.all_texts(), corpus.molecules), TINY), corpus
