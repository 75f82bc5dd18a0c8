import numpy as np
import pytest

from pyrabow.synthetic import make_grating_corpus


@pytest.fixture(scope="session")
def grating_corpus(tmp_path_factory):
    """The 3-class, 60-per-class, 64x64 grating corpus used end to end."""
    return make_grating_corpus(tmp_path_factory.mktemp("gratings") / "corpus")


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    return make_grating_corpus(tmp_path_factory.mktemp("small") / "corpus", per_class=12, size=48)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
