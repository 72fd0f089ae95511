import numpy as np
import pytest
from hypothesis import settings

from eegmobile.fixtures import make_corpus

settings.register_profile("default", deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    """Two subjects, one night each, ten scored epochs per night."""
    out = tmp_path_factory.mktemp("corpus")
    make_corpus(out, n_subjects=2, nights=(1,), epochs_per_night=10, seed=3)
    return out


@pytest.fixture(scope="session")
def corpus4_dir(tmp_path_factory):
    """Four subjects with two nights each and some unscored epochs."""
    out = tmp_path_factory.mktemp("corpus4")
    make_corpus(out, n_subjects=4, nights=(1, 2), epochs_per_night=12, seed=5, excluded_per_night=2)
    return out


# -- acceptance verdicts ---------------------------------------------------------

_VERDICTS: dict[str, str] = {}


@pytest.fixture(scope="session")
def criterion():
    """``criterion(tag, ok, detail)`` records a verdict and returns `ok`.

    Pass ``ok=None`` for a criterion that could not run here.
    """

    def record(tag: str, ok, detail: str = ""):
        word = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        _VERDICTS[tag] = f"{tag} {word} {detail}".rstrip()
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for tag in sorted(_VERDICTS, key=lambda t: int(t[2:])):
        terminalreporter.write_line(_VERDICTS[tag])
