import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from vjepa_fer.videodata.synthetic import SynthConfig, gen_synthetic


@pytest.fixture(autouse=True, scope="session")
def _single_thread_blas():
    # results are only bit-reproducible with a fixed BLAS reduction order
    with threadpool_limits(1):
        yield


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """Default 3-class / 10-subject synthetic set, generated once per session."""
    out = tmp_path_factory.mktemp("synth")
    manifest, records = gen_synthetic(out, SynthConfig())
    return manifest, records


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
