import numpy as np
import pytest

from phaseless.extract import ObservablesTable
from phaseless.forward import linearized_observables
from phaseless.geometry import BallConfig, chord_grid
from phaseless.phantom import single_bump

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance(request):
    """Recorder for acceptance verdicts, printed in the terminal summary."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def record(number, title, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}  ({detail})"
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def ball():
    return BallConfig(1.0, 0.8, 32)


@pytest.fixture(scope="session")
def centred_bump(ball):
    return single_bump(ball)


@pytest.fixture(scope="session")
def offset_bump(ball):
    return single_bump(ball, center=(0.1, -0.05, 0.05))


def linearized_table(phantom, n_z, n_alpha, n_s):
    chords = chord_grid(phantom.cfg, n_z, n_alpha, n_s)
    tau, A, _ = linearized_observables(phantom, chords.x, chords.y)
    return ObservablesTable.from_chords(chords, tau, A, tau == chords.dist)


@pytest.fixture(scope="session")
def small_table(centred_bump):
    return linearized_table(centred_bump, 8, 64, 64)


@pytest.fixture(scope="session")
def offset_table(offset_bump):
    return linearized_table(offset_bump, 8, 64, 64)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
