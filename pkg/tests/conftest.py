import numpy as np
import pytest

from spikezip import data


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def two_unit_sequence():
    templates = data.standard_templates(2, 64, seed=1)
    return data.generate(templates, 0.1, [20, 20], 10.0, seed=0)


@pytest.fixture(scope="session")
def two_unit_batch(two_unit_sequence):
    return data.ground_truth_batch(two_unit_sequence)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
