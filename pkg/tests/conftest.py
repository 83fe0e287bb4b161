import numpy as np
import pytest

from bcmspeed import ControlBasis, ScenarioSpec, build_dataset, make_scenario


@pytest.fixture(scope="session")
def test1_medium():
    return make_scenario(ScenarioSpec("test1"), h=1 / 32)


@pytest.fixture(scope="session")
def small_ds(test1_medium):
    """Coarse Test-1 dataset with the interior-product block."""
    return build_dataset(test1_medium, ControlBasis(8, 8, 1.0), oracle=True)


@pytest.fixture(scope="session")
def homogeneous_medium():
    return make_scenario(ScenarioSpec("custom", params={"c0": 1.0}), h=1 / 32)


@pytest.fixture(scope="session")
def homogeneous_ds(homogeneous_medium):
    return build_dataset(homogeneous_medium, ControlBasis(8, 8, 1.0), oracle=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_RESULTS = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance(request):
    """Record one result line per criterion; all lines are repeated in the terminal summary."""
    lines = request.config.stash.setdefault(_RESULTS, [])

    def record(number, title, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_RESULTS, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
