import pytest

from gpslab.free_energy import tilted_law
from gpslab.loop_law import KernelSpec, build_loop_law, delta_law, two_point_law


@pytest.fixture(scope="session")
def two_point():
    return two_point_law(0.5)


@pytest.fixture(scope="session")
def delta():
    return delta_law()


@pytest.fixture(scope="session")
def law05():
    return build_loop_law(KernelSpec(alpha=0.5, analytic_tail=True))


@pytest.fixture(scope="session")
def law15():
    return build_loop_law(KernelSpec(alpha=1.5, analytic_tail=True))


@pytest.fixture(scope="session")
def tl05(law05):
    return tilted_law(law05, 1.0)


@pytest.fixture(scope="session")
def tl15(law15):
    return tilted_law(law15, 1.0)


@pytest.fixture(scope="session")
def tl_two(two_point):
    return tilted_law(two_point, 1.0)


_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_lines():
    return _ACCEPTANCE_LINES


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (slow)")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
