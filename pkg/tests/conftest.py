import pytest

from gpuiso.devices import get_device


@pytest.fixture(scope="session")
def a100():
    return get_device("a100")


@pytest.fixture(scope="session")
def nano():
    return get_device("orin-nano")


@pytest.fixture(scope="session")
def agx():
    return get_device("orin-agx")


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
