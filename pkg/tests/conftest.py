import numpy as np
import pytest

from swb._backend import available

_VERDICTS = []


@pytest.fixture(params=available(), ids=lambda k: k.NAME)
def kernels(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def verdict():
    """``verdict(number, ok, detail)`` records and prints one PASS/FAIL line."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS.append((number, line))
        print(line)
        return ok

    return record


def pytest_report_header(config):
    return "swb kernels: " + ", ".join(k.NAME for k in available())


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
