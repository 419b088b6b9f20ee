import pytest

from servesim import _kernels
from servesim.hw import nvlink_system
from servesim.model import DEEPSEEK_R1, GPT3
from servesim.parallel import default_plan

ACCEPTANCE_LINES: list[str] = []


def report(criterion: str, ok: bool, detail: str) -> None:
    """Record one acceptance line; printed in the terminal summary."""
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(params=_kernels.available_backends())
def backend(request):
    old = _kernels.get_backend()
    _kernels.set_backend(request.param)
    yield request.param
    _kernels.set_backend(old)


@pytest.fixture
def ds():
    return DEEPSEEK_R1


@pytest.fixture
def gpt3():
    return GPT3


@pytest.fixture
def sys32():
    return nvlink_system(32)


@pytest.fixture
def sys1():
    return nvlink_system(1)


@pytest.fixture
def ds_plan(ds, sys32):
    return default_plan(ds, sys32)
