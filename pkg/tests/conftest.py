import itertools
import time

import pytest

from uwstack.emulators.channel import ChannelConfig, VirtualMedium

_names = itertools.count()


def wait_until(pred, timeout=5.0, step=0.005):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if pred():
            return True
        time.sleep(step)
    return pred()


@pytest.fixture
def pipe_name():
    return f"t{next(_names)}-{time.monotonic_ns()}"


@pytest.fixture
def medium_factory():
    made = []

    def make(**kw):
        seed = kw.pop("seed", 7)
        m = VirtualMedium(ChannelConfig(**kw), name=f"m{next(_names)}", seed=seed)
        made.append(m)
        return m

    yield make
    for m in made:
        m.close()


def pytest_terminal_summary(terminalreporter, config):
    lines = config.__dict__.get("acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
